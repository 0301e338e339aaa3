//! Classical spin model whose partition function equals the noisy fidelity.
//!
//! Spin `s_i = +1` marks that generator `g_i` is present in the stabilizer.
//! The Pauli letter at site `i` is fixed by `s_i` and by the parity of up
//! spins among its neighbors:
//!
//! | `s_i` | up-neighbor parity | letter |
//! |-------|--------------------|--------|
//! | +1    | even               | X      |
//! | +1    | odd                | Y      |
//! | -1    | odd                | Z      |
//! | -1    | even               | I      |

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numeric::log_sum_exp;
use crate::pauli::{
    NoiseModel, WeightHistogram, WeightTriple, DEFAULT_ENUMERATION_CAP, MAX_ENUMERATION_CAP,
};

/// Ising spins `+1` / `-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(s) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::Numerical(format!("spin value {s} is not +1 or -1")));
        }
        Ok(Self { spins })
    }

    /// All spins down: the identity stabilizer.
    pub fn all_down(n: usize) -> Self {
        Self { spins: vec![-1; n] }
    }

    /// `s_i = 2 l_i - 1`.
    pub fn from_bits(bits: &[bool]) -> Self {
        Self {
            spins: bits.iter().map(|&b| if b { 1 } else { -1 }).collect(),
        }
    }

    /// Bit `i` of `mask` becomes spin `i`.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        Self {
            spins: (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect(),
        }
    }

    pub fn to_bits(&self) -> Vec<bool> {
        self.spins.iter().map(|&s| s == 1).collect()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    #[inline]
    pub fn is_up(&self, i: usize) -> bool {
        self.spins[i] == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.spins[i] = -self.spins[i];
    }
}

/// Numbers of X, Y, Z and I letters; always sums to `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TermCounts {
    pub mx: usize,
    pub my: usize,
    pub mz: usize,
    pub mi: usize,
}

impl TermCounts {
    pub fn weight(&self) -> WeightTriple {
        WeightTriple::new(self.mx, self.my, self.mz)
    }
}

/// Couplings, inverse temperature and energy offset of the mapped model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams {
    pub beta: f64,
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    /// Energy offset `c = -(n/beta) ln(1-p)`; infinite at `beta = 0`.
    pub c: f64,
    pub n: usize,
    log_one_minus_p: f64,
}

impl CouplingParams {
    /// Depolarizing couplings `J = 1` at an explicit inverse temperature.
    /// `p` follows from `beta` via `p = 3 / (3 + e^beta)`.
    pub fn depolarizing_at_beta(beta: f64, n: usize) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::MappingUndefined(format!("beta = {beta}")));
        }
        let p = crate::numeric::depolarizing_p(beta);
        let log_one_minus_p = (1.0 - p).ln();
        Ok(Self {
            beta,
            jx: 1.0,
            jy: 1.0,
            jz: 1.0,
            c: -(n as f64) * log_one_minus_p / beta,
            n,
            log_one_minus_p,
        })
    }

    /// Same couplings at a different inverse temperature. The offset is
    /// dropped (set to NaN) because it no longer refers to a noise model.
    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            beta,
            c: f64::NAN,
            log_one_minus_p: f64::NAN,
            ..*self
        }
    }

    /// `-beta * c = n ln(1-p)`, finite even where `c` is not.
    pub fn log_offset_weight(&self) -> f64 {
        self.n as f64 * self.log_one_minus_p
    }

    /// True when some coupling is negative, so the all-down state is no
    /// longer the ground state.
    pub fn has_negative_coupling(&self) -> bool {
        self.beta * self.jx < 0.0 || self.beta * self.jy < 0.0 || self.beta * self.jz < 0.0
    }

    pub fn is_isotropic(&self) -> bool {
        self.jx == self.jy && self.jy == self.jz
    }

    #[inline]
    pub fn energy_of(&self, w: WeightTriple) -> f64 {
        self.jx * w.mx as f64 + self.jy * w.my as f64 + self.jz * w.mz as f64
    }

    /// Per-site energy indexed by `[up][odd_parity]`.
    #[inline]
    pub fn site_costs(&self) -> [[f64; 2]; 2] {
        [[0.0, self.jz], [self.jx, self.jy]]
    }
}

/// `beta J_mu = ln((1-p)/p_mu)` with `J_x = 1`, and `c = -(n/beta) ln(1-p)`.
pub fn coupling_from_noise(noise: &NoiseModel, n: usize) -> Result<CouplingParams> {
    let p = noise.p();
    if noise.px() <= 0.0 || noise.py() <= 0.0 || noise.pz() <= 0.0 {
        return Err(Error::MappingUndefined(format!(
            "a Pauli component is zero (px={}, py={}, pz={})",
            noise.px(),
            noise.py(),
            noise.pz()
        )));
    }
    if p >= 1.0 {
        return Err(Error::MappingUndefined(format!("p = {p}")));
    }
    let log_one_minus_p = (1.0 - p).ln();
    let bjx = log_one_minus_p - noise.px().ln();
    let bjy = log_one_minus_p - noise.py().ln();
    let bjz = log_one_minus_p - noise.pz().ln();
    let (beta, jx, jy, jz) = if noise.is_depolarizing() {
        (bjx, 1.0, 1.0, 1.0)
    } else if bjx == 0.0 {
        return Err(Error::MappingUndefined(
            "beta = 0 with anisotropic noise leaves the coupling ratios undefined".into(),
        ));
    } else {
        (bjx, 1.0, bjy / bjx, bjz / bjx)
    };
    Ok(CouplingParams {
        beta,
        jx,
        jy,
        jz,
        c: -(n as f64) * log_one_minus_p / beta,
        n,
        log_one_minus_p,
    })
}

fn check_len(g: &Graph, cfg: &SpinConfig) -> Result<()> {
    if cfg.len() != g.n() {
        return Err(Error::LengthMismatch {
            expected: g.n(),
            got: cfg.len(),
        });
    }
    Ok(())
}

/// Parity (0 even, 1 odd) of up spins among the neighbors of `i`.
#[inline]
fn up_parity(g: &Graph, cfg: &SpinConfig, i: usize) -> usize {
    g.neighbors(i)
        .iter()
        .fold(0u8, |acc, &j| acc ^ u8::from(cfg.is_up(j))) as usize
}

pub fn term_counts(g: &Graph, cfg: &SpinConfig) -> Result<TermCounts> {
    check_len(g, cfg)?;
    let mut tc = TermCounts::default();
    for i in 0..g.n() {
        match (cfg.is_up(i), up_parity(g, cfg, i)) {
            (true, 0) => tc.mx += 1,
            (true, _) => tc.my += 1,
            (false, 0) => tc.mi += 1,
            (false, _) => tc.mz += 1,
        }
    }
    Ok(tc)
}

/// `H = J_x H_X + J_y H_Y + J_z H_Z`.
pub fn energy(g: &Graph, cfg: &SpinConfig, cp: &CouplingParams) -> Result<f64> {
    Ok(cp.energy_of(term_counts(g, cfg)?.weight()))
}

/// Energy change from flipping spin `i`. Only the site terms of `i` and of
/// its neighbors are touched.
pub fn local_energy_delta(
    g: &Graph,
    cfg: &SpinConfig,
    i: usize,
    cp: &CouplingParams,
) -> Result<f64> {
    check_len(g, cfg)?;
    if i >= g.n() {
        return Err(Error::InvalidSite { site: i, n: g.n() });
    }
    let cost = cp.site_costs();
    let up_i = usize::from(cfg.is_up(i));
    let par_i = up_parity(g, cfg, i);
    let mut delta = cost[1 - up_i][par_i] - cost[up_i][par_i];
    for &j in g.neighbors(i) {
        let up_j = usize::from(cfg.is_up(j));
        let par_j = up_parity(g, cfg, j);
        delta += cost[up_j][par_j ^ 1] - cost[up_j][par_j];
    }
    Ok(delta)
}

/// Partition function of the mapped model, `sum_w e^{-beta (E(w) + c)} N_F(w)`,
/// which equals the fidelity.
pub fn fidelity_from_histogram(hist: &WeightHistogram, noise: &NoiseModel) -> Result<f64> {
    hist.validate()?;
    let cp = coupling_from_noise(noise, hist.n())?;
    Ok(log_partition_function(hist, &cp).exp())
}

/// `ln Z = ln sum_w N_F(w) e^{-beta E(w)} + n ln(1-p)`.
pub fn log_partition_function(hist: &WeightHistogram, cp: &CouplingParams) -> f64 {
    let terms: Vec<f64> = hist
        .iter()
        .map(|(w, c)| (c as f64).ln() - cp.beta * cp.energy_of(w))
        .collect();
    log_sum_exp(&terms) + cp.log_offset_weight()
}

/// Histogram of `(mx, my, mz)` over all `2^n` spin configurations, counted
/// through [`term_counts`] rather than Pauli algebra.
pub fn spin_histogram(g: &Graph) -> Result<WeightHistogram> {
    spin_histogram_with_cap(g, DEFAULT_ENUMERATION_CAP)
}

pub fn spin_histogram_with_cap(g: &Graph, cap: usize) -> Result<WeightHistogram> {
    let n = g.n();
    let cap = cap.min(MAX_ENUMERATION_CAP);
    if n > cap {
        return Err(Error::EnumerationCap { n, cap });
    }
    let side = n + 1;
    let dense = (0u64..1 << n)
        .into_par_iter()
        .fold(
            || vec![0u64; side * side * side],
            |mut acc, mask| {
                let cfg = SpinConfig::from_mask(n, mask);
                let tc = term_counts(g, &cfg).expect("length matches by construction");
                acc[(tc.mx * side + tc.my) * side + tc.mz] += 1;
                acc
            },
        )
        .reduce(
            || vec![0u64; side * side * side],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(WeightHistogram::from_dense(n, &dense))
}
