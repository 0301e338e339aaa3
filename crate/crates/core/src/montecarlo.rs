//! Metropolis sampling of the mapped spin model.
//!
//! The chain keeps, next to the spins, the parity of up neighbours of every
//! site. A flip of spin `i` changes the letter at `i` (X<->I or Y<->Z) and
//! toggles the parity of each neighbour, so the energy change costs
//! `O(deg i)`.
//!
//! Fidelities come from thermodynamic integration of `<E>` over `beta`.
//! Every grid node runs a cold chain, annealed down from the ordered end,
//! and a hot chain, annealed up from `beta = 0`. Normally both sample the
//! same phase and `ln Z'` is integrated up from `Z'(0) = 2^n`.
//!
//! At a first-order transition the pooled energies of a node split into two
//! classes. Each phase then gets its own branch: the disordered one is
//! integrated up from `beta = 0`, the ordered one down from large `beta`
//! where `Z' -> 1` (for positive couplings the all-down state is the only
//! zero-energy configuration). Inside that window the equilibrium values are
//! the mixture of both phases weighted by their partition functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mapping::{coupling_from_noise, energy, CouplingParams, SpinConfig};
use crate::numeric::{depolarizing_beta, log_sum_exp};
use crate::pauli::NoiseModel;
use crate::sweep::{Method, SweepRow};

/// Sweeps between full energy recomputations.
const RESYNC_EVERY: usize = 1000;
const DRIFT_TOL: f64 = 1e-8;
/// Burn-in may grow by doubling up to this multiple of the requested length.
const MAX_BURN_IN_FACTOR: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MCConfig {
    /// Measurement sweeps; one sweep is `n` proposed flips.
    pub sweeps: usize,
    pub burn_in: usize,
    /// Sweeps between recorded samples.
    pub thin: usize,
    pub seed: u64,
    /// Bins for error analysis.
    pub bins: usize,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            sweeps: 100_000,
            burn_in: 20_000,
            thin: 2,
            seed: 0,
            bins: 32,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be >= 2 (got {})", self.bins)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.sweeps < self.bins {
            return Err(Error::Config(format!(
                "sweeps ({}) must be >= bins ({})",
                self.sweeps, self.bins
            )));
        }
        if self.sweeps / self.thin < 2 * self.bins {
            return Err(Error::Config(format!(
                "sweeps/thin = {} samples is fewer than 2 * bins = {}",
                self.sweeps / self.thin,
                2 * self.bins
            )));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.sweeps / self.thin
    }
}

/// How a chain is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    /// All spins down, the zero-energy state for positive couplings.
    Cold,
    /// Independent uniform spins.
    Hot,
}

/// Mean with a binning standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl ObservableEstimate {
    pub fn exact(mean: f64) -> Self {
        Self {
            mean,
            std_error: 0.0,
            n_samples: 0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std_error: self.std_error * factor.abs(),
            n_samples: self.n_samples,
        }
    }
}

/// Energy series of one chain and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub samples: Vec<f64>,
    pub acceptance: f64,
    pub burn_in_sweeps: usize,
    /// False if the burn-in ceiling was reached before the two halves of a
    /// block agreed.
    pub burned_in: bool,
    pub start: Start,
}

/// Mutable spin state of one chain.
pub struct Chain<'g> {
    graph: &'g Graph,
    up: Vec<u8>,
    parity: Vec<u8>,
    energy: f64,
    cost: [[f64; 2]; 2],
    beta: f64,
    /// `exp(-beta * k)` for integer energy changes when all couplings are 1.
    boltzmann: Option<Vec<f64>>,
    rng: ChaCha8Rng,
    proposed: u64,
    accepted: u64,
}

impl<'g> Chain<'g> {
    pub fn new(graph: &'g Graph, cp: &CouplingParams, seed: u64, stream: u64, start: Start) -> Self {
        Self::build(graph, cp, seed, stream, start, None)
    }

    /// Chain starting from given up-spin indicators (one byte per site, 0 or
    /// 1), e.g. the final state of a neighbouring temperature.
    pub fn from_state(
        graph: &'g Graph,
        cp: &CouplingParams,
        seed: u64,
        stream: u64,
        up: Vec<u8>,
    ) -> Result<Self> {
        if up.len() != graph.n() {
            return Err(Error::LengthMismatch {
                expected: graph.n(),
                got: up.len(),
            });
        }
        if up.iter().any(|&u| u > 1) {
            return Err(Error::MonteCarlo("spin state bytes must be 0 or 1".into()));
        }
        Ok(Self::build(graph, cp, seed, stream, Start::Cold, Some(up)))
    }

    fn build(
        graph: &'g Graph,
        cp: &CouplingParams,
        seed: u64,
        stream: u64,
        start: Start,
        state: Option<Vec<u8>>,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n = graph.n();
        let up: Vec<u8> = match (state, start) {
            (Some(up), _) => up,
            (None, Start::Cold) => vec![0; n],
            (None, Start::Hot) => (0..n).map(|_| u8::from(rng.random::<bool>())).collect(),
        };
        let boltzmann = (cp.jx == 1.0 && cp.jy == 1.0 && cp.jz == 1.0).then(|| {
            (0..=graph.max_degree() + 1)
                .map(|k| (-cp.beta * k as f64).exp())
                .collect()
        });
        let mut chain = Self {
            graph,
            parity: vec![0; n],
            up,
            energy: 0.0,
            cost: cp.site_costs(),
            beta: cp.beta,
            boltzmann,
            rng,
            proposed: 0,
            accepted: 0,
        };
        chain.recompute();
        chain
    }

    fn recompute(&mut self) -> f64 {
        let g = self.graph;
        let mut e = 0.0;
        for i in 0..g.n() {
            let par = g.neighbors(i).iter().fold(0u8, |a, &j| a ^ self.up[j]);
            self.parity[i] = par;
            e += self.cost[self.up[i] as usize][par as usize];
        }
        self.energy = e;
        e
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn config(&self) -> SpinConfig {
        SpinConfig::from_bits(&self.up.iter().map(|&u| u == 1).collect::<Vec<_>>())
    }

    /// Energy change of flipping spin `i`, from cached parities.
    #[inline]
    pub fn delta(&self, i: usize) -> f64 {
        let u = self.up[i] as usize;
        let p = self.parity[i] as usize;
        let mut d = self.cost[1 - u][p] - self.cost[u][p];
        for &j in self.graph.neighbors(i) {
            let uj = self.up[j] as usize;
            let pj = self.parity[j] as usize;
            d += self.cost[uj][pj ^ 1] - self.cost[uj][pj];
        }
        d
    }

    #[inline]
    fn flip(&mut self, i: usize, d: f64) {
        self.up[i] ^= 1;
        for &j in self.graph.neighbors(i) {
            self.parity[j] ^= 1;
        }
        self.energy += d;
    }

    #[inline]
    fn accept(&mut self, d: f64) -> bool {
        if d <= 0.0 {
            return true;
        }
        let prob = match &self.boltzmann {
            Some(table) => table[d as usize],
            None => (-self.beta * d).exp(),
        };
        self.rng.random::<f64>() < prob
    }

    /// `n` single-spin Metropolis proposals at uniformly chosen sites.
    pub fn sweep(&mut self) {
        let n = self.graph.n();
        for _ in 0..n {
            let i = self.rng.random_range(0..n);
            let d = self.delta(i);
            self.proposed += 1;
            if self.accept(d) {
                self.accepted += 1;
                self.flip(i, d);
            }
        }
    }

    /// Recomputes the energy from scratch and fails if the running value
    /// drifted.
    pub fn resync(&mut self) -> Result<()> {
        let tracked = self.energy;
        let fresh = self.recompute();
        if (tracked - fresh).abs() > DRIFT_TOL * fresh.abs().max(1.0) {
            return Err(Error::MonteCarlo(format!(
                "energy drift {:e} (tracked {tracked}, recomputed {fresh})",
                tracked - fresh
            )));
        }
        Ok(())
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Runs `sweeps` sweeps, recording the energy every `thin` sweeps.
    fn record(&mut self, sweeps: usize, thin: usize, since_sync: &mut usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(sweeps / thin);
        for s in 1..=sweeps {
            self.sweep();
            *since_sync += 1;
            if *since_sync >= RESYNC_EVERY {
                self.resync()?;
                *since_sync = 0;
            }
            if s % thin == 0 {
                out.push(self.energy);
            }
        }
        Ok(out)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Means of `bins` consecutive equal blocks; a remainder at the start is
/// dropped.
fn bin_means(samples: &[f64], bins: usize) -> Vec<f64> {
    let size = samples.len() / bins;
    let skip = samples.len() - size * bins;
    samples[skip..].chunks_exact(size).map(mean).collect()
}

/// True if the two halves of `samples` agree on the mean within `k` standard
/// errors (each half binned into `bins / 2` blocks).
fn halves_agree(samples: &[f64], bins: usize, k: f64) -> bool {
    let half = samples.len() / 2;
    let b = (bins / 2).max(2);
    let (a, c) = (&samples[..half], &samples[half..2 * half]);
    if a.len() < b || c.len() < b {
        return true;
    }
    let err = |xs: &[f64]| {
        let m = bin_means(xs, b);
        let mu = mean(&m);
        (m.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (b * (b - 1)) as f64).sqrt()
    };
    let diff = (mean(a) - mean(c)).abs();
    let sigma = (err(a).powi(2) + err(c).powi(2)).sqrt();
    diff <= k * sigma || diff <= 1e-12 * mean(a).abs().max(1.0)
}

/// Runs one Metropolis chain from the given start.
///
/// Burn-in starts at `mc.burn_in` sweeps and doubles while the two halves
/// of the latest burn-in block disagree by more than 2 sigma, up to
/// `16 * mc.burn_in` in total.
pub fn run_chain_from(
    g: &Graph,
    cp: &CouplingParams,
    mc: &MCConfig,
    stream: u64,
    start: Start,
) -> Result<ChainRun> {
    mc.validate()?;
    let chain = Chain::new(g, cp, mc.seed, stream, start);
    Ok(drive(chain, cp, mc, start)?.0)
}

/// Burn-in and measurement; also returns the final spin state.
fn drive(mut chain: Chain<'_>, cp: &CouplingParams, mc: &MCConfig, start: Start) -> Result<(ChainRun, Vec<u8>)> {
    if !cp.beta.is_finite() {
        return Err(Error::MonteCarlo(format!("beta must be finite (got {})", cp.beta)));
    }
    let mut since_sync = 0;
    let mut burned = 0;
    let mut block = mc.burn_in;
    let mut burned_in = mc.burn_in == 0;
    while !burned_in {
        let series = chain.record(block, 1, &mut since_sync)?;
        burned += block;
        if halves_agree(&series, mc.bins, 2.0) {
            burned_in = true;
        } else if burned + 2 * block > MAX_BURN_IN_FACTOR * mc.burn_in {
            break;
        } else {
            block *= 2;
        }
    }

    let samples = chain.record(mc.sweeps, mc.thin, &mut since_sync)?;
    chain.resync()?;
    let run = ChainRun {
        samples,
        acceptance: chain.acceptance(),
        burn_in_sweeps: burned,
        burned_in,
        start,
    };
    Ok((run, chain.up))
}

/// Cold-start chain on RNG stream 0.
pub fn run_chain(g: &Graph, cp: &CouplingParams, mc: &MCConfig) -> Result<ChainRun> {
    run_chain_from(g, cp, mc, 0, Start::Cold)
}

/// Energy and specific heat (`beta^2 Var E`) of a whole-system series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalEstimate {
    pub energy: ObservableEstimate,
    pub specific_heat: ObservableEstimate,
}

/// Binned mean energy and jackknife specific heat from an energy series.
pub fn estimate_observables(samples: &[f64], beta: f64, bins: usize) -> Result<ThermalEstimate> {
    if bins < 2 || samples.len() < 2 * bins {
        return Err(Error::MonteCarlo(format!(
            "need at least 2 * bins = {} samples (got {})",
            2 * bins,
            samples.len()
        )));
    }
    let size = samples.len() / bins;
    let used = &samples[samples.len() - size * bins..];
    let nb = bins as f64;

    let sums: Vec<(f64, f64)> = used
        .chunks_exact(size)
        .map(|c| c.iter().fold((0.0, 0.0), |(s, q), &x| (s + x, q + x * x)))
        .collect();
    let total = used.len() as f64;
    let (s_all, q_all) = sums.iter().fold((0.0, 0.0), |(s, q), &(a, b)| (s + a, q + b));
    let e_mean = s_all / total;
    let var = |s: f64, q: f64, m: f64| (q / m - (s / m).powi(2)).max(0.0);
    let c_all = beta * beta * var(s_all, q_all, total);

    let bin_e: Vec<f64> = sums.iter().map(|&(s, _)| s / size as f64).collect();
    let e_err = (bin_e.iter().map(|x| (x - e_mean).powi(2)).sum::<f64>() / (nb * (nb - 1.0))).sqrt();

    // Leave-one-bin-out jackknife for the fluctuation estimator.
    let rest = total - size as f64;
    let jack: Vec<f64> = sums
        .iter()
        .map(|&(s, q)| beta * beta * var(s_all - s, q_all - q, rest))
        .collect();
    let jack_mean = mean(&jack);
    let c_err = ((nb - 1.0) / nb * jack.iter().map(|x| (x - jack_mean).powi(2)).sum::<f64>()).sqrt();

    Ok(ThermalEstimate {
        energy: ObservableEstimate {
            mean: e_mean,
            std_error: e_err,
            n_samples: used.len(),
        },
        specific_heat: ObservableEstimate {
            mean: c_all,
            std_error: c_err,
            n_samples: used.len(),
        },
    })
}

/// Full-recompute check used by tests: energy of the chain's current
/// configuration through the reference implementation.
pub fn reference_energy(chain: &Chain<'_>, cp: &CouplingParams) -> Result<f64> {
    energy(chain.graph, &chain.config(), cp)
}

// ---------------------------------------------------------------------------
// Thermodynamic integration

const HOT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Largest spacing of the initial beta grid.
const BASE_SPACING: f64 = 0.25;
const MAX_REFINE_ROUNDS: usize = 8;
const MIN_SPACING: f64 = 1e-3;
/// Crossings and the edges of a coexistence window are refined down to
/// this width in beta.
const CROSSING_SPACING: f64 = 0.01;
/// Discretisation budget on `ln Z'`, per qubit.
const TI_TOL_PER_QUBIT: f64 = 1e-3;
/// Phase separation requires the two energy classes to differ by this much
/// per qubit and by this many within-class standard deviations.
const SPLIT_PER_QUBIT: f64 = 0.05;
const SPLIT_SIGMAS: f64 = 6.0;
/// Minimum share of pooled samples in the minority phase.
const MIN_PHASE_FRACTION: f64 = 0.02;
/// Smaller systems are never split into phases.
const MIN_PHASE_SITES: usize = 64;
const OTSU_BINS: usize = 256;
/// The ordered branch starts where single-flip excitations are suppressed
/// by `exp(-TAIL_DECAYS)`.
const TAIL_DECAYS: f64 = 16.0;

/// One-line summary of the integration scheme and its fixed parameters,
/// recorded in output metadata.
pub fn scheme_description() -> String {
    format!(
        "two-branch thermodynamic integration; cold chain annealed down from beta_top, hot chain annealed up from 0; \
         base spacing {BASE_SPACING}, min spacing {MIN_SPACING}, crossing spacing {CROSSING_SPACING}, \
         refine rounds <= {MAX_REFINE_ROUNDS}, tolerance {TI_TOL_PER_QUBIT}*n; \
         phase split: otsu {OTSU_BINS} bins, n >= {MIN_PHASE_SITES}, gap > max({SPLIT_PER_QUBIT}*n, {SPLIT_SIGMAS} sd), \
         minority >= {MIN_PHASE_FRACTION}; tail anchor exp(-{TAIL_DECAYS}); resync every {RESYNC_EVERY} sweeps; \
         burn-in doubling up to {MAX_BURN_IN_FACTOR}x; rng chacha8, stream = beta bits, hot seed = seed ^ {HOT_SEED_SALT:#x}"
    )
}

/// Phase-resolved averages at a node where the pooled energy distribution
/// is bimodal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSplit {
    /// Energy separating the two classes.
    pub threshold: f64,
    pub ordered: ThermalEstimate,
    pub disordered: ThermalEstimate,
    pub ordered_fraction: f64,
}

/// Cold and hot chains at one inverse temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRun {
    pub beta: f64,
    pub cold: ThermalEstimate,
    pub hot: ThermalEstimate,
    /// Both chains together.
    pub pooled: ThermalEstimate,
    pub phases: Option<PhaseSplit>,
    pub cold_burned_in: bool,
    pub hot_burned_in: bool,
    /// Raw energy series `[cold, hot]`, kept only on request.
    pub samples: Option<[Vec<f64>; 2]>,
    cold_state: Vec<u8>,
    hot_state: Vec<u8>,
}

/// A first-order crossing: the ordered and disordered free energies are
/// equal at `beta` and the equilibrium energy jumps by `latent_heat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coexistence {
    pub beta: f64,
    /// `E_disordered - E_ordered`, whole system.
    pub latent_heat: ObservableEstimate,
    /// Equal-weight mixture specific heat, whole system; the maximum of the
    /// equilibrium curve across the crossing.
    pub specific_heat: ObservableEstimate,
}

/// Thermodynamic-integration grid and derived equilibrium estimates. All
/// extensive quantities are whole-system totals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationGrid {
    pub n: usize,
    /// Ascending, `betas[0] = 0`.
    pub betas: Vec<f64>,
    pub energies: Vec<ObservableEstimate>,
    pub specific_heats: Vec<ObservableEstimate>,
    /// `ln Z'` per node.
    pub log_z: Vec<ObservableEstimate>,
    /// Node lies inside a window where both phases were observed; its
    /// values are the free-energy weighted phase mixture.
    pub metastable: Vec<bool>,
    /// `n ln 2`.
    pub log_z0: f64,
    /// Whether the ordered branch (anchored at large beta) was used.
    pub ordered_branch: bool,
    /// Estimated trapezoid error on `ln Z'` not covered by statistical
    /// errors.
    pub discretisation_error: f64,
    pub coexistence: Vec<Coexistence>,
    pub nodes: Vec<NodeRun>,
}

impl IntegrationGrid {
    pub fn node_index(&self, beta: f64) -> Option<usize> {
        self.betas.iter().position(|&b| b == beta)
    }

    /// Largest specific heat over all nodes and branch crossings, with the
    /// inverse temperature where it occurs.
    pub fn specific_heat_peak(&self) -> (f64, ObservableEstimate) {
        let nodes = self.betas.iter().copied().zip(self.specific_heats.iter().copied());
        let crossings = self.coexistence.iter().map(|c| (c.beta, c.specific_heat));
        nodes
            .chain(crossings)
            .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .expect("grid has at least one node")
    }
}

/// Energy and fluctuation specific heat of the samples accepted by `keep`,
/// pooled over several series, with leave-one-bin-out jackknife errors
/// (`bins` bins per series). `None` if fewer than `min_count` samples are
/// kept.
fn ratio_estimate(
    series: &[&[f64]],
    beta: f64,
    bins: usize,
    min_count: usize,
    keep: impl Fn(f64) -> bool,
) -> Option<ThermalEstimate> {
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for s in series {
        let size = s.len() / bins;
        if size == 0 {
            continue;
        }
        let used = &s[s.len() - size * bins..];
        blocks.extend(used.chunks_exact(size).map(|c| {
            c.iter().filter(|&&x| keep(x)).fold((0.0, 0.0, 0.0), |(a, q, m), &x| (a + x, q + x * x, m + 1.0))
        }));
    }
    let (s_all, q_all, m_all) = blocks
        .iter()
        .fold((0.0, 0.0, 0.0), |(a, q, m), b| (a + b.0, q + b.1, m + b.2));
    if m_all < min_count.max(2) as f64 || blocks.len() < 2 {
        return None;
    }
    let stats = |s: f64, q: f64, m: f64| {
        let e = s / m;
        (e, beta * beta * (q / m - e * e).max(0.0))
    };
    let (e_all, c_all) = stats(s_all, q_all, m_all);
    let jack: Vec<(f64, f64)> = blocks
        .iter()
        .filter(|b| m_all - b.2 > 0.0)
        .map(|b| stats(s_all - b.0, q_all - b.1, m_all - b.2))
        .collect();
    let nb = jack.len() as f64;
    let spread = |f: fn(&(f64, f64)) -> f64| {
        let mu = jack.iter().map(f).sum::<f64>() / nb;
        ((nb - 1.0) / nb * jack.iter().map(|j| (f(j) - mu).powi(2)).sum::<f64>()).sqrt()
    };
    let count = m_all as usize;
    Some(ThermalEstimate {
        energy: ObservableEstimate {
            mean: e_all,
            std_error: spread(|j| j.0),
            n_samples: count,
        },
        specific_heat: ObservableEstimate {
            mean: c_all,
            std_error: spread(|j| j.1),
            n_samples: count,
        },
    })
}

/// Otsu threshold: the cut maximising the between-class variance of a
/// histogram of `xs`.
fn otsu_threshold(xs: &[f64]) -> Option<f64> {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut hist = [0.0f64; OTSU_BINS];
    for &x in xs {
        hist[(((x - lo) / width) as usize).min(OTSU_BINS - 1)] += 1.0;
    }
    let centre = |i: usize| lo + (i as f64 + 0.5) * width;
    let total: f64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, h)| h * centre(i)).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, None);
    for (i, &h) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += h;
        s0 += h * centre(i);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let between = w0 * w1 * (s0 / w0 - (sum_all - s0) / w1).powi(2);
        if between > best.0 {
            best = (between, Some(lo + (i + 1) as f64 * width));
        }
    }
    best.1
}

fn split_phases(series: &[&[f64]], beta: f64, bins: usize, n: usize) -> Option<PhaseSplit> {
    if n < MIN_PHASE_SITES {
        return None;
    }
    let pooled: Vec<f64> = series.iter().flat_map(|s| s.iter().copied()).collect();
    let threshold = otsu_threshold(&pooled)?;
    let min_count = (MIN_PHASE_FRACTION * pooled.len() as f64).ceil() as usize;
    let ordered = ratio_estimate(series, beta, bins, min_count, |x| x < threshold)?;
    let disordered = ratio_estimate(series, beta, bins, min_count, |x| x >= threshold)?;
    let sep = disordered.energy.mean - ordered.energy.mean;
    // Within-class spread from the fluctuation estimate, sqrt(C) / beta.
    let spread = |t: &ThermalEstimate| {
        if beta > 0.0 {
            t.specific_heat.mean.sqrt() / beta
        } else {
            f64::INFINITY
        }
    };
    let wide = spread(&ordered).max(spread(&disordered));
    (sep > SPLIT_PER_QUBIT * n as f64 && sep > SPLIT_SIGMAS * wide).then(|| PhaseSplit {
        threshold,
        ordered,
        disordered,
        ordered_fraction: ordered.energy.n_samples as f64 / pooled.len() as f64,
    })
}

struct BranchRun {
    estimate: ThermalEstimate,
    burned_in: bool,
    samples: Vec<f64>,
    state: Vec<u8>,
}

/// One chain of a branch. Without `init`, the hot branch starts from
/// random spins and the cold branch from all spins down.
fn run_branch(
    g: &Graph,
    cp: &CouplingParams,
    mc: &MCConfig,
    beta: f64,
    start: Start,
    init: Option<Vec<u8>>,
) -> Result<BranchRun> {
    let at = cp.with_beta(beta);
    let seed = match start {
        Start::Cold => mc.seed,
        Start::Hot => mc.seed ^ HOT_SEED_SALT,
    };
    let stream = beta.to_bits();
    let chain = match init {
        Some(up) => Chain::from_state(g, &at, seed, stream, up)?,
        None => Chain::new(g, &at, seed, stream, start),
    };
    let (run, state) = drive(chain, &at, mc, start)?;
    Ok(BranchRun {
        estimate: estimate_observables(&run.samples, beta, mc.bins)?,
        burned_in: run.burned_in,
        samples: run.samples,
        state,
    })
}

fn node_from(beta: f64, n: usize, bins: usize, cold: BranchRun, hot: BranchRun, keep_samples: bool) -> NodeRun {
    let series = [cold.samples.as_slice(), hot.samples.as_slice()];
    let pooled = ratio_estimate(&series, beta, bins, 0, |_| true).expect("validated sample count");
    let phases = split_phases(&series, beta, bins, n);
    NodeRun {
        beta,
        cold: cold.estimate,
        hot: hot.estimate,
        pooled,
        phases,
        cold_burned_in: cold.burned_in,
        hot_burned_in: hot.burned_in,
        samples: keep_samples.then_some([cold.samples, hot.samples]),
        cold_state: cold.state,
        hot_state: hot.state,
    }
}

/// Initial pass: the hot chains anneal upward from `beta = 0`, the cold
/// chains downward from the top, each node starting from its
/// predecessor's final state.
fn anneal(
    g: &Graph,
    cp: &CouplingParams,
    mc: &MCConfig,
    betas: &[f64],
    keep_samples: bool,
) -> Result<Vec<NodeRun>> {
    let sequence = |start: Start, order: Vec<f64>| -> Result<Vec<BranchRun>> {
        let mut state = None;
        let mut out = Vec::with_capacity(order.len());
        for b in order {
            let run = run_branch(g, cp, mc, b, start, state.take())?;
            state = Some(run.state.clone());
            out.push(run);
        }
        Ok(out)
    };
    let (hot, cold) = rayon::join(
        || sequence(Start::Hot, betas.to_vec()),
        || sequence(Start::Cold, betas.iter().rev().copied().collect()),
    );
    let (hot, mut cold) = (hot?, cold?);
    cold.reverse();
    Ok(betas
        .iter()
        .zip(cold.into_iter().zip(hot))
        .map(|(&b, (c, h))| node_from(b, g.n(), mc.bins, c, h, keep_samples))
        .collect())
}

/// Trapezoid error of each interval from the local second derivative,
/// with the statistical error of that estimate.
fn interval_errors(betas: &[f64], v: &[ObservableEstimate]) -> Vec<(f64, f64)> {
    let k = betas.len();
    let second: Vec<Option<(f64, f64)>> = (0..k)
        .map(|j| {
            if j == 0 || j + 1 == k {
                return None;
            }
            let hl = betas[j] - betas[j - 1];
            let hr = betas[j + 1] - betas[j];
            let s = 2.0 / (hl + hr);
            let d2 = s * ((v[j + 1].mean - v[j].mean) / hr - (v[j].mean - v[j - 1].mean) / hl);
            let sig = s
                * ((v[j + 1].std_error / hr).powi(2)
                    + (v[j].std_error * (1.0 / hr + 1.0 / hl)).powi(2)
                    + (v[j - 1].std_error / hl).powi(2))
                .sqrt();
            Some((d2, sig))
        })
        .collect();
    (0..k.saturating_sub(1))
        .map(|j| {
            let h = betas[j + 1] - betas[j];
            let ends: Vec<(f64, f64)> = [second[j], second[j + 1]].into_iter().flatten().collect();
            if ends.is_empty() {
                return (0.0, 0.0);
            }
            let m = ends.len() as f64;
            let d2 = ends.iter().map(|e| e.0.abs()).fold(0.0, f64::max);
            let sig = ends.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt() / m;
            let f = h.powi(3) / 12.0;
            (f * d2, f * sig)
        })
        .collect()
}

fn lerp(a: ObservableEstimate, b: ObservableEstimate, t: f64) -> ObservableEstimate {
    ObservableEstimate {
        mean: a.mean + t * (b.mean - a.mean),
        std_error: ((1.0 - t) * a.std_error).hypot(t * b.std_error),
        n_samples: 0,
    }
}

/// Free energy of one phase on the nodes where that phase is known.
struct Branch {
    betas: Vec<f64>,
    thermal: Vec<ThermalEstimate>,
    log_z: Vec<ObservableEstimate>,
}

/// Branch quantities at one inverse temperature.
#[derive(Clone, Copy)]
struct BranchPoint {
    log_z: ObservableEstimate,
    energy: ObservableEstimate,
    specific_heat: ObservableEstimate,
}

impl Branch {
    /// `ln Z'` along the branch, anchored at its first node (`from_top =
    /// false`, value `anchor`) or its last node (`from_top = true`).
    fn new(nodes: Vec<usize>, all: &[NodeRun], thermal: Vec<ThermalEstimate>, anchor: ObservableEstimate, from_top: bool) -> Self {
        let betas: Vec<f64> = nodes.iter().map(|&j| all[j].beta).collect();
        let k = nodes.len();
        let mut log_z = vec![anchor; k];
        // Running trapezoid sum with per-node weights for the error.
        let mut weights = vec![0.0; k];
        let order: Vec<usize> = if from_top { (0..k).rev().collect() } else { (0..k).collect() };
        let sign = if from_top { 1.0 } else { -1.0 };
        let mut acc = anchor.mean;
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            let h = 0.5 * (betas[a] - betas[b]).abs();
            acc += sign * h * (thermal[a].energy.mean + thermal[b].energy.mean);
            weights[a] += h;
            weights[b] += h;
            let var: f64 = weights
                .iter()
                .zip(&thermal)
                .map(|(w, t)| (w * t.energy.std_error).powi(2))
                .sum();
            log_z[b] = ObservableEstimate {
                mean: acc,
                std_error: var.sqrt().hypot(anchor.std_error),
                n_samples: 0,
            };
        }
        Self { betas, thermal, log_z }
    }

    fn range(&self) -> (f64, f64) {
        (self.betas[0], self.betas[self.betas.len() - 1])
    }

    fn at(&self, beta: f64) -> Option<BranchPoint> {
        let (lo, hi) = self.range();
        if beta < lo || beta > hi {
            return None;
        }
        let i = self.betas.partition_point(|&b| b < beta);
        if self.betas[i] == beta {
            return Some(BranchPoint {
                log_z: self.log_z[i],
                energy: self.thermal[i].energy,
                specific_heat: self.thermal[i].specific_heat,
            });
        }
        let (a, b) = (i - 1, i);
        let t = (beta - self.betas[a]) / (self.betas[b] - self.betas[a]);
        let energy = lerp(self.thermal[a].energy, self.thermal[b].energy, t);
        let specific_heat = lerp(self.thermal[a].specific_heat, self.thermal[b].specific_heat, t);
        // ln Z' from the lower node; d ln Z'/d beta = -E.
        let lz = self.log_z[a];
        let log_z = ObservableEstimate {
            mean: lz.mean - 0.5 * (beta - self.betas[a]) * (self.thermal[a].energy.mean + energy.mean),
            std_error: lz.std_error.hypot(self.log_z[b].std_error) / std::f64::consts::SQRT_2,
            n_samples: 0,
        };
        Some(BranchPoint {
            log_z,
            energy,
            specific_heat,
        })
    }
}

struct Branches {
    disordered: Branch,
    ordered: Option<Branch>,
    /// Beta range in which both phases were observed.
    window: Option<(f64, f64)>,
}

fn build_branches(nodes: &[NodeRun], n: usize, tail_gap: Option<(f64, f64)>) -> Branches {
    let k = nodes.len();
    let two: Vec<usize> = (0..k).filter(|&j| nodes[j].phases.is_some()).collect();
    let log_z0 = ObservableEstimate::exact(n as f64 * std::f64::consts::LN_2);
    let window = match (two.first(), two.last(), tail_gap) {
        (Some(&a), Some(&b), Some(_)) => Some((a, b)),
        _ => None,
    };
    let Some((first, last)) = window else {
        let thermal = nodes.iter().map(|r| r.pooled).collect();
        let disordered = Branch::new((0..k).collect(), nodes, thermal, log_z0, false);
        let ordered = tail_gap.map(|gap| {
            let thermal: Vec<ThermalEstimate> = nodes.iter().map(|r| r.pooled).collect();
            let anchor = tail_anchor(thermal[k - 1].energy, gap);
            Branch::new((0..k).collect(), nodes, thermal, anchor, true)
        });
        return Branches {
            disordered,
            ordered,
            window: None,
        };
    };
    let phase = |j: usize, ordered: bool| match nodes[j].phases {
        Some(ph) if ordered => ph.ordered,
        Some(ph) => ph.disordered,
        None => nodes[j].pooled,
    };
    let d_nodes: Vec<usize> = (0..first).chain(two.iter().copied()).collect();
    let d_thermal = d_nodes.iter().map(|&j| phase(j, false)).collect();
    let o_nodes: Vec<usize> = two.iter().copied().chain(last + 1..k).collect();
    let o_thermal: Vec<ThermalEstimate> = o_nodes.iter().map(|&j| phase(j, true)).collect();
    let anchor = tail_anchor(o_thermal[o_thermal.len() - 1].energy, tail_gap.expect("window implies anchor"));
    Branches {
        disordered: Branch::new(d_nodes, nodes, d_thermal, log_z0, false),
        ordered: Some(Branch::new(o_nodes, nodes, o_thermal, anchor, true)),
        window: Some((nodes[first].beta, nodes[last].beta)),
    }
}

/// `ln Z'` above the top node from independent single-flip excitations of
/// energy `gap`; uncertainty bounded by the weakest coupling.
fn tail_anchor(top_energy: ObservableEstimate, (gap, min_coupling): (f64, f64)) -> ObservableEstimate {
    let e = top_energy.mean.max(0.0);
    ObservableEstimate {
        mean: e / gap,
        std_error: (e / min_coupling).hypot(top_energy.std_error / gap),
        n_samples: 0,
    }
}

struct Combined {
    energy: ObservableEstimate,
    specific_heat: ObservableEstimate,
    log_z: ObservableEstimate,
    metastable: bool,
}

/// Equilibrium mixture of two phases weighted by their partition functions.
fn mixture(beta: f64, o: BranchPoint, d: BranchPoint) -> Combined {
    let sd = o.log_z.std_error.hypot(d.log_z.std_error);
    let lz = log_sum_exp(&[o.log_z.mean, d.log_z.mean]);
    let w = (o.log_z.mean - lz).exp();
    let sw = w * (1.0 - w) * sd;
    let (eo, ed) = (o.energy, d.energy);
    let (co, cd) = (o.specific_heat, d.specific_heat);
    let de = ed.mean - eo.mean;
    let b2 = beta * beta;
    let energy = ObservableEstimate {
        mean: w * eo.mean + (1.0 - w) * ed.mean,
        std_error: ((w * eo.std_error).powi(2) + ((1.0 - w) * ed.std_error).powi(2) + (de * sw).powi(2))
            .sqrt(),
        n_samples: eo.n_samples + ed.n_samples,
    };
    let dc_dw = co.mean - cd.mean + b2 * (1.0 - 2.0 * w) * de * de;
    let specific_heat = ObservableEstimate {
        mean: w * co.mean + (1.0 - w) * cd.mean + b2 * w * (1.0 - w) * de * de,
        std_error: ((w * co.std_error).powi(2)
            + ((1.0 - w) * cd.std_error).powi(2)
            + (2.0 * b2 * w * (1.0 - w) * de).powi(2) * (eo.std_error.powi(2) + ed.std_error.powi(2))
            + (dc_dw * sw).powi(2))
        .sqrt(),
        n_samples: co.n_samples + cd.n_samples,
    };
    Combined {
        energy,
        specific_heat,
        log_z: ObservableEstimate {
            mean: lz,
            std_error: (w * o.log_z.std_error).hypot((1.0 - w) * d.log_z.std_error),
            n_samples: 0,
        },
        metastable: true,
    }
}

fn combine(node: &NodeRun, br: &Branches) -> Combined {
    let beta = node.beta;
    let d = br.disordered.at(beta);
    let o = br.ordered.as_ref().and_then(|o| o.at(beta));
    let inside = br.window.is_some_and(|(lo, hi)| beta >= lo && beta <= hi);
    let plain = |log_z| Combined {
        energy: node.pooled.energy,
        specific_heat: node.pooled.specific_heat,
        log_z,
        metastable: false,
    };
    match (o, d) {
        (Some(o), Some(d)) if inside => mixture(beta, o, d),
        (Some(o), Some(d)) => {
            let (o, d) = (o.log_z, d.log_z);
            let diff = o.mean - d.mean;
            let sd = o.std_error.hypot(d.std_error);
            plain(if diff.abs() <= 3.0 * sd && sd > 0.0 {
                // Inverse-variance average written without reciprocals so an
                // exact branch (zero variance) wins outright.
                let (vo, vd) = (o.std_error.powi(2), d.std_error.powi(2));
                ObservableEstimate {
                    mean: (o.mean * vd + d.mean * vo) / (vo + vd),
                    std_error: (vo * vd / (vo + vd)).sqrt(),
                    n_samples: 0,
                }
            } else if diff > 0.0 {
                o
            } else {
                d
            })
        }
        (Some(x), None) | (None, Some(x)) => plain(x.log_z),
        (None, None) => unreachable!("branches cover the whole grid"),
    }
}

fn coexistence_at(beta: f64, op: BranchPoint, dp: BranchPoint) -> Coexistence {
    let (eo, ed) = (op.energy, dp.energy);
    let (co, cd) = (op.specific_heat, dp.specific_heat);
    let sd = op.log_z.std_error.hypot(dp.log_z.std_error);
    let de = ed.mean - eo.mean;
    let b2 = beta * beta;
    Coexistence {
        beta,
        latent_heat: ObservableEstimate {
            mean: de,
            std_error: eo.std_error.hypot(ed.std_error),
            n_samples: 0,
        },
        specific_heat: ObservableEstimate {
            mean: 0.5 * (co.mean + cd.mean) + 0.25 * b2 * de * de,
            std_error: (0.25 * (co.std_error.powi(2) + cd.std_error.powi(2))
                + (0.5 * b2 * de).powi(2) * (eo.std_error.powi(2) + ed.std_error.powi(2))
                + (0.25 * (co.mean - cd.mean) * sd).powi(2))
            .sqrt(),
            n_samples: 0,
        },
    }
}

/// Points where the branch free energies cross, with the bracketing node
/// betas. A crossing just outside the window (within `CROSSING_SPACING`) is
/// extrapolated from the edge, using `d(ln Z'_o - ln Z'_d)/d beta =
/// E_d - E_o`.
fn crossings(br: &Branches) -> Vec<(f64, f64, Coexistence)> {
    let (Some(o), Some((lo, hi))) = (&br.ordered, br.window) else {
        return Vec::new();
    };
    let d = &br.disordered;
    let gap = |b: f64| -> Option<(f64, BranchPoint, BranchPoint)> {
        let (op, dp) = (o.at(b)?, d.at(b)?);
        Some((op.log_z.mean - dp.log_z.mean, op, dp))
    };
    let shared: Vec<f64> = o.betas.iter().copied().filter(|&b| b <= d.range().1).collect();
    let mut out = Vec::new();
    for w in shared.windows(2) {
        let (Some((fa, ..)), Some((fb, ..))) = (gap(w[0]), gap(w[1])) else {
            continue;
        };
        if fa == fb || ((fa > 0.0) == (fb > 0.0) && fa != 0.0 && fb != 0.0) {
            continue;
        }
        let beta = w[0] + fa / (fa - fb) * (w[1] - w[0]);
        let (_, op, dp) = gap(beta).expect("inside both branches");
        out.push((w[0], w[1], coexistence_at(beta, op, dp)));
    }
    if out.is_empty() {
        for (edge, outward) in [(lo, -1.0), (hi, 1.0)] {
            let Some((f, op, dp)) = gap(edge) else {
                continue;
            };
            let de = dp.energy.mean - op.energy.mean;
            if de <= 0.0 {
                continue;
            }
            let shift = -f / de;
            if shift * outward > 0.0 && shift.abs() <= CROSSING_SPACING {
                let beta = edge + shift;
                out.push((beta.min(edge), beta.max(edge), coexistence_at(beta, op, dp)));
            }
        }
    }
    out
}

/// Midpoints to add and the summed trapezoid error that is not explained
/// by statistical noise.
fn plan_refinement(nodes: &[NodeRun], n: usize, br: &Branches) -> (Vec<f64>, f64) {
    let k = nodes.len();
    let tol = TI_TOL_PER_QUBIT * n as f64;
    let range = nodes[k - 1].beta.max(f64::MIN_POSITIVE);
    let mut mids: Vec<f64> = Vec::new();
    let mut unresolved = 0.0;

    // A branch only matters where its free energy is not clearly below the
    // other one.
    let other_of = |b: f64, disordered: bool| {
        if disordered {
            br.ordered.as_ref().and_then(|o| o.at(b))
        } else {
            br.disordered.at(b)
        }
    };
    let branches = std::iter::once((&br.disordered, true)).chain(br.ordered.as_ref().map(|o| (o, false)));
    for (branch, disordered) in branches {
        let matters: Vec<bool> = branch
            .betas
            .iter()
            .zip(&branch.log_z)
            .map(|(&b, lz)| match other_of(b, disordered) {
                Some(x) => lz.mean >= x.log_z.mean - 3.0 * lz.std_error.hypot(x.log_z.std_error),
                None => true,
            })
            .collect();
        // The disordered branch is integrated upward, so an interval counts
        // if any later node matters; the ordered branch the other way.
        let m = matters.len();
        let counts: Vec<bool> = (0..m.saturating_sub(1))
            .map(|i| {
                if disordered {
                    matters[i + 1..].iter().any(|&x| x)
                } else {
                    matters[..=i].iter().any(|&x| x)
                }
            })
            .collect();
        let energies: Vec<ObservableEstimate> = branch.thermal.iter().map(|t| t.energy).collect();
        for (i, (e, s)) in interval_errors(&branch.betas, &energies).into_iter().enumerate() {
            if !counts[i] || e <= 3.0 * s {
                continue;
            }
            unresolved += e;
            let h = branch.betas[i + 1] - branch.betas[i];
            if h > MIN_SPACING && e > tol * h / range {
                mids.push(0.5 * (branch.betas[i] + branch.betas[i + 1]));
            }
        }
    }

    // Resolve crossings and both edges of the coexistence window.
    let mut coarse: Vec<(f64, f64)> = crossings(br).into_iter().map(|(a, b, _)| (a, b)).collect();
    if let Some((lo, hi)) = br.window {
        let i = nodes.iter().position(|r| r.beta == lo).expect("window edge is a node");
        let j = nodes.iter().position(|r| r.beta == hi).expect("window edge is a node");
        if i > 0 {
            coarse.push((nodes[i - 1].beta, lo));
        }
        if j + 1 < k {
            coarse.push((hi, nodes[j + 1].beta));
        }
    }
    for (a, b) in coarse {
        if b - a > CROSSING_SPACING {
            mids.push(0.5 * (a + b));
        }
    }
    mids.sort_by(f64::total_cmp);
    mids.dedup();
    // Never duplicate an existing node.
    mids.retain(|m| nodes.iter().all(|r| r.beta != *m));
    (mids, unresolved)
}

/// Runs cold and hot chains on an adaptively refined beta grid covering `0`
/// and every target, and reconstructs `ln Z'` at each node.
///
/// `cp` supplies the couplings; its own `beta` is ignored. The ordered
/// branch is used only when all couplings are positive.
pub fn integrate(
    g: &Graph,
    cp: &CouplingParams,
    targets: &[f64],
    mc: &MCConfig,
    keep_samples: bool,
) -> Result<IntegrationGrid> {
    mc.validate()?;
    if let Some(b) = targets.iter().find(|b| !b.is_finite() || **b < 0.0) {
        return Err(Error::MonteCarlo(format!("integration targets need finite beta >= 0 (got {b})")));
    }
    let n = g.n();
    let positive = cp.jx > 0.0 && cp.jy > 0.0 && cp.jz > 0.0;
    let tail_gap = positive.then(|| {
        let gap = (0..n)
            .map(|i| cp.jx + cp.jz * g.degree(i) as f64)
            .fold(f64::INFINITY, f64::min);
        (gap, cp.jx.min(cp.jy).min(cp.jz))
    });

    let beta_max = targets.iter().copied().fold(0.0, f64::max);
    let beta_top = match tail_gap {
        Some((gap, _)) => beta_max.max(TAIL_DECAYS / gap),
        None => beta_max,
    };
    let mut anchors: Vec<f64> = std::iter::once(0.0)
        .chain(targets.iter().copied())
        .chain(std::iter::once(beta_top))
        .collect();
    anchors.sort_by(f64::total_cmp);
    anchors.dedup();
    let mut betas = vec![anchors[0]];
    for w in anchors.windows(2) {
        let pieces = ((w[1] - w[0]) / BASE_SPACING).ceil().max(1.0) as usize;
        for s in 1..pieces {
            betas.push(w[0] + (w[1] - w[0]) * s as f64 / pieces as f64);
        }
        betas.push(w[1]);
    }
    let mut nodes = anneal(g, cp, mc, &betas, keep_samples)?;

    let mut unresolved;
    let mut round = 0;
    loop {
        let br = build_branches(&nodes, n, tail_gap);
        let (mids, err) = plan_refinement(&nodes, n, &br);
        unresolved = err;
        if mids.is_empty() || round == MAX_REFINE_ROUNDS {
            break;
        }
        round += 1;
        // Each midpoint continues the hot chain of the node below and the
        // cold chain of the node above.
        let fresh: Vec<NodeRun> = mids
            .par_iter()
            .map(|&b| {
                let i = nodes.partition_point(|r| r.beta < b);
                let hot = run_branch(g, cp, mc, b, Start::Hot, Some(nodes[i - 1].hot_state.clone()))?;
                let cold = run_branch(g, cp, mc, b, Start::Cold, Some(nodes[i].cold_state.clone()))?;
                Ok(node_from(b, n, mc.bins, cold, hot, keep_samples))
            })
            .collect::<Result<_>>()?;
        nodes.extend(fresh);
        nodes.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    }
    let tol = TI_TOL_PER_QUBIT * n as f64;
    if unresolved > tol {
        return Err(Error::MonteCarlo(format!(
            "integration grid unresolved after {MAX_REFINE_ROUNDS} refinements: estimated error {unresolved:.3e} > {tol:.3e}"
        )));
    }

    let br = build_branches(&nodes, n, tail_gap);
    let combined: Vec<Combined> = nodes.iter().map(|node| combine(node, &br)).collect();
    let coexistence = crossings(&br).into_iter().map(|(_, _, c)| c).collect();
    Ok(IntegrationGrid {
        n,
        betas: nodes.iter().map(|r| r.beta).collect(),
        energies: combined.iter().map(|c| c.energy).collect(),
        specific_heats: combined.iter().map(|c| c.specific_heat).collect(),
        log_z: combined.iter().map(|c| c.log_z).collect(),
        metastable: combined.iter().map(|c| c.metastable).collect(),
        log_z0: n as f64 * std::f64::consts::LN_2,
        ordered_branch: br.ordered.is_some(),
        discretisation_error: unresolved,
        coexistence,
        nodes,
    })
}

/// Rows of an MC sweep together with the grids they were read from.
#[derive(Debug, Clone, PartialEq)]
pub struct McSweep {
    pub rows: Vec<SweepRow>,
    /// Per row: the point lies in a two-phase window, see
    /// [`IntegrationGrid::metastable`].
    pub metastable: Vec<bool>,
    pub grids: Vec<IntegrationGrid>,
}

/// `ln F` must not exceed 0 beyond its uncertainty.
fn checked_log_fidelity(log_f: f64, sigma: f64, n: usize) -> Result<f64> {
    if log_f > 3.0 * sigma + TI_TOL_PER_QUBIT * n as f64 {
        return Err(Error::MonteCarlo(format!(
            "reconstructed ln F = {log_f:.6e} exceeds the bound ln F <= 0 (sigma {sigma:.3e})"
        )));
    }
    Ok(log_f.min(0.0))
}

fn exact_row(p: f64, beta: f64, per_qubit: f64, n: usize, descriptor: &str, seed: u64) -> SweepRow {
    SweepRow {
        p,
        beta,
        fidelity_per_qubit: per_qubit,
        log_fidelity: n as f64 * per_qubit.ln(),
        energy_per_qubit: Some(0.0),
        specific_heat_per_qubit: Some(0.0),
        err_fidelity: 0.0,
        err_energy: 0.0,
        err_specific_heat: 0.0,
        method: Method::Mc,
        graph_descriptor: descriptor.to_string(),
        seed: Some(seed),
    }
}

#[allow(clippy::too_many_arguments)]
fn row_at(
    grid: &IntegrationGrid,
    j: usize,
    p: f64,
    beta: f64,
    log_offset: f64,
    energy_sign: f64,
    descriptor: &str,
    seed: u64,
) -> Result<SweepRow> {
    let n = grid.n;
    let nf = n as f64;
    let lz = grid.log_z[j];
    let log_f = checked_log_fidelity(log_offset + lz.mean, lz.std_error, n)?;
    let per = (log_f / nf).exp();
    let e = grid.energies[j].scaled(energy_sign / nf);
    let c = grid.specific_heats[j].scaled(1.0 / nf);
    Ok(SweepRow {
        p,
        beta,
        fidelity_per_qubit: per,
        log_fidelity: log_f,
        energy_per_qubit: Some(e.mean),
        specific_heat_per_qubit: Some(c.mean),
        err_fidelity: per * lz.std_error / nf,
        err_energy: e.std_error,
        err_specific_heat: c.std_error,
        method: Method::Mc,
        graph_descriptor: descriptor.to_string(),
        seed: Some(seed),
    })
}

/// Depolarizing sweep over an ascending list of `p` in `[0, 3/4]`.
pub fn sweep_depolarizing(g: &Graph, ps: &[f64], mc: &MCConfig, keep_samples: bool) -> Result<McSweep> {
    check_p_grid(ps)?;
    let n = g.n();
    let template = CouplingParams::depolarizing_at_beta(1.0, n)?;
    let targets: Vec<f64> = ps
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| if p == 0.75 { 0.0 } else { depolarizing_beta(p) })
        .collect();
    let grid = integrate(g, &template, &targets, mc, keep_samples)?;
    let metastable = ps
        .iter()
        .map(|&p| {
            let beta = if p == 0.75 { 0.0 } else { depolarizing_beta(p) };
            p > 0.0 && grid.node_index(beta).is_some_and(|j| grid.metastable[j])
        })
        .collect();
    let rows = ps
        .iter()
        .map(|&p| {
            if p == 0.0 {
                return Ok(exact_row(p, f64::INFINITY, 1.0, n, g.descriptor(), mc.seed));
            }
            let beta = if p == 0.75 { 0.0 } else { depolarizing_beta(p) };
            let j = grid.node_index(beta).expect("target is a grid node");
            let mut row = row_at(&grid, j, p, beta, n as f64 * (1.0 - p).ln(), 1.0, g.descriptor(), mc.seed)?;
            if p == 0.75 {
                // Exact anchor: Z'(0) = 2^n and (1-p) = 1/4.
                row.fidelity_per_qubit = 0.5;
                row.log_fidelity = n as f64 * 0.5f64.ln();
                row.err_fidelity = 0.0;
                row.specific_heat_per_qubit = Some(0.0);
                row.err_specific_heat = 0.0;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(McSweep {
        rows,
        metastable,
        grids: vec![grid],
    })
}

fn check_p_grid(ps: &[f64]) -> Result<()> {
    for (i, &p) in ps.iter().enumerate() {
        if !(0.0..=0.75).contains(&p) {
            return Err(Error::Noise(format!("depolarizing p must lie in [0, 3/4] (got {p})")));
        }
        if i > 0 && p <= ps[i - 1] {
            return Err(Error::Noise("p grid must be strictly ascending".into()));
        }
    }
    Ok(())
}

/// Sweep over explicit IID noise triples, one integration per triple since
/// the coupling ratios differ. Rows keep the input order.
pub fn sweep_noise(g: &Graph, noises: &[NoiseModel], mc: &MCConfig, keep_samples: bool) -> Result<McSweep> {
    let n = g.n();
    let mut rows = Vec::with_capacity(noises.len());
    let mut metastable = Vec::with_capacity(noises.len());
    let mut grids = Vec::new();
    for noise in noises {
        let p = noise.p();
        if p == 0.0 {
            rows.push(exact_row(p, f64::INFINITY, 1.0, n, g.descriptor(), mc.seed));
            metastable.push(false);
            continue;
        }
        let cp = coupling_from_noise(noise, n)?;
        // A negative beta is the same ensemble as positive beta with all
        // couplings negated.
        let (sign, run) = if cp.beta < 0.0 {
            let mut flipped = cp.with_beta(-cp.beta);
            flipped.jx = -cp.jx;
            flipped.jy = -cp.jy;
            flipped.jz = -cp.jz;
            (-1.0, flipped)
        } else {
            (1.0, cp)
        };
        let grid = integrate(g, &run, &[run.beta], mc, keep_samples)?;
        let j = grid.node_index(run.beta).expect("target is a grid node");
        rows.push(row_at(&grid, j, p, cp.beta, cp.log_offset_weight(), sign, g.descriptor(), mc.seed)?);
        metastable.push(grid.metastable[j]);
        grids.push(grid);
    }
    Ok(McSweep { rows, metastable, grids })
}

/// Fidelity, energy and specific heat per qubit on a depolarizing p grid.
pub fn fidelity_by_integration(g: &Graph, ps: &[f64], mc: &MCConfig) -> Result<Vec<SweepRow>> {
    Ok(sweep_depolarizing(g, ps, mc, false)?.rows)
}

// ---------------------------------------------------------------------------
// Raw sample dump: a sequence of records, each a little-endian u64 length
// followed by that many little-endian f64 values.

pub fn encode_samples(series: &[&[f64]]) -> Vec<u8> {
    let total: usize = series.iter().map(|s| 8 + 8 * s.len()).sum();
    let mut out = Vec::with_capacity(total);
    for s in series {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for x in *s {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        let offset = bytes.len() - rest.len();
        let (head, tail) = rest.split_first_chunk::<8>().ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("truncated length header at byte {offset}"),
        })?;
        let len = u64::from_le_bytes(*head);
        let need = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_mul(8))
            .filter(|&b| b <= tail.len())
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("record at byte {offset} declares {len} values but only {} bytes follow", tail.len()),
            })?;
        let (body, next) = tail.split_at(need);
        out.push(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        );
        rest = next;
    }
    Ok(out)
}
