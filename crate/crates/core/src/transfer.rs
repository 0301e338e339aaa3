//! Transfer-matrix solution for the periodic 1D cluster state under
//! depolarizing noise.
//!
//! Sites are grouped in pairs `(s_{2i-1}, s_{2i})`. The pair Hamiltonian
//! `h_{2i-1} + h_{2i}` couples neighbouring pairs, giving a 4x4 matrix in
//! the basis `(+,+), (+,-), (-,+), (-,-)`:
//!
//! ```text
//!     | a a c a |        a = e^{-2 beta}
//! T = | c c a c |        c = e^{-beta}
//!     | a a c a |
//!     | a a c 1 |
//! ```
//!
//! Rows 1 and 3 coincide, so the image of `T` lies in the invariant subspace
//! spanned by `e1 + e3`, `e2`, `e4`. Restricted to it, `T` acts as the 3x3
//! matrix
//!
//! ```text
//!     | a+c a a |
//! M = | a+c c c |
//!     | a+c a 1 |
//! ```
//!
//! whose eigenvalues are the three nonzero eigenvalues of `T`.

use crate::error::{Error, Result};
use crate::numeric::depolarizing_beta;

/// Dense 4x4 matrix, row-major.
pub type Matrix4 = [[f64; 4]; 4];

/// Chain length for the 1D solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainSize {
    Finite(usize),
    Thermodynamic,
}

impl ChainSize {
    fn check(self) -> Result<Self> {
        match self {
            ChainSize::Finite(n) if n < 4 || n % 2 != 0 => Err(Error::Graph(format!(
                "transfer matrix needs an even chain length n >= 4 (got n={n})"
            ))),
            s => Ok(s),
        }
    }
}

/// The three nonzero eigenvalues of `T`, largest first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSpectrum {
    pub lambdas: [f64; 3],
    pub beta: f64,
}

/// Per-qubit fidelity and, for finite chains, `ln F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainFidelity {
    pub per_qubit: f64,
    pub log_fidelity: Option<f64>,
}

/// Internal energy and specific heat per qubit (`k_B = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainObservables {
    pub beta: f64,
    pub energy_per_qubit: f64,
    pub specific_heat_per_qubit: f64,
}

pub fn build_transfer_matrix(beta: f64) -> Result<Matrix4> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Numerical(format!(
            "transfer matrix needs finite beta > 0 (got {beta})"
        )));
    }
    Ok(raw_matrix(beta))
}

fn raw_matrix(beta: f64) -> Matrix4 {
    let a = (-2.0 * beta).exp();
    let c = (-beta).exp();
    [[a, a, c, a], [c, c, a, c], [a, a, c, a], [a, a, c, 1.0]]
}

/// Coefficients `(tr, c2, det)` of `lambda^3 - tr lambda^2 + c2 lambda - det`
/// for the restricted matrix, in closed form so that small `beta` does not
/// lose the small eigenvalues to cancellation.
fn char_poly(beta: f64) -> (f64, f64, f64) {
    let a = (-2.0 * beta).exp();
    let c = (-beta).exp();
    let one_minus_a = -(-2.0 * beta).exp_m1();
    let c_minus_a = -c * (-beta).exp_m1();
    let tr = a + 2.0 * c + 1.0;
    let c2 = (a + c) * c_minus_a + (a + c) * one_minus_a + c * one_minus_a;
    let det = one_minus_a * (a + c) * c_minus_a;
    (tr, c2, det)
}

fn cubic(l: f64, (tr, c2, det): (f64, f64, f64)) -> (f64, f64) {
    let f = ((l - tr) * l + c2) * l - det;
    let df = (3.0 * l - 2.0 * tr) * l + c2;
    (f, df)
}

fn newton_step(l: f64, poly: (f64, f64, f64)) -> f64 {
    let (f, df) = cubic(l, poly);
    if df == 0.0 {
        l
    } else {
        l - f / df
    }
}

/// Spectrum of `T` at inverse temperature `beta`. `beta = 0` is allowed
/// and yields `{4, 0, 0}`.
pub fn spectrum(beta: f64) -> Result<TransferSpectrum> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::Numerical(format!("spectrum needs finite beta >= 0 (got {beta})")));
    }
    spectrum_unchecked(beta)
}

fn spectrum_unchecked(beta: f64) -> Result<TransferSpectrum> {
    let poly = char_poly(beta);
    let (tr, _, det) = poly;

    // Newton from above the largest root decreases monotonically onto it.
    let mut l1 = tr.max(1.0) + 1.0;
    for _ in 0..200 {
        let next = newton_step(l1, poly);
        if (next - l1).abs() <= 1e-16 * l1.abs() {
            l1 = next;
            break;
        }
        l1 = next;
    }

    // Remaining pair from the deflated quadratic.
    let sum = tr - l1;
    let prod = det / l1;
    let disc = sum * sum - 4.0 * prod;
    let (mut l2, mut l3) = if disc >= 0.0 {
        let q = -0.5 * (sum + sum.signum() * disc.sqrt());
        if q == 0.0 {
            (0.0, 0.0)
        } else {
            let r1 = -q;
            let r2 = prod / -q;
            (r1.max(r2), r1.min(r2))
        }
    } else {
        let imag = 0.5 * (-disc).sqrt();
        if imag > 1e-10 {
            return Err(Error::Numerical(format!(
                "complex transfer eigenvalues at beta={beta} (imaginary part {imag:e})"
            )));
        }
        (0.5 * sum, 0.5 * sum)
    };
    if l2 != l3 {
        l2 = newton_step(l2, poly);
        l3 = newton_step(l3, poly);
    }
    let mut lambdas = [l1, l2, l3];
    lambdas.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    Ok(TransferSpectrum { lambdas, beta })
}

impl TransferSpectrum {
    /// `ln |Tr T^{n/2}|` evaluated as a signed log-sum-exp. Errors if the
    /// trace is not positive.
    pub fn log_trace_power(&self, half_n: usize) -> Result<f64> {
        let k = half_n as f64;
        let lead = self.lambdas[0];
        if lead <= 0.0 {
            return Err(Error::Numerical(format!("leading eigenvalue {lead} not positive")));
        }
        let mut acc = 1.0;
        for &l in &self.lambdas[1..] {
            if l == 0.0 {
                continue;
            }
            let ratio = (l / lead).abs();
            let term = (k * ratio.ln()).exp();
            let negative = l < 0.0 && half_n % 2 == 1;
            acc += if negative { -term } else { term };
        }
        if acc <= 0.0 || !acc.is_finite() {
            return Err(Error::Numerical(format!(
                "non-positive transfer trace at beta={} (n/2={half_n})",
                self.beta
            )));
        }
        Ok(k * lead.ln() + acc.ln())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=0.75).contains(&p) {
        return Err(Error::Noise(format!("depolarizing p must lie in [0, 3/4] (got {p})")));
    }
    Ok(())
}

/// `ln Z'(beta)` per qubit for the chain, i.e. without the offset `c`.
fn log_z_per_qubit(size: ChainSize, beta: f64) -> Result<f64> {
    let spec = spectrum_unchecked(beta)?;
    match size {
        ChainSize::Finite(n) => Ok(spec.log_trace_power(n / 2)? / n as f64),
        ChainSize::Thermodynamic => Ok(0.5 * spec.lambdas[0].ln()),
    }
}

/// Fidelity of the `n`-qubit periodic 1D cluster state under depolarizing
/// noise `p`, via `F = (1-p)^n Tr T^{n/2}`.
pub fn fidelity_1d(size: ChainSize, p: f64) -> Result<ChainFidelity> {
    let size = size.check()?;
    check_p(p)?;
    let n = match size {
        ChainSize::Finite(n) => Some(n as f64),
        ChainSize::Thermodynamic => None,
    };
    if p == 0.0 {
        return Ok(ChainFidelity {
            per_qubit: 1.0,
            log_fidelity: n.map(|_| 0.0),
        });
    }
    if p == 0.75 {
        return Ok(ChainFidelity {
            per_qubit: 0.5,
            log_fidelity: n.map(|n| -n * 2f64.ln()),
        });
    }
    let beta = depolarizing_beta(p);
    let log_per_qubit = (1.0 - p).ln() + log_z_per_qubit(size, beta)?;
    Ok(ChainFidelity {
        per_qubit: log_per_qubit.exp(),
        log_fidelity: n.map(|n| n * log_per_qubit),
    })
}

/// Central difference with one Richardson level.
fn richardson<F: Fn(f64) -> Result<f64>>(f: &F, h: f64, second: bool) -> Result<f64> {
    let diff = |h: f64| -> Result<f64> {
        if second {
            Ok((f(h)? - 2.0 * f(0.0)? + f(-h)?) / (h * h))
        } else {
            Ok((f(h)? - f(-h)?) / (2.0 * h))
        }
    };
    let coarse = diff(h)?;
    let fine = diff(0.5 * h)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Internal energy `E = -d ln Z'/d beta` (the mean number of Pauli letters)
/// and specific heat `C = beta^2 d^2 ln Z'/d beta^2`, both per qubit.
pub fn observables_1d(size: ChainSize, p: f64) -> Result<ChainObservables> {
    let size = size.check()?;
    check_p(p)?;
    if p == 0.0 {
        return Ok(ChainObservables {
            beta: f64::INFINITY,
            energy_per_qubit: 0.0,
            specific_heat_per_qubit: 0.0,
        });
    }
    if p == 0.75 {
        // Uniform spins: a site carries X or Y when up, Z half the time when down.
        return Ok(ChainObservables {
            beta: 0.0,
            energy_per_qubit: 0.75,
            specific_heat_per_qubit: 0.0,
        });
    }
    let beta = depolarizing_beta(p);
    observables_at_beta(size, beta)
}

pub fn observables_at_beta(size: ChainSize, beta: f64) -> Result<ChainObservables> {
    let size = size.check()?;
    let h = 1e-4 * beta.max(1.0);
    let shifted = |d: f64| log_z_per_qubit(size, beta + d);
    let slope = richardson(&shifted, h, false)?;
    let curvature = richardson(&shifted, h, true)?;
    Ok(ChainObservables {
        beta,
        energy_per_qubit: -slope,
        specific_heat_per_qubit: beta * beta * curvature,
    })
}
