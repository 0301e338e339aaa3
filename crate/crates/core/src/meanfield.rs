//! Mean-field theory of the depolarizing spin model on hypercubic cluster
//! states (degree `k = 2 * dimension`).
//!
//! Linearising every spin product around the mean magnetization `m` gives
//! `H_MF = B(m) sum_i s_i + D(m)` with
//!
//! ```text
//! B(m)   = 1/4 - (k/4) m^{k-1} + ((k+1)/4) m^k
//! D(m)/n = 3/4 + ((k-1)/4) m^k - (k/4) m^{k+1}
//! ```
//!
//! and the self-consistency condition `m = -tanh(beta B(m))`. Several roots
//! can coexist; the one with lowest free energy is physical, and a jump of
//! that choice with `p` marks the mean-field transition.

use crate::error::{Error, Result};
use crate::numeric::{depolarizing_beta, depolarizing_p};

const SCAN_POINTS: usize = 10_000;
const ROOT_TOL: f64 = 1e-12;

/// Mean-field field and constant coefficients at magnetization `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfCoefficients {
    pub b: f64,
    pub d_per_qubit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldSolution {
    pub magnetization: f64,
    pub b: f64,
    pub d_per_qubit: f64,
    /// `F_MF / n = D/n + c/n - ln(2 cosh(beta B)) / beta`.
    pub free_energy_per_qubit: f64,
    pub fidelity_per_qubit: f64,
    pub branch_count: usize,
}

fn check_degree(k: usize) -> Result<()> {
    if matches!(k, 2 | 4 | 6) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "mean field is defined for cluster-state degrees k in {{2, 4, 6}} (got k={k})"
        )))
    }
}

pub fn mf_coefficients(k: usize, s: f64) -> Result<MfCoefficients> {
    check_degree(k)?;
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::Numerical(format!("magnetization {s} outside [-1, 1]")));
    }
    Ok(coefficients(k, s))
}

fn coefficients(k: usize, s: f64) -> MfCoefficients {
    let kf = k as f64;
    let sk1 = s.powi(k as i32 - 1);
    let sk = sk1 * s;
    let sk2 = sk * s;
    MfCoefficients {
        b: 0.25 - 0.25 * kf * sk1 + 0.25 * (kf + 1.0) * sk,
        d_per_qubit: 0.75 + 0.25 * (kf - 1.0) * sk - 0.25 * kf * sk2,
    }
}

fn residual(k: usize, beta: f64, s: f64) -> f64 {
    s + (beta * coefficients(k, s).b).tanh()
}

/// `ln(2 cosh x)` without overflow.
fn ln_two_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

fn bisect(k: usize, beta: f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut r_lo = residual(k, beta, lo);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let r_mid = residual(k, beta, mid);
        if r_mid == 0.0 {
            return mid;
        }
        if (r_lo < 0.0) == (r_mid < 0.0) {
            lo = mid;
            r_lo = r_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// All roots of `s + tanh(beta B(s)) = 0` on `[-1, 1]`, ascending.
pub fn self_consistent_roots(k: usize, beta: f64) -> Result<Vec<f64>> {
    check_degree(k)?;
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Numerical(format!("mean field needs finite beta > 0 (got {beta})")));
    }
    let grid = |i: usize| -1.0 + 2.0 * i as f64 / SCAN_POINTS as f64;
    let mut roots = Vec::new();
    let mut prev = residual(k, beta, grid(0));
    if prev == 0.0 {
        roots.push(grid(0));
    }
    for i in 1..=SCAN_POINTS {
        let s = grid(i);
        let r = residual(k, beta, s);
        if r == 0.0 {
            roots.push(s);
        } else if prev != 0.0 && (prev < 0.0) != (r < 0.0) {
            roots.push(bisect(k, beta, grid(i - 1), s));
        }
        prev = r;
    }
    if roots.is_empty() {
        return Err(Error::Numerical(format!(
            "no self-consistent magnetization found at beta={beta}"
        )));
    }
    Ok(roots)
}

/// Solves the self-consistency condition and keeps the lowest free-energy
/// branch.
pub fn solve_self_consistent(k: usize, beta: f64) -> Result<MeanFieldSolution> {
    let roots = self_consistent_roots(k, beta)?;
    let p = depolarizing_p(beta);
    let log_one_minus_p = (1.0 - p).ln();
    let c_per_qubit = -log_one_minus_p / beta;
    let branch_count = roots.len();
    roots
        .into_iter()
        .map(|s| {
            let co = coefficients(k, s);
            let free = co.d_per_qubit + c_per_qubit - ln_two_cosh(beta * co.b) / beta;
            MeanFieldSolution {
                magnetization: s,
                b: co.b,
                d_per_qubit: co.d_per_qubit,
                free_energy_per_qubit: free,
                fidelity_per_qubit: (log_one_minus_p - beta * co.d_per_qubit
                    + ln_two_cosh(beta * co.b))
                .exp(),
                branch_count,
            }
        })
        .min_by(|a, b| a.free_energy_per_qubit.total_cmp(&b.free_energy_per_qubit))
        .ok_or_else(|| Error::Numerical("no mean-field branch".into()))
}

/// Mean-field fidelity per qubit, `(1-p) e^{-beta D/n} 2 cosh(beta B)`, on
/// the selected branch. The endpoints `p = 0` and `p = 3/4` take their
/// limiting values 1 and 1/2.
pub fn mf_fidelity(k: usize, p: f64) -> Result<f64> {
    check_degree(k)?;
    if !(0.0..=0.75).contains(&p) {
        return Err(Error::Noise(format!("depolarizing p must lie in [0, 3/4] (got {p})")));
    }
    if p == 0.0 {
        return Ok(1.0);
    }
    if p == 0.75 {
        return Ok(0.5);
    }
    Ok(solve_self_consistent(k, depolarizing_beta(p))?.fidelity_per_qubit)
}

fn selected_magnetization(k: usize, p: f64) -> Result<f64> {
    Ok(solve_self_consistent(k, depolarizing_beta(p))?.magnetization)
}

/// Noise strength at which the minimum-free-energy branch jumps, or `None`
/// when the selected magnetization is continuous in `p`.
pub fn locate_mf_singularity(k: usize) -> Result<Option<f64>> {
    check_degree(k)?;
    const STEP: f64 = 1e-3;
    const JUMP: f64 = 0.1;
    let mut p_prev = 0.01;
    let mut s_prev = selected_magnetization(k, p_prev)?;
    let mut p = p_prev + STEP;
    while p < 0.75 - 1e-9 {
        let s = selected_magnetization(k, p)?;
        if (s - s_prev).abs() > JUMP {
            let threshold = 0.5 * (s + s_prev);
            let ordered = |q: f64| -> Result<bool> { Ok(selected_magnetization(k, q)? < threshold) };
            let (mut lo, mut hi) = (p_prev, p);
            while hi - lo > 1e-7 {
                let mid = 0.5 * (lo + hi);
                if ordered(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Some(0.5 * (lo + hi)));
        }
        p_prev = p;
        s_prev = s;
        p += STEP;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients_at_special_points() {
        let c = mf_coefficients(4, -1.0).unwrap();
        assert!((c.b - 2.5).abs() < 1e-15);
        let c = mf_coefficients(4, 0.0).unwrap();
        assert_eq!((c.b, c.d_per_qubit), (0.25, 0.75));
        let c = mf_coefficients(4, 1.0).unwrap();
        assert!((c.b - 0.5).abs() < 1e-15);
        assert!((c.d_per_qubit - 0.5).abs() < 1e-15);
        assert!(mf_coefficients(3, 0.0).is_err());
        assert!(mf_coefficients(4, 1.5).is_err());
    }

    #[test]
    fn roots_have_small_residual() {
        for k in [2, 4, 6] {
            for p in [0.05, 0.3, 0.5, 0.53, 0.54, 0.6, 0.7] {
                let beta = depolarizing_beta(p);
                for s in self_consistent_roots(k, beta).unwrap() {
                    assert!(residual(k, beta, s).abs() < 1e-10, "k={k} p={p} s={s}");
                }
            }
        }
    }

    #[test]
    fn low_temperature_is_ordered() {
        for k in [2, 4, 6] {
            let sol = solve_self_consistent(k, 12.0).unwrap();
            assert!((sol.magnetization + 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn chain_has_no_jump() {
        let mut prev = selected_magnetization(2, 0.01).unwrap();
        for i in 2..750 {
            let s = selected_magnetization(2, i as f64 / 1000.0).unwrap();
            assert!((s - prev).abs() < 0.05);
            prev = s;
        }
        assert_eq!(locate_mf_singularity(2).unwrap(), None);
    }

    #[test]
    fn branches_coexist_near_transition() {
        let sol = solve_self_consistent(4, depolarizing_beta(0.5)).unwrap();
        assert_eq!(sol.branch_count, 3);
    }

    #[test]
    fn fidelity_from_definition() {
        let p = 0.6;
        let beta = depolarizing_beta(p);
        let sol = solve_self_consistent(6, beta).unwrap();
        let s = sol.magnetization;
        let b = 0.25 - 1.5 * s.powi(5) + 1.75 * s.powi(6);
        let d = 0.75 + 1.25 * s.powi(6) - 1.5 * s.powi(7);
        let f = (1.0 - p) * (-beta * d).exp() * 2.0 * (beta * b).cosh();
        assert!((mf_fidelity(6, p).unwrap() - f).abs() < 1e-10);
        // exp(-beta f_MF) reproduces the fidelity per qubit.
        assert!(((-beta * sol.free_energy_per_qubit).exp() - f).abs() < 1e-10);
    }

    #[test]
    fn fidelity_tracks_pure_term_below_transition() {
        for p in [0.05, 0.1, 0.2, 0.3] {
            let f = mf_fidelity(4, p).unwrap();
            assert!((f - (1.0 - p)).abs() < 1e-3, "p={p} f={f}");
        }
        assert_eq!(mf_fidelity(4, 0.0).unwrap(), 1.0);
        assert_eq!(mf_fidelity(4, 0.75).unwrap(), 0.5);
    }
}
