//! Small numerical helpers shared by the solvers.

/// `ln(sum(exp(x_i)))` without overflow. Empty input or all `-inf` gives `-inf`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// `k * ln(x)` with the convention `0 * ln(0) = 0`.
#[inline]
pub fn xlogy(k: f64, x: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * x.ln()
    }
}

/// Inverse temperature of the depolarizing channel, `ln(3(1-p)/p)`.
#[inline]
pub fn depolarizing_beta(p: f64) -> f64 {
    (3.0 * (1.0 - p) / p).ln()
}

/// Inverse of [`depolarizing_beta`]: `p = 3 / (3 + e^beta)`.
#[inline]
pub fn depolarizing_p(beta: f64) -> f64 {
    3.0 / (3.0 + beta.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let xs = [0.1, -2.0, 3.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[-1e4, -1e4]) - (-1e4 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn beta_round_trip() {
        for p in [0.01, 0.2, 0.5, 0.74] {
            assert!((depolarizing_p(depolarizing_beta(p)) - p).abs() < 1e-14);
        }
        assert_eq!(depolarizing_beta(0.75), 0.0);
    }
}
