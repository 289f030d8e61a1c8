//! Scalar helpers shared by the safety and efficacy models.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse logit, stable for large |x|.
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// (log p, log(1 - p)) for p = inv_logit(x).
#[inline]
pub fn log_probs(x: f64) -> (f64, f64) {
    let l = log1p_exp(x);
    (x - l, -l)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Log of sum of exponentials.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Geometric mean; zero if any entry is zero.
pub fn geometric_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    if xs.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

pub(crate) fn in_unit_open(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_logit_extremes() {
        assert_eq!(inv_logit(0.0), 0.5);
        assert!((inv_logit(logit(0.1)) - 0.1).abs() < 1e-15);
        assert!(inv_logit(700.0) == 1.0);
        assert!(inv_logit(-700.0) > 0.0);
        let (lp, lq) = log_probs(-700.0);
        assert!((lp + 700.0).abs() < 1e-9 && lq.abs() < 1e-300);
    }

    #[test]
    fn geometric_mean_bounds() {
        assert!((geometric_mean(&[0.4, 0.4, 0.4]) - 0.4).abs() < 1e-15);
        assert_eq!(geometric_mean(&[0.4, 0.0, 0.9]), 0.0);
        let g = geometric_mean(&[0.2, 0.5, 0.8]);
        assert!(g > 0.2 && g < 0.8);
    }

    #[test]
    fn normal_round_trip() {
        for &p in &[1e-6, 0.025, 0.5, 0.9] {
            assert!((std_normal_cdf(std_normal_quantile(p)) - p).abs() < 1e-9);
        }
    }
}
