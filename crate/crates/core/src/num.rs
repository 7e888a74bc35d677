//! Scalar helpers that `core` does not provide.

/// Two-sided 95% normal critical value used for Wald intervals and tests.
pub const Z_975: f64 = 1.96;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    libm::erfc(t.abs() / core::f64::consts::SQRT_2).min(1.0)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Kolmogorov-Smirnov distance between a sample and N(0, 1), with the
/// asymptotic p-value.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    let n = sample.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut xs = alloc::vec::Vec::from(sample);
    xs.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let d = xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = normal_cdf(x);
        d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf)
    });
    let lambda = (sqrt(nf) + 0.12 + 0.11 / sqrt(nf)) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * libm::exp(-2.0 * kf * kf * lambda * lambda);
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_tail_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-12);
        assert!((two_sided_p(-1.959963984540054) - 0.05).abs() < 1e-12);
        assert_eq!(two_sided_p(0.0), 1.0);
    }

    #[test]
    fn logistic_at_one() {
        // 1 / (1 + e^-1)
        assert!((logistic(1.0) - 0.7310585786300049).abs() < 1e-15);
    }
}
