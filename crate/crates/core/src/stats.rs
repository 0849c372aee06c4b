//! One-sample Kolmogorov-Smirnov test.

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x: Vec<f64> = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Survival function of the Kolmogorov distribution,
/// `2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 t^2)`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of a statistic `d` from `n` samples, with the usual
/// small-sample correction of the scale.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let s = (n as f64).sqrt();
    kolmogorov_survival((s + 0.12 + 0.11 / s) * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn survival_matches_tabulated_values() {
        // 2 * (e^-2 - e^-8 + e^-18 - ...).
        assert!((kolmogorov_survival(1.0) - 0.269_999_671_6).abs() < 1e-9);
        // Classical 5% critical value.
        assert!((kolmogorov_survival(1.358_1) - 0.05).abs() < 1e-4);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn statistic_of_a_single_point() {
        assert_eq!(ks_statistic(&[0.25], |x| x), 0.75);
    }

    #[test]
    fn uniform_samples_pass_and_skewed_samples_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        assert!(ks_p_value(ks_statistic(&u, |x| x), u.len()) > 0.01);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_p_value(ks_statistic(&sq, |x| x), sq.len()) < 1e-6);
    }
}
