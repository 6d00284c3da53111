//! Small statistics helpers for the Monte-Carlo checks: moments, batch
//! means for autocorrelated series, and a moment-based normality test.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean assuming independent samples.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Unbiased sample covariance of paired observations.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() as f64 - 1.0)
}

/// Median (of a copy; input untouched).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard error of the mean of an autocorrelated series, by batch
/// means: the series is cut into `n_batches` contiguous batches and the
/// batch averages are treated as independent.
pub fn batch_std_error(xs: &[f64], n_batches: usize) -> f64 {
    assert!(n_batches >= 2 && xs.len() >= 2 * n_batches);
    let batch_len = xs.len() / n_batches;
    let batches: Vec<f64> = (0..n_batches)
        .map(|b| mean(&xs[b * batch_len..(b + 1) * batch_len]))
        .collect();
    std_error(&batches)
}

/// Jarque-Bera statistic: `n/6 (skewness^2 + excess_kurtosis^2 / 4)`.
/// Asymptotically chi-squared with 2 degrees of freedom under normality.
pub fn jarque_bera(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    n / 6.0 * (skew * skew + kurt * kurt / 4.0)
}

/// Upper quantile of chi-squared with 2 degrees of freedom (exponential
/// with mean 2, so the quantile is closed-form): `P(X > q) = alpha`.
pub fn chi2_2df_critical(alpha: f64) -> f64 {
    -2.0 * alpha.ln()
}

/// Moment-based normality test at level `alpha`; true = consistent with
/// a normal distribution.
pub fn normality_pass(xs: &[f64], alpha: f64) -> bool {
    jarque_bera(xs) <= chi2_2df_critical(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn moments_basic() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn covariance_of_identical_series_is_variance() {
        let xs = [0.3, -1.2, 0.8, 2.0, -0.4];
        assert!((covariance(&xs, &xs) - variance(&xs)).abs() < 1e-15);
    }

    #[test]
    fn jb_accepts_gaussian_rejects_uniform() {
        let mut rng = replica_rng(11, 0);
        let gauss: Vec<f64> = (0..20_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        assert!(normality_pass(&gauss, 0.01));
        let unif: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        assert!(!normality_pass(&unif, 0.01));
    }

    #[test]
    fn chi2_critical_value() {
        // Textbook value at the 1% level.
        assert!((chi2_2df_critical(0.01) - 9.21034).abs() < 1e-4);
    }

    #[test]
    fn batch_means_larger_for_correlated_series() {
        let mut rng = replica_rng(5, 0);
        // AR(1)-like series with strong positive correlation.
        let mut x = 0.0;
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.95 * x + e;
                x
            })
            .collect();
        let naive = std_error(&xs);
        let batched = batch_std_error(&xs, 20);
        assert!(batched > 2.0 * naive, "batched {batched} vs naive {naive}");
    }
}
