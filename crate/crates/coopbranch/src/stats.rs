//! Small statistics helpers shared by the estimators and the test suites.

use crate::error::{Error, Result};

/// Two-sided z threshold for alpha = 0.001.
pub const Z_ALPHA_001: f64 = 3.290526731491926;

/// Two-sided z threshold for alpha = 0.05.
pub const Z_ALPHA_05: f64 = 1.959963984540054;

/// Sample mean and standard error of the mean.
#[must_use]
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of a binomial proportion estimate.
#[must_use]
pub fn binomial_se(p_hat: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// Splits a series into `batches` contiguous batches and returns the mean of
/// batch means together with its standard error. The batch structure absorbs
/// short-range autocorrelation that a naive i.i.d. formula would ignore.
pub fn batch_means(series: &[f64], batches: usize) -> Result<(f64, f64)> {
    if batches < 2 {
        return Err(Error::invalid("batch_means needs at least 2 batches"));
    }
    if series.len() < batches {
        return Err(Error::invalid(format!(
            "series of length {} cannot form {} batches",
            series.len(),
            batches
        )));
    }
    let per = series.len() / batches;
    let ms: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * per;
            // last batch takes the remainder
            let hi = if b + 1 == batches {
                series.len()
            } else {
                lo + per
            };
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    Ok(mean_se(&ms))
}

/// Weighted least squares line fit y = a + b x. Weights are inverse
/// variances. Returns (a, b, se_a, se_b).
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let n = xs.len();
    if n < 3 || ys.len() != n || ws.len() != n {
        return Err(Error::DegenerateFit {
            needed: 3,
            got: n.min(ys.len()).min(ws.len()),
        });
    }
    let sw: f64 = ws.iter().sum();
    let sx: f64 = xs.iter().zip(ws).map(|(x, w)| w * x).sum();
    let sy: f64 = ys.iter().zip(ws).map(|(y, w)| w * y).sum();
    let xbar = sx / sw;
    let ybar = sy / sw;
    let sxx: f64 = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (x - xbar) * (x - xbar))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("degenerate abscissae in weighted fit"));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - xbar) * (y - ybar))
        .sum();
    let b = sxy / sxx;
    let a = ybar - b * xbar;
    let se_b = (1.0 / sxx).sqrt();
    let se_a = (1.0 / sw + xbar * xbar / sxx).sqrt();
    Ok((a, b, se_a, se_b))
}

/// Two-proportion z statistic for H0: p1 == p2 (pooled variance).
#[must_use]
pub fn two_proportion_z(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    let p1 = k1 as f64 / n1 as f64;
    let p2 = k2 as f64 / n2 as f64;
    let pool = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pool * (1.0 - pool) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return 0.0;
    }
    (p1 - p2) / se
}

/// Two-sample z statistic from two (mean, se) summaries.
#[must_use]
pub fn two_mean_z(m1: f64, se1: f64, m2: f64, se2: f64) -> f64 {
    (m1 - m2) / (se1 * se1 + se2 * se2).sqrt()
}

/// Chi-square acceptance interval by the Wilson-Hilferty cube approximation,
/// good to a few parts in 1e3 for df >= 20, which is ample for an
/// alpha = 0.001 gate on hundreds of degrees of freedom.
#[must_use]
pub fn chi_square_bounds(df: f64, z: f64) -> (f64, f64) {
    let c = 2.0 / (9.0 * df);
    let lo = df * (1.0 - c - z * c.sqrt()).powi(3);
    let hi = df * (1.0 - c + z * c.sqrt()).powi(3);
    (lo.max(0.0), hi)
}

/// Pearson statistic of observed counts against a Poisson mean per cell.
/// Cells with tiny expectation should be merged by the caller.
#[must_use]
pub fn poisson_pearson_statistic(observed: &[u64], expected: f64) -> f64 {
    observed
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        let sd = (5.0f64 / 3.0).sqrt(); // sample variance 5/3
        assert!((se - sd / 2.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_flat_series_small_se() {
        let xs: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        let (m, se) = batch_means(&xs, 20).unwrap();
        assert!((m - 0.5).abs() < 1e-12);
        assert!(
            se < 1e-12,
            "alternating series has flat batch means, got se {se}"
        );
    }

    #[test]
    fn batch_means_rejects_short_series() {
        assert!(batch_means(&[1.0, 2.0], 20).is_err());
    }

    #[test]
    fn weighted_fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 1.5 * x).collect();
        let ws = [1.0, 4.0, 2.0, 1.0, 0.5];
        let (a, b, _, _) = weighted_line_fit(&xs, &ys, &ws).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b + 1.5).abs() < 1e-12);
    }

    #[test]
    fn chi_square_bounds_cover_df() {
        // The mean of a chi-square is df; bounds at any z must straddle it.
        for df in [20.0, 100.0, 1000.0] {
            let (lo, hi) = chi_square_bounds(df, Z_ALPHA_001);
            assert!(lo < df && df < hi);
        }
        // Spot value: chi2_{0.9995}(100) = 153.16696 (regularized incomplete
        // gamma inversion); the cube-root approximation lands within 1.
        let (_, hi) = chi_square_bounds(100.0, Z_ALPHA_001);
        assert!((hi - 153.16696).abs() < 1.0, "got {hi}");
    }

    #[test]
    fn two_proportion_z_symmetry() {
        let z = two_proportion_z(50, 1000, 70, 1000);
        let z2 = two_proportion_z(70, 1000, 50, 1000);
        assert!((z + z2).abs() < 1e-12);
        assert!(z < 0.0);
    }
}
