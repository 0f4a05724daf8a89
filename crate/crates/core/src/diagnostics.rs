//! Goodness-of-fit tests and Monte-Carlo error estimates used to validate
//! samplers and binning.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Result of a hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Pearson chi-square test of observed counts against expected counts.
/// Cells with expected count below `min_expected` are pooled into their
/// right neighbour (the last cell pools leftwards).
pub fn chi_square_gof(observed: &[f64], expected: &[f64], min_expected: f64) -> Result<TestResult> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::InvalidArgument("chi-square needs ≥ 2 matching cells".into()));
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    if cells.len() < 2 {
        return Err(Error::InvalidArgument("fewer than 2 cells after pooling".into()));
    }
    let statistic: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (cells.len() - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(TestResult {
        statistic,
        df,
        p_value: 1.0 - dist.cdf(statistic),
    })
}

/// Asymptotic Kolmogorov survival function P(K > x).
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("KS test needs samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    // Stephens' small-sample correction.
    let sqn = n.sqrt();
    let p = kolmogorov_sf((sqn + 0.12 + 0.11 / sqn) * d);
    Ok(TestResult {
        statistic: d,
        df: n,
        p_value: p,
    })
}

/// Mean and batch-means Monte-Carlo standard error of a correlated series.
pub fn batch_means(xs: &[f64], n_batches: usize) -> Result<(f64, f64)> {
    if n_batches < 2 || xs.len() < n_batches {
        return Err(Error::InvalidArgument("need at least 2 batches of ≥ 1 sample".into()));
    }
    let b = xs.len() / n_batches;
    let used = &xs[..b * n_batches];
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    let bm: Vec<f64> = used.chunks(b).map(|c| c.iter().sum::<f64>() / b as f64).collect();
    let var = bm.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n_batches - 1) as f64;
    Ok((mean, (var / n_batches as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chi_square_perfect_fit() {
        let r = chi_square_gof(&[10.0, 20.0, 30.0], &[10.0, 20.0, 30.0], 5.0).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_relative_eq!(r.p_value, 1.0);
        assert_eq!(r.df, 2.0);
    }

    #[test]
    fn chi_square_known_value() {
        // (12-10)^2/10 + (8-10)^2/10 = 0.8 on 1 df; P(X > 0.8) = 0.371093369.
        let r = chi_square_gof(&[12.0, 8.0], &[10.0, 10.0], 5.0).unwrap();
        assert_relative_eq!(r.statistic, 0.8, epsilon = 1e-12);
        assert_relative_eq!(r.p_value, 0.371_093_369_522_697_4, epsilon = 1e-8);
    }

    #[test]
    fn chi_square_pools_sparse_tail() {
        let r = chi_square_gof(&[50.0, 40.0, 3.0, 1.0], &[50.0, 40.0, 2.0, 2.0], 5.0).unwrap();
        assert_eq!(r.df, 1.0);
    }

    #[test]
    fn kolmogorov_known_quantile() {
        // 1% critical value of the Kolmogorov distribution.
        assert_relative_eq!(kolmogorov_sf(1.627_62), 0.01, epsilon = 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_grid_is_uniform() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_test(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(r.statistic <= 0.0005 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn batch_means_of_constant_series() {
        let (m, se) = batch_means(&[2.0; 100], 10).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
        assert!(batch_means(&[1.0], 2).is_err());
    }
}
