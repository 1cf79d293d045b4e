//! Bootstrap resampling, Welch's t-test and histogram helpers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::nearest_rank;
use crate::error::{Error, Result};
use crate::seed;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Means of `n_resamples` subsets of `subset_size` draws with replacement.
pub fn bootstrap_means(samples: &[f64], subset_size: usize, n_resamples: usize, seed_value: u64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one sample"));
    }
    if subset_size == 0 {
        return Err(Error::invalid("bootstrap subset size must be at least 1"));
    }
    let mut rng = seed::rng(seed_value);
    let n = samples.len();
    Ok((0..n_resamples)
        .map(|_| {
            let total: f64 = (0..subset_size).map(|_| samples[rng.random_range(0..n)]).sum();
            total / subset_size as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub offset: f64,
}

/// Welch's unequal-variance t-test of `x - offset` against `y`, two-sided.
pub fn unpaired_t_test(x: &[f64], y: &[f64], offset: f64) -> Result<TTest> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::invalid("t-test needs at least two samples per group"));
    }
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let mean_x = mean(x) - offset;
    let mean_y = mean(y);
    let (vx, vy) = (variance(x) / nx, variance(y) / ny);
    let se2 = vx + vy;
    let diff = mean_x - mean_y;
    if se2 == 0.0 {
        let (t, p_value) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            df: nx + ny - 2.0,
            p_value,
            mean_x,
            mean_y,
            offset,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(e.to_string()))?;
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        df,
        p_value,
        mean_x,
        mean_y,
        offset,
    })
}

/// Percentile interval `[alpha/2, 1 - alpha/2]` by the nearest-rank rule.
pub fn percentile_interval(values: &[f64], per_mille_low: usize, per_mille_high: usize) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some((
        nearest_rank(&sorted, per_mille_low, 1000),
        nearest_rank(&sorted, per_mille_high, 1000),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over the sample range; the last bin is closed.
pub fn histogram(values: &[f64], n_bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|b| HistogramBin {
            left: lo + b as f64 * width,
            right: lo + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        bins[b].count += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let x = [1.0, 2.0, 3.0];
        let r = unpaired_t_test(&x, &x, 0.0).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_fixture_matches_hand_computation() {
        // {0.75, 1.75, 2.75} vs {1, 2, 3}: both variances 1, so
        // t = -0.25 / sqrt(2/3) and df = (2/3)^2 / (2 * (1/3)^2 / 2) = 4.
        let r = unpaired_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.25).unwrap();
        let t = -0.25 / (2.0f64 / 3.0).sqrt();
        assert!((r.t - t).abs() < 1e-9);
        assert!((r.df - 4.0).abs() < 1e-9);
        // 2 * scipy.stats.t.sf(0.30618621784789724, 4)
        assert!((r.p_value - 0.774_737_813_512_510_6).abs() < 1e-9, "{}", r.p_value);
    }

    #[test]
    fn separated_samples_are_significant() {
        let x: Vec<f64> = (0..30).map(|i| 10.0 + (i % 5) as f64 * 0.1).collect();
        let y: Vec<f64> = (0..30).map(|i| (i % 7) as f64 * 0.1).collect();
        let r = unpaired_t_test(&x, &y, 0.0).unwrap();
        assert!(r.p_value < 0.01);
        assert!(r.t > 0.0);
    }

    #[test]
    fn degenerate_variances() {
        let r = unpaired_t_test(&[2.0, 2.0], &[2.0, 2.0, 2.0], 0.0).unwrap();
        assert_eq!((r.t, r.p_value), (0.0, 1.0));
        let r = unpaired_t_test(&[3.0, 3.0], &[2.0, 2.0], 0.0).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(unpaired_t_test(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn bootstrap_constant_and_unit_subsets() {
        let means = bootstrap_means(&[4.5; 10], 8, 500, 1).unwrap();
        assert!(means.iter().all(|&m| m == 4.5));
        let samples = [1.0, 2.0, 7.0];
        let draws = bootstrap_means(&samples, 1, 300, 2).unwrap();
        assert!(draws.iter().all(|d| samples.contains(d)));
        assert!(bootstrap_means(&[], 8, 10, 0).is_err());
    }

    #[test]
    fn bootstrap_mean_converges() {
        let samples: Vec<f64> = (1..=20).map(|i| (i * i) as f64).collect();
        let means = bootstrap_means(&samples, 8, 100_000, 3).unwrap();
        let m = mean(&means);
        assert!((m - mean(&samples)).abs() / mean(&samples) < 0.01);
    }

    #[test]
    fn bootstrap_commutes_with_shift() {
        let samples = [0.3, 1.9, 2.2, 5.0, 0.1];
        let shifted: Vec<f64> = samples.iter().map(|x| x + 10.0).collect();
        let a = bootstrap_means(&samples, 8, 200, 9).unwrap();
        let b = bootstrap_means(&shifted, 8, 200, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x + 10.0 - y).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let h = histogram(&values, 10);
        assert_eq!(h.len(), 10);
        assert!(h.iter().all(|b| b.count == 10));
        assert_eq!(histogram(&[3.0, 3.0], 4)[0].count, 2);
    }
}
