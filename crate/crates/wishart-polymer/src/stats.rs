//! Two-sample testing and the report type shared by every checker.

use crate::rng::Seed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
}

/// Outcome of a single statistical or algebraic check.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: Option<f64>,
    pub passed: bool,
    pub n_samples: usize,
    pub seed: Seed,
    pub notes: String,
}

impl TestReport {
    /// A deterministic check: passes iff `statistic <= threshold`.
    pub fn deterministic(name: &str, statistic: f64, threshold: f64, n: usize, seed: &Seed, notes: &str) -> Self {
        TestReport {
            name: name.to_string(),
            statistic,
            threshold,
            p_value: None,
            passed: statistic <= threshold,
            n_samples: n,
            seed: seed.clone(),
            notes: notes.to_string(),
        }
    }

    /// A sigma-distance check: passes iff the statistic (in combined standard
    /// errors) stays below the threshold.
    pub fn sigma(name: &str, sigmas: f64, threshold: f64, n: usize, seed: &Seed, notes: &str) -> Self {
        Self::deterministic(name, sigmas, threshold, n, seed, notes)
    }
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_n - G_m|.
pub fn ks_statistic(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_unstable_by(|x, y| x.total_cmp(y));
    b.sort_unstable_by(|x, y| x.total_cmp(y));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = a[i].min(b[j]);
        while i < n && a[i] <= t {
            i += 1;
        }
        while j < m && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    Ok(d)
}

/// Complementary CDF of the Kolmogorov distribution, Q(z) = 2 Σ (-1)^{k-1} e^{-2k²z²}
/// (Numerical Recipes form with the small-z expansion).
fn kolmogorov_q(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if z < 1.18 {
        let y = (-1.233_700_550_136_169_7 / (z * z)).exp();
        let p = 2.256_758_334_191_025 * (-y.ln()).sqrt() * (y + y.powf(9.0) + y.powf(25.0) + y.powf(49.0));
        return (1.0 - p).clamp(0.0, 1.0);
    }
    let x = (-2.0 * z * z).exp();
    (2.0 * (x - x.powi(4) + x.powi(9))).clamp(0.0, 1.0)
}

/// Asymptotic two-sample KS p-value.
pub fn ks_p_value(statistic: f64, n: usize, m: usize) -> f64 {
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    // Stephens' finite-sample correction
    let sq = ne.sqrt();
    let z = (sq + 0.12 + 0.11 / sq) * statistic;
    kolmogorov_q(z)
}

/// Two-sample KS test: passes iff the p-value is at least `level`.
pub fn two_sample_test(
    name: &str,
    xs: &[f64],
    ys: &[f64],
    level: f64,
    seed: &Seed,
) -> Result<TestReport, StatsError> {
    let d = ks_statistic(xs, ys)?;
    let p = ks_p_value(d, xs.len(), ys.len());
    Ok(TestReport {
        name: name.to_string(),
        statistic: d,
        threshold: level,
        p_value: Some(p),
        passed: p >= level,
        n_samples: xs.len() + ys.len(),
        seed: seed.clone(),
        notes: String::new(),
    })
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard error of the mean for a correlated sequence, by batch means.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    assert!(batches >= 2 && xs.len() >= 2 * batches);
    let per = xs.len() / batches;
    let used = per * batches;
    let mean = xs[..used].iter().sum::<f64>() / used as f64;
    let batch_means: Vec<f64> = (0..batches)
        .map(|b| xs[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (mean, (var / batches as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Gamma};

    #[test]
    fn identical_samples_have_zero_statistic() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        let report = two_sample_test("same", &xs, &xs, 0.01, &Seed::new(0)).unwrap();
        assert_eq!(report.statistic, 0.0);
        assert!(report.passed);
    }

    #[test]
    fn disjoint_samples_have_unit_statistic() {
        let xs = vec![1.0, 2.0, 3.0];
        let ys = vec![10.0, 11.0, 12.0];
        assert_eq!(ks_statistic(&xs, &ys).unwrap(), 1.0);
    }

    #[test]
    fn partial_overlap_value() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys = vec![1.0, 2.0, 3.0, 4.0];
        assert!((ks_statistic(&xs, &ys).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_sample_is_an_error() {
        assert!(ks_statistic(&[], &[1.0]).is_err());
        assert!(ks_statistic(&[1.0], &[]).is_err());
    }

    #[test]
    fn same_distribution_passes_at_one_percent() {
        // calibration: 40 independent null runs, expect ≥ 95% passes
        let mut passes = 0;
        for trial in 0..40u64 {
            let seed = Seed::new(4000 + trial);
            let mut rng = seed.rng();
            let xs: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
            let ys: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
            if two_sample_test("null", &xs, &ys, 0.01, &seed).unwrap().passed {
                passes += 1;
            }
        }
        assert!(passes >= 38, "only {passes}/40 null runs passed");
    }

    #[test]
    fn shifted_distribution_fails() {
        let seed = Seed::new(4100);
        let mut rng = seed.rng();
        let g2 = Gamma::new(2.0, 1.0).unwrap();
        let g3 = Gamma::new(3.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| g2.sample(&mut rng)).collect();
        let ys: Vec<f64> = (0..10_000).map(|_| g3.sample(&mut rng)).collect();
        let report = two_sample_test("alt", &xs, &ys, 0.01, &seed).unwrap();
        assert!(!report.passed, "{report:?}");
    }

    #[test]
    fn p_value_magnitude_sane() {
        // D = 0.125 with n = m = 160: p ≈ 0.1523 with the Stephens
        // finite-sample correction (0.1641 uncorrected)
        let p = ks_p_value(0.125, 160, 160);
        assert!((p - 0.1523).abs() < 0.002, "{p}");
    }
}
