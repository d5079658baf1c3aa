//! Replica-level summary statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A point estimate with a 95% normal-approximation confidence interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicas: usize,
    /// Free-form extra numbers (half-horizon estimates, censoring rates, ...).
    pub diagnostics: BTreeMap<String, f64>,
}

impl EstimateResult {
    /// Mean of `samples` with a normal CI built from the sample standard
    /// deviation. Panics on an empty slice.
    pub fn from_samples(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "estimate from zero replicas");
        let (mean, se) = mean_and_se(samples);
        Self::from_mean_se(mean, se, samples.len())
    }

    pub fn from_mean_se(mean: f64, se: f64, replicas: usize) -> Self {
        Self {
            point: mean,
            ci_low: mean - Z95 * se,
            ci_high: mean + Z95 * se,
            replicas,
            diagnostics: BTreeMap::new(),
        }
    }

    /// Frequency of `true` among `flags` with a Wald interval.
    pub fn proportion(flags: &[bool]) -> Self {
        assert!(!flags.is_empty(), "estimate from zero replicas");
        let n = flags.len() as f64;
        let p = flags.iter().filter(|&&f| f).count() as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        Self::from_mean_se(p, se, flags.len())
    }

    /// Standard error implied by the interval.
    pub fn standard_error(&self) -> f64 {
        (self.ci_high - self.ci_low) / (2.0 * Z95)
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn overlaps(&self, other: &EstimateResult) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }

    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }

    pub fn with_diagnostic(mut self, key: impl Into<String>, value: f64) -> Self {
        self.diagnostics.insert(key.into(), value);
        self
    }
}

/// Sample mean and standard error of the mean (zero for a single sample).
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_brackets_point() {
        let r = EstimateResult::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.point, 2.5);
        assert!(r.ci_low <= r.point && r.point <= r.ci_high);
        assert_eq!(r.replicas, 4);
        let se = (1.25f64 * 4.0 / 3.0 / 4.0).sqrt();
        assert!((r.standard_error() - se).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_degenerate_interval() {
        let r = EstimateResult::from_samples(&[7.0]);
        assert_eq!((r.ci_low, r.point, r.ci_high), (7.0, 7.0, 7.0));
    }

    #[test]
    fn proportion_interval() {
        let flags: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        let r = EstimateResult::proportion(&flags);
        assert!((r.point - 0.25).abs() < 1e-12);
        assert!(r.excludes_zero());
    }
}
