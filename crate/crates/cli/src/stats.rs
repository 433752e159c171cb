use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// How the 95% interval half-width is derived from the standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interval {
    /// mean ± 1.96·S_m
    #[default]
    Normal,
    /// mean ± t(0.975, N-1)·S_m
    StudentT,
}

impl Interval {
    pub fn multiplier(self, n: usize) -> f64 {
        match self {
            Interval::Normal => 1.96,
            Interval::StudentT if n >= 2 => StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975),
            Interval::StudentT => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub mean: f64,
    /// Sample standard deviation (N-1 denominator); 0 for a single sample.
    pub std_dev: f64,
    pub n: usize,
    pub std_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl StatsSummary {
    pub fn from_samples(xs: &[f64], interval: Interval) -> Option<StatsSummary> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let std_error = std_dev / (n as f64).sqrt();
        let half = interval.multiplier(n) * std_error;
        Some(StatsSummary {
            mean,
            std_dev,
            n,
            std_error,
            ci95_low: mean - half,
            ci95_high: mean + half,
        })
    }

    pub fn overlaps(&self, other: &StatsSummary) -> bool {
        self.ci95_low <= other.ci95_high && other.ci95_low <= self.ci95_high
    }
}
