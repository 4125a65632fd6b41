//! Summary statistics for logs and repeated evaluations.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Trailing moving average: one value per full window, so a series of
/// length `n` yields `n − window + 1` points.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// Half-width of the two-sided Student-t interval.
    pub half_width: f64,
    pub level: f64,
}

impl MeanCi {
    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Sample mean with a two-sided `level` confidence interval. A single
/// sample gets a zero-width interval.
pub fn mean_ci(values: &[f64], level: f64) -> MeanCi {
    let n = values.len();
    let mean = if n == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / n as f64
    };
    if n < 2 {
        return MeanCi {
            n,
            mean,
            std_dev: 0.0,
            half_width: 0.0,
            level,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.5 + level / 2.0);
    MeanCi {
        n,
        mean,
        std_dev: sd,
        half_width: t * sd / (n as f64).sqrt(),
        level,
    }
}
