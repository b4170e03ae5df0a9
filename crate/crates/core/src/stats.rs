//! Sample statistics and small weighted fits used by the studies.

use serde::Serialize;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    /// Number of independent samples behind `stderr`.
    pub n: usize,
}

/// Mean and standard error of `samples`. With `paired`, consecutive samples
/// are antithetic partners and are averaged before estimating the variance.
pub fn summarize(samples: &[f64], paired: bool) -> Summary {
    if paired {
        let pairs: Vec<f64> = samples
            .chunks(2)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        return summarize(&pairs, false);
    }
    let n = samples.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            stderr: f64::NAN,
            n,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary { mean, stderr: 0.0, n };
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Summary {
        mean,
        stderr: (var / n as f64).sqrt(),
        n,
    }
}

/// Weighted least-squares fit `y ≈ a + b x` with known standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub se_intercept: f64,
    pub se_slope: f64,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn weighted_line_fit(x: &[f64], y: &[f64], sd: &[f64]) -> LineFit {
    assert!(x.len() == y.len() && y.len() == sd.len() && x.len() >= 2);
    let w: Vec<f64> = sd.iter().map(|s| 1.0 / (s * s)).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    LineFit {
        intercept,
        slope,
        se_intercept: (sxx / det).sqrt(),
        se_slope: (sw / det).sqrt(),
    }
}

/// Weighted fit `y ≈ c x` through the origin; returns `(c, se(c))`.
pub fn weighted_proportional_fit(x: &[f64], y: &[f64], sd: &[f64]) -> (f64, f64) {
    let sxx: f64 = x.iter().zip(sd).map(|(x, s)| x * x / (s * s)).sum();
    let sxy: f64 = x.iter().zip(y).zip(sd).map(|((x, y), s)| x * y / (s * s)).sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

/// Fit of `ln|y| ≈ a + b ln x`, weighting each point by its relative error
/// `sd/|y|` (delta method).
pub fn log_log_fit(x: &[f64], y: &[f64], sd: &[f64]) -> LineFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.abs().ln()).collect();
    let lsd: Vec<f64> = y.iter().zip(sd).map(|(y, s)| (s / y.abs()).max(1e-12)).collect();
    weighted_line_fit(&lx, &ly, &lsd)
}
