//! Small sample-statistics helpers used by the experiment runner.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean and standard error of the mean of independent observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub std_err: f64,
}

impl MeanSe {
    /// Summarise i.i.d. observations. A single observation has zero standard error.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanSe { mean: f64::NAN, std_err: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return MeanSe { mean, std_err: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        MeanSe { mean, std_err: (var / n as f64).sqrt() }
    }

    /// Number of standard errors separating the mean from `value`.
    pub fn z_from(&self, value: f64) -> f64 {
        (self.mean - value) / self.std_err
    }
}

/// Ordinary least-squares slope of `ys` against its index, with the two-sided
/// t-test of zero slope at level `alpha`. Returns `(slope, t_stat, rejects_zero)`.
pub fn slope_t_test(ys: &[f64], alpha: f64) -> (f64, f64, bool) {
    let n = ys.len();
    if n < 3 {
        return (0.0, 0.0, false);
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| (y - intercept - slope * i as f64).powi(2))
        .sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    if se == 0.0 {
        return (slope, 0.0, slope != 0.0);
    }
    let t = slope / se;
    let crit = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map(|d| d.inverse_cdf(1.0 - alpha / 2.0))
        .unwrap_or(1.96);
    (slope, t, t.abs() > crit)
}
