//! Summary statistics for replicated runs.

use serde::{Deserialize, Serialize};

const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub metric: String,
    pub mean: f64,
    /// Normal-approximation half-width; absent with fewer than two samples.
    pub ci95: Option<f64>,
    pub n: usize,
    pub failures: usize,
}

impl RunStats {
    pub fn from_samples(metric: impl Into<String>, samples: &[f64], failures: usize) -> Self {
        RunStats {
            metric: metric.into(),
            mean: mean(samples).unwrap_or(f64::NAN),
            ci95: ci95_half_width(samples),
            n: samples.len(),
            failures,
        }
    }
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn ci95_half_width(xs: &[f64]) -> Option<f64> {
    sample_sd(xs).map(|sd| Z95 * sd / (xs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_uses_sample_sd() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let sd = (5.0f64 / 3.0).sqrt();
        let hw = ci95_half_width(&xs).unwrap();
        assert!((hw - 1.96 * sd / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_no_ci() {
        let s = RunStats::from_samples("d", &[5.15], 0);
        assert_eq!(s.ci95, None);
        assert_eq!(s.n, 1);
        assert_eq!(s.mean, 5.15);
    }

    #[test]
    fn perfect_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fit_rejected() {
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
    }
}
