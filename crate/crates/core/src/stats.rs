//! Order-deterministic summary statistics.
//!
//! Every reduction here walks its input in index order with compensated
//! summation, so results depend only on the values and never on how they were
//! produced (thread count, chunking).

use serde::{Deserialize, Serialize};

/// A point estimate with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn new(mean: f64, se: f64) -> Self {
        Self { mean, se }
    }

    pub fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0 }
    }

    /// `|mean - target| <= z * se + slack`
    pub fn within(&self, target: f64, z: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= z * self.se + slack
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    compensated_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

/// Sample mean with the standard error `sd / sqrt(n)` of i.i.d. samples.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len();
    if n == 0 {
        return MeanSe::new(f64::NAN, f64::NAN);
    }
    MeanSe::new(mean(values), (variance(values) / n as f64).sqrt())
}

/// Standard error of a correlated series from non-overlapping batch means.
pub fn batch_means(values: &[f64], batches: usize) -> MeanSe {
    let n = values.len();
    if batches < 2 || n < batches {
        return mean_se(values);
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&values[b * size..(b + 1) * size]))
        .collect();
    MeanSe::new(mean(values), (variance(&means) / batches as f64).sqrt())
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Combined standard error of a difference of independent estimates.
pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = vec![1e16, 1.0, -1e16];
        values.extend(std::iter::repeat_n(1e-3, 1000));
        assert!((compensated_sum(values) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mean_se_of_constant_series() {
        let est = mean_se(&[3.0; 10]);
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.se, 0.0);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|x| -0.5 * x + 2.0).collect();
        let (s, c) = linear_fit(&x, &y);
        assert!((s + 0.5).abs() < 1e-14 && (c - 2.0).abs() < 1e-13);
    }

    #[test]
    fn batch_means_matches_iid_on_alternating_series() {
        let values: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let bm = batch_means(&values, 10);
        assert_eq!(bm.mean, 0.0);
        assert!(bm.se < 1e-12);
    }
}
