//! Aggregation over replications.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Streaming mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sample standard deviation; 0 for fewer than two values.
    pub fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        iter.into_iter().for_each(|x| w.push(x));
        w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Two-pass mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd { mean: f64::NAN, std: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

pub fn mean(xs: &[f64]) -> f64 {
    mean_std(xs).mean
}

fn resample_mean<R: Rng + ?Sized>(xs: &[f64], rng: &mut R) -> f64 {
    (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64
}

fn percentile_interval(mut draws: Vec<f64>, level: f64) -> (f64, f64) {
    draws.sort_by(f64::total_cmp);
    let n = draws.len();
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| draws[((q * n as f64) as usize).min(n - 1)];
    (at(tail), at(1.0 - tail))
}

/// Percentile bootstrap interval for the mean of `xs`.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(xs: &[f64], resamples: usize, level: f64, rng: &mut R) -> (f64, f64) {
    if xs.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    percentile_interval((0..resamples).map(|_| resample_mean(xs, rng)).collect(), level)
}

/// Percentile bootstrap interval for `mean(a) - mean(b)`, resampling the
/// two samples independently.
pub fn bootstrap_diff_ci<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> (f64, f64) {
    if a.is_empty() || b.is_empty() || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let draws = (0..resamples).map(|_| resample_mean(a, rng) - resample_mean(b, rng)).collect();
    percentile_interval(draws, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn known_values() {
        let m = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean, 5.0);
        assert!((m.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]).std, 0.0);
    }

    #[test]
    fn bootstrap_brackets_the_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&xs, 2000, 0.95, &mut rng::stream(1, &[]));
        let m = mean(&xs);
        assert!(lo < m && m < hi);
    }

    proptest! {
        #[test]
        fn welford_agrees_with_two_pass(xs in proptest::collection::vec(-1e3f64..1e3, 1..200)) {
            let w: Welford = xs.iter().copied().collect();
            let t = mean_std(&xs);
            prop_assert!((w.mean() - t.mean).abs() <= 1e-12 * t.mean.abs().max(1.0));
            prop_assert!((w.std() - t.std).abs() <= 1e-12 * t.std.max(1.0));
        }
    }
}
