//! Fidelity metrics between a ground-truth view and a reconstruction, and
//! the scalar reward built from them.
//!
//! SSIM uses whole-image statistics (a single window): population means,
//! variances and covariance over all pixels.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::Image;

/// PSNR reported for identical images.
pub const DEFAULT_PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("images differ in shape: {a_w}x{a_h}@{a_d}bit vs {b_w}x{b_h}@{b_d}bit")]
    ShapeMismatch {
        a_w: usize,
        a_h: usize,
        a_d: u8,
        b_w: usize,
        b_h: usize,
        b_d: u8,
    },
    #[error("lpips provider failed: {0}")]
    Lpips(String),
}

fn check_shape(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch {
            a_w: a.width(),
            a_h: a.height(),
            a_d: a.depth(),
            b_w: b.width(),
            b_h: b.height(),
            b_d: b.depth(),
        })
    }
}

/// Mean squared pixel error.
pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    check_shape(a, b)?;
    let sum: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.pixels().len() as f64)
}

/// `10 log10(R_I^2 / MSE)`, or [`DEFAULT_PSNR_CAP_DB`] when `MSE = 0`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    psnr_with_cap(a, b, DEFAULT_PSNR_CAP_DB)
}

pub fn psnr_with_cap(a: &Image, b: &Image, cap_db: f64) -> Result<f64, MetricsError> {
    let err = mse(a, b)?;
    Ok(psnr_from_mse(err, a.max_value() as f64, cap_db))
}

pub fn psnr_from_mse(mse: f64, peak: f64, cap_db: f64) -> f64 {
    if mse == 0.0 {
        cap_db
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L_d`; `None` means the image's `R_I`.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

/// Global single-window SSIM:
/// `(2 mu_a mu_b + C1)(2 cov + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))`
/// with `C1 = (k1 L_d)^2`, `C2 = (k2 L_d)^2`.
pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64, MetricsError> {
    check_shape(a, b)?;
    let n = a.pixels().len() as f64;
    let range = p.dynamic_range.unwrap_or(a.max_value() as f64);
    let c1 = (p.k1 * range).powi(2);
    let c2 = (p.k2 * range).powi(2);

    // means from exact integer sums, then centred second moments
    let (sa, sb) = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .fold((0u64, 0u64), |(sa, sb), (&x, &y)| (sa + x as u64, sb + y as u64));
    let (mu_a, mu_b) = (sa as f64 / n, sb as f64 / n);
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        let (dx, dy) = (x as f64 - mu_a, y as f64 - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    Ok(num / den)
}

/// Learned perceptual distance, supplied from outside the crate.
pub trait LpipsProvider: Send + Sync {
    fn lpips(&self, a: &Image, b: &Image) -> Result<f64, MetricsError>;
}

/// Constant-valued provider, handy for tests and dry runs.
#[derive(Clone, Copy, Debug)]
pub struct ConstantLpips(pub f64);

impl LpipsProvider for ConstantLpips {
    fn lpips(&self, _a: &Image, _b: &Image) -> Result<f64, MetricsError> {
        Ok(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            psnr: 0.02,
            ssim: 0.5,
            lpips: -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardWarning {
    /// `w3 != 0` but no LPIPS provider is attached; the term was dropped.
    LpipsUnavailable,
}

impl fmt::Display for RewardWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardWarning::LpipsUnavailable => {
                write!(f, "lpips weight is non-zero but no provider is attached; term ignored")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reward {
    pub value: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub warning: Option<RewardWarning>,
}

/// Metric settings shared by every evaluation of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub weights: RewardWeights,
    pub ssim: SsimParams,
    pub psnr_cap_db: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            ssim: SsimParams::default(),
            psnr_cap_db: DEFAULT_PSNR_CAP_DB,
        }
    }
}

/// `w1 PSNR + w2 SSIM + w3 LPIPS`, the last term only with a provider.
pub fn reward(
    gt: &Image,
    recon: &Image,
    scoring: &ScoringConfig,
    lpips: Option<&dyn LpipsProvider>,
) -> Result<Reward, MetricsError> {
    let w = scoring.weights;
    let psnr = psnr_with_cap(gt, recon, scoring.psnr_cap_db)?;
    let ssim = ssim(gt, recon, &scoring.ssim)?;
    let (lpips, warning) = match lpips {
        Some(provider) => (Some(provider.lpips(gt, recon)?), None),
        None if w.lpips != 0.0 => (None, Some(RewardWarning::LpipsUnavailable)),
        None => (None, None),
    };
    let value = w.psnr * psnr + w.ssim * ssim + w.lpips * lpips.unwrap_or(0.0);
    Ok(Reward {
        value,
        psnr,
        ssim,
        lpips,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: usize, h: usize, px: &[u16]) -> Image {
        Image::new(w, h, 8, px.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = img(2, 2, &[1, 2, 3, 4]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&img(1, 1, &[255]), &img(1, 1, &[0])).unwrap(), 65025.0);
        assert_eq!(mse(&img(2, 1, &[0, 255]), &img(2, 1, &[255, 0])).unwrap(), 65025.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = img(2, 1, &[0, 0]);
        let b = img(1, 2, &[0, 0]);
        assert!(matches!(mse(&a, &b), Err(MetricsError::ShapeMismatch { .. })));
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b, &SsimParams::default()).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr(&img(1, 1, &[255]), &img(1, 1, &[0])).unwrap(), 0.0);
        let a = img(2, 2, &[9, 9, 9, 9]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!((psnr_from_mse(255.0 * 255.0 / 100.0, 255.0, 100.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_constants() {
        let p = SsimParams::default();
        let a = img(2, 2, &[50; 4]);
        assert_eq!(ssim(&a, &a.clone(), &p).unwrap(), 1.0);
        let b = img(2, 2, &[80; 4]);
        let s = ssim(&a, &b, &p).unwrap();
        assert!(s < 1.0 && s > 0.0);
    }

    #[test]
    fn anticorrelated_checkerboard_is_negative() {
        let a: Vec<u16> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 0 } else { 255 }).collect();
        let b: Vec<u16> = a.iter().map(|&v| 255 - v).collect();
        let s = ssim(&img(4, 4, &a), &img(4, 4, &b), &SsimParams::default()).unwrap();
        // means 127.5 each, variances 127.5^2, covariance -127.5^2
        let (mu, var) = (127.5f64, 127.5f64 * 127.5);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let expected = (2.0 * mu * mu + c1) * (-2.0 * var + c2) / ((2.0 * mu * mu + c1) * (2.0 * var + c2));
        assert!(s < 0.0);
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let a = img(2, 2, &[1, 2, 3, 4]);
        let r = reward(&a, &a, &ScoringConfig::default(), None).unwrap();
        assert!((r.value - 2.5).abs() < 1e-12);
        assert_eq!(r.warning, Some(RewardWarning::LpipsUnavailable));

        let b = img(2, 2, &[4, 2, 9, 0]);
        let projection = ScoringConfig {
            weights: RewardWeights { psnr: 1.0, ssim: 0.0, lpips: 0.0 },
            ..ScoringConfig::default()
        };
        let r = reward(&a, &b, &projection, None).unwrap();
        assert_eq!(r.value, psnr(&a, &b).unwrap());
        assert_eq!(r.warning, None);

        let mock = ConstantLpips(0.342);
        let r = reward(&a, &b, &ScoringConfig::default(), Some(&mock)).unwrap();
        let expected = 0.02 * psnr(&a, &b).unwrap() + 0.5 * ssim(&a, &b, &SsimParams::default()).unwrap() - 0.342;
        assert!((r.value - expected).abs() < 1e-12);
        assert_eq!(r.lpips, Some(0.342));
    }

    fn pair() -> impl Strategy<Value = (Image, Image)> {
        (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(0u16..=255, w * h),
                proptest::collection::vec(0u16..=255, w * h),
            )
                .prop_map(move |(a, b)| (img(w, h, &a), img(w, h, &b)))
        })
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric((a, b) in pair()) {
            let p = SsimParams::default();
            prop_assert!(mse(&a, &b).unwrap() >= 0.0);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b, &p).unwrap() - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
            prop_assert!(ssim(&a, &b, &p).unwrap() <= 1.0 + 1e-12);
            prop_assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
        }

        #[test]
        fn psnr_strictly_decreasing_in_mse(m1 in 1e-6f64..1e5, dm in 1e-3f64..1e5) {
            prop_assert!(psnr_from_mse(m1, 255.0, 100.0) > psnr_from_mse(m1 + dm, 255.0, 100.0));
        }

        #[test]
        fn reward_is_affine_in_each_weight((a, b) in pair(), w1 in -2.0f64..2.0, w2 in -2.0f64..2.0) {
            let s = |w1, w2| reward(&a, &b, &ScoringConfig {
                weights: RewardWeights { psnr: w1, ssim: w2, lpips: 0.0 },
                ..ScoringConfig::default()
            }, None).unwrap().value;
            let base = s(0.0, 0.0);
            prop_assert_eq!(base, 0.0);
            prop_assert!((s(w1, w2) - (s(w1, 0.0) + s(0.0, w2))).abs() < 1e-9);
        }
    }
}
