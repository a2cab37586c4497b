//! Frame-selection policies.
//!
//! A policy looks at the age vector at a decision slot and returns a
//! binary mask over cameras: which latest frames enter the reconstruction.

use serde::{Deserialize, Serialize};

use crate::aoi::AoiVector;
use crate::Slot;

pub mod mlp;
pub mod ppo;

pub use mlp::{Activation, Adam, Mlp};
pub use ppo::{PolicyParams, PpoAgent, PpoConfig, PpoError};

/// `Omega(t)`: one inclusion flag per camera.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionMask {
    pub omega: Vec<bool>,
}

impl SelectionMask {
    pub fn all(n: usize) -> Self {
        Self { omega: vec![true; n] }
    }

    pub fn none(n: usize) -> Self {
        Self { omega: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn count(&self) -> usize {
        self.omega.iter().filter(|&&w| w).count()
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.omega.iter().enumerate().filter(|(_, &w)| w).map(|(i, _)| i)
    }

    /// Compact `0`/`1` string, camera 1 first.
    pub fn bits(&self) -> String {
        self.omega.iter().map(|&w| if w { '1' } else { '0' }).collect()
    }
}

/// What a policy knows besides the ages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionContext {
    pub slot_len_ms: f64,
    pub gen_interval: Slot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub mask: SelectionMask,
    /// Probability of `mask` under the acting policy; `None` for
    /// deterministic rules.
    pub prob: Option<f64>,
    /// Network input the decision was made from, when there is one.
    pub features: Option<Vec<f64>>,
}

impl Decision {
    pub fn deterministic(mask: SelectionMask) -> Self {
        Self {
            mask,
            prob: None,
            features: None,
        }
    }
}

pub trait Policy {
    fn decide(&mut self, aoi: &AoiVector, ctx: &DecisionContext) -> Decision;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicyCfg {
    /// Maximum acceptable age `Gamma`, ms.
    pub gamma_ms: f64,
}

/// `omega^n = 1` iff the camera has delivered and `Delta^n < Gamma`.
pub fn threshold_select(aoi: &AoiVector, cfg: &ThresholdPolicyCfg, slot_len_ms: f64) -> SelectionMask {
    SelectionMask {
        omega: aoi
            .ages_ms(slot_len_ms)
            .into_iter()
            .map(|age| age.is_some_and(|a| a < cfg.gamma_ms))
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPolicy(pub ThresholdPolicyCfg);

impl ThresholdPolicy {
    pub fn new(gamma_ms: f64) -> Self {
        Self(ThresholdPolicyCfg { gamma_ms })
    }
}

impl Policy for ThresholdPolicy {
    fn decide(&mut self, aoi: &AoiVector, ctx: &DecisionContext) -> Decision {
        Decision::deterministic(threshold_select(aoi, &self.0, ctx.slot_len_ms))
    }
}

/// Every camera that has delivered at least once.
#[derive(Clone, Copy, Debug, Default)]
pub struct SelectAll;

impl Policy for SelectAll {
    fn decide(&mut self, aoi: &AoiVector, _ctx: &DecisionContext) -> Decision {
        Decision::deterministic(SelectionMask {
            omega: aoi.ages.iter().map(|a| a.seeded).collect(),
        })
    }
}

/// Only frames from the current generation cycle (age below `C` slots).
#[derive(Clone, Copy, Debug, Default)]
pub struct FreshOnly;

impl Policy for FreshOnly {
    fn decide(&mut self, aoi: &AoiVector, ctx: &DecisionContext) -> Decision {
        Decision::deterministic(SelectionMask {
            omega: aoi
                .ages
                .iter()
                .map(|a| a.seeded && a.slots < ctx.gen_interval)
                .collect(),
        })
    }
}

/// Affine map from ages to network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateScaling {
    pub center_ms: f64,
    pub scale_ms: f64,
    pub clip: f64,
}

impl Default for StateScaling {
    fn default() -> Self {
        Self {
            center_ms: 60.0,
            scale_ms: 30.0,
            clip: 4.0,
        }
    }
}

/// Network input: `(age - center) / scale` clipped to `[-clip, clip]`;
/// cameras that never delivered sit at `clip`.
pub fn normalize_state(aoi: &AoiVector, slot_len_ms: f64, scaling: &StateScaling) -> Vec<f64> {
    let StateScaling { center_ms, scale_ms, clip } = *scaling;
    aoi.ages_ms(slot_len_ms)
        .into_iter()
        .map(|age| age.map_or(clip, |a| ((a - center_ms) / scale_ms).clamp(-clip, clip)))
        .collect()
}
