//! Edge-side age-of-information bookkeeping.
//!
//! `U^n(t)` is the generation slot of the freshest frame of camera `n`
//! delivered by slot `t`; the age is `t - U^n(t)`. Ages stay in integer
//! slots here and are converted to milliseconds only by callers.

use serde::{Deserialize, Serialize};

use crate::sources::FrameRecord;
use crate::Slot;

/// Age of one camera's latest frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Age {
    pub slots: Slot,
    /// False until the camera's first delivery; `slots` then counts from
    /// the simulation epoch.
    pub seeded: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AoiVector {
    pub ages: Vec<Age>,
}

impl AoiVector {
    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    /// Ages in milliseconds; unseeded cameras map to `None`.
    pub fn ages_ms(&self, slot_len_ms: f64) -> Vec<Option<f64>> {
        self.ages
            .iter()
            .map(|a| a.seeded.then_some(a.slots as f64 * slot_len_ms))
            .collect()
    }

    pub fn slots(&self) -> Vec<Slot> {
        self.ages.iter().map(|a| a.slots).collect()
    }
}

/// Latest delivered frame per camera.
#[derive(Clone, Debug)]
pub struct LatestFrameRegistry {
    frames: Vec<Option<FrameRecord>>,
    epoch: Slot,
}

impl LatestFrameRegistry {
    pub fn new(n_cameras: usize) -> Self {
        Self::with_epoch(n_cameras, 0)
    }

    pub fn with_epoch(n_cameras: usize, epoch: Slot) -> Self {
        Self {
            frames: vec![None; n_cameras],
            epoch,
        }
    }

    pub fn n_cameras(&self) -> usize {
        self.frames.len()
    }

    pub fn latest(&self, camera_index: usize) -> Option<&FrameRecord> {
        self.frames[camera_index].as_ref()
    }

    pub fn frames(&self) -> &[Option<FrameRecord>] {
        &self.frames
    }

    /// Stores `frame` if it is newer than what the camera already has.
    /// Returns whether the registry changed.
    pub fn on_delivery(&mut self, frame: FrameRecord) -> bool {
        let slot = &mut self.frames[frame.camera_index()];
        match slot {
            Some(stored) if stored.gen_slot >= frame.gen_slot => false,
            _ => {
                *slot = Some(frame);
                true
            }
        }
    }

    /// `Delta^n(t) = t - U^n(t)` for every camera.
    pub fn aoi(&self, t: Slot) -> AoiVector {
        let ages = self
            .frames
            .iter()
            .map(|f| match f {
                Some(frame) => {
                    debug_assert!(frame.delivery_slot.is_none_or(|d| d <= t));
                    Age {
                        slots: t - frame.gen_slot,
                        seeded: true,
                    }
                }
                None => Age {
                    slots: t.saturating_sub(self.epoch),
                    seeded: false,
                },
            })
            .collect();
        AoiVector { ages }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{PayloadRef, Pose};

    fn frame(cam: usize, s: Slot, d: Slot) -> FrameRecord {
        FrameRecord {
            camera_id: cam + 1,
            seq: 0,
            gen_slot: s,
            delivery_slot: Some(d),
            transmission_duration: d - s,
            pose: Pose::default(),
            payload_ref: PayloadRef {
                camera_index: cam,
                gen_slot: s,
            },
        }
    }

    #[test]
    fn newer_frames_replace_older_ones() {
        let mut reg = LatestFrameRegistry::new(1);
        assert!(reg.on_delivery(frame(0, 3, 10)));
        assert_eq!(reg.latest(0).unwrap().gen_slot, 3);
        assert!(reg.on_delivery(frame(0, 33, 40)));
        assert_eq!(reg.latest(0).unwrap().gen_slot, 33);
        assert!(!reg.on_delivery(frame(0, 3, 40)));
        assert_eq!(reg.latest(0).unwrap().gen_slot, 33);
    }

    #[test]
    fn age_is_t_minus_u() {
        let mut reg = LatestFrameRegistry::new(2);
        reg.on_delivery(frame(0, 3, 10));
        let v = reg.aoi(12);
        assert_eq!(v.ages[0], Age { slots: 9, seeded: true });
        assert_eq!(v.ages[1], Age { slots: 12, seeded: false });
        // at the delivery slot the age equals the transmission duration
        reg.on_delivery(frame(1, 5, 17));
        assert_eq!(reg.aoi(17).ages[1].slots, 12);
        assert_eq!(reg.aoi(17), reg.aoi(17));
    }

    #[test]
    fn ms_conversion_hides_unseeded() {
        let mut reg = LatestFrameRegistry::new(2);
        reg.on_delivery(frame(1, 0, 4));
        assert_eq!(reg.aoi(10).ages_ms(2.0), vec![None, Some(20.0)]);
    }
}
