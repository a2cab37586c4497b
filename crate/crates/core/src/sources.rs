//! Camera fleet: periodic frame generation with a zero-buffer (D/G/1/0)
//! transmitter per camera, and camera pose trajectories.
//!
//! Within a slot a camera first completes any delivery due in that slot and
//! only then considers generating, so a frame generated at the exact slot
//! its predecessor lands is transmitted rather than dropped.

use std::f64::consts::{FRAC_PI_2, TAU};

use serde::{Deserialize, Serialize};

use crate::Slot;

/// Camera pose: position in scene units and viewing direction in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub phi: f64,
}

impl Pose {
    /// Wraps `theta` into `[0, 2pi)` and clamps `phi` into `[-pi/2, pi/2]`.
    pub fn new(x: f64, y: f64, z: f64, theta: f64, phi: f64) -> Self {
        let mut theta = theta.rem_euclid(TAU);
        if theta >= TAU {
            theta = 0.0;
        }
        Self {
            x,
            y,
            z,
            theta,
            phi: phi.clamp(-FRAC_PI_2, FRAC_PI_2),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.z, self.theta, self.phi]
            .iter()
            .all(|v| v.is_finite())
            && (0.0..TAU).contains(&self.theta)
            && (-FRAC_PI_2..=FRAC_PI_2).contains(&self.phi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoseTrajectory {
    /// Cameras fixed on a ring; camera `n` sits at angle `2 pi n / N`.
    Static { radius: f64, height: f64 },
    /// The ring rotates at `angular_rate` rad/ms.
    CircularOrbit {
        radius: f64,
        height: f64,
        angular_rate: f64,
    },
}

impl Default for PoseTrajectory {
    fn default() -> Self {
        PoseTrajectory::Static {
            radius: 5.0,
            height: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub n_cameras: usize,
    /// Generation interval `C` in slots.
    pub gen_interval: Slot,
    /// Slot length `T_s` in ms.
    pub slot_len_ms: f64,
    pub pose_trajectory: PoseTrajectory,
    /// Per-camera generation phase in slots; empty means all zero.
    pub phase_offsets: Vec<Slot>,
}

impl FleetConfig {
    pub fn new(n_cameras: usize, gen_interval: Slot, slot_len_ms: f64) -> Self {
        Self {
            n_cameras,
            gen_interval,
            slot_len_ms,
            pose_trajectory: PoseTrajectory::default(),
            phase_offsets: Vec::new(),
        }
    }

    pub fn phase(&self, index: usize) -> Slot {
        self.phase_offsets.get(index).copied().unwrap_or(0)
    }
}

/// Pose of camera `camera_id` (1-based) at `slot`.
pub fn pose_at(fleet: &FleetConfig, camera_id: usize, slot: Slot) -> Pose {
    debug_assert!((1..=fleet.n_cameras).contains(&camera_id));
    let base = TAU * camera_id as f64 / fleet.n_cameras as f64;
    let (radius, height, angle) = match fleet.pose_trajectory {
        PoseTrajectory::Static { radius, height } => (radius, height, base),
        PoseTrajectory::CircularOrbit {
            radius,
            height,
            angular_rate,
        } => (
            radius,
            height,
            base + angular_rate * slot as f64 * fleet.slot_len_ms,
        ),
    };
    let angle = angle.rem_euclid(TAU);
    // looking back at the ring centre, slightly downward
    Pose::new(
        radius * angle.cos(),
        radius * angle.sin(),
        height,
        angle,
        -(height / radius.max(f64::EPSILON)).atan(),
    )
}

/// Resolves to camera `camera_index`'s observation captured at `gen_slot`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PayloadRef {
    pub camera_index: usize,
    pub gen_slot: Slot,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// 1-based camera id.
    pub camera_id: usize,
    pub seq: u64,
    pub gen_slot: Slot,
    /// `None` while the frame is in flight.
    pub delivery_slot: Option<Slot>,
    /// Sampled delay `Y`, in slots; `delivery_slot = gen_slot + Y`.
    pub transmission_duration: Slot,
    pub pose: Pose,
    pub payload_ref: PayloadRef,
}

impl FrameRecord {
    pub fn camera_index(&self) -> usize {
        self.camera_id - 1
    }

    pub fn due_slot(&self) -> Slot {
        self.gen_slot + self.transmission_duration
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CameraStats {
    /// Generation instants reached, transmitted or not.
    pub generated: u64,
    pub transmitted: u64,
    pub dropped: u64,
    pub delivered: u64,
}

impl CameraStats {
    pub fn in_flight(&self) -> u64 {
        self.transmitted - self.delivered
    }

    pub fn merge(&mut self, other: &CameraStats) {
        self.generated += other.generated;
        self.transmitted += other.transmitted;
        self.dropped += other.dropped;
        self.delivered += other.delivered;
    }
}

/// `dropped / generated`, or `None` before the first generation.
pub fn drop_rate(stats: &CameraStats) -> Option<f64> {
    (stats.generated > 0).then(|| stats.dropped as f64 / stats.generated as f64)
}

/// Source of per-frame transmission delays, in slots (>= 1).
pub trait DelaySource {
    fn sample_delay(&mut self, camera_index: usize, slot: Slot) -> Slot;
}

/// Same delay for every frame.
#[derive(Clone, Copy, Debug)]
pub struct FixedDelay(pub Slot);

impl DelaySource for FixedDelay {
    fn sample_delay(&mut self, _camera_index: usize, _slot: Slot) -> Slot {
        self.0.max(1)
    }
}

impl<F: FnMut(usize, Slot) -> Slot> DelaySource for F {
    fn sample_delay(&mut self, camera_index: usize, slot: Slot) -> Slot {
        self(camera_index, slot).max(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickEvent {
    pub delivered: Option<FrameRecord>,
    /// Frame put on the channel this slot.
    pub transmitted: Option<FrameRecord>,
    pub dropped: bool,
}

#[derive(Clone, Debug)]
pub struct CameraState {
    index: usize,
    phase: Slot,
    in_flight: Option<FrameRecord>,
    next_seq: u64,
    last_slot: Option<Slot>,
    pub stats: CameraStats,
}

impl CameraState {
    pub fn new(index: usize, phase: Slot) -> Self {
        Self {
            index,
            phase,
            in_flight: None,
            next_seq: 0,
            last_slot: None,
            stats: CameraStats::default(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_busy(&self) -> bool {
        self.in_flight.is_some()
    }

    pub fn in_flight(&self) -> Option<&FrameRecord> {
        self.in_flight.as_ref()
    }
}

/// Advances one camera by one slot: delivery first, then generation.
pub fn tick_camera(
    cam: &mut CameraState,
    slot: Slot,
    fleet: &FleetConfig,
    delays: &mut dyn DelaySource,
) -> TickEvent {
    debug_assert!(
        cam.last_slot.is_none_or(|last| slot == last + 1),
        "camera ticked out of order"
    );
    cam.last_slot = Some(slot);
    let mut event = TickEvent::default();

    if let Some(frame) = cam.in_flight {
        if frame.due_slot() == slot {
            cam.in_flight = None;
            cam.stats.delivered += 1;
            event.delivered = Some(FrameRecord {
                delivery_slot: Some(slot),
                ..frame
            });
        }
    }

    let generates = slot >= cam.phase && (slot - cam.phase).is_multiple_of(fleet.gen_interval);
    if generates {
        cam.stats.generated += 1;
        if cam.in_flight.is_some() {
            cam.stats.dropped += 1;
            event.dropped = true;
        } else {
            let duration = delays.sample_delay(cam.index, slot).max(1);
            let camera_id = cam.index + 1;
            let frame = FrameRecord {
                camera_id,
                seq: cam.next_seq,
                gen_slot: slot,
                delivery_slot: None,
                transmission_duration: duration,
                pose: pose_at(fleet, camera_id, slot),
                payload_ref: PayloadRef {
                    camera_index: cam.index,
                    gen_slot: slot,
                },
            };
            cam.next_seq += 1;
            cam.stats.transmitted += 1;
            cam.in_flight = Some(frame);
            event.transmitted = Some(frame);
        }
    }
    event
}

/// All cameras of a fleet, ticked in lockstep.
#[derive(Clone, Debug)]
pub struct Fleet {
    pub config: FleetConfig,
    cameras: Vec<CameraState>,
}

impl Fleet {
    pub fn new(config: FleetConfig) -> Self {
        let cameras = (0..config.n_cameras)
            .map(|i| CameraState::new(i, config.phase(i)))
            .collect();
        Self { config, cameras }
    }

    pub fn cameras(&self) -> &[CameraState] {
        &self.cameras
    }

    /// Ticks every camera for `slot`, in camera order.
    pub fn tick(&mut self, slot: Slot, delays: &mut dyn DelaySource) -> Vec<TickEvent> {
        let config = &self.config;
        self.cameras
            .iter_mut()
            .map(|cam| tick_camera(cam, slot, config, delays))
            .collect()
    }

    pub fn total_stats(&self) -> CameraStats {
        let mut total = CameraStats::default();
        for cam in &self.cameras {
            total.merge(&cam.stats);
        }
        total
    }
}
