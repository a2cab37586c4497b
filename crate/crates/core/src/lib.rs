//! Timeliness versus fidelity in multi-camera view synthesis.
//!
//! Cameras generate frames on a fixed period and push them over a shared,
//! bursty channel to an edge server. The server tracks the age of each
//! camera's latest frame and, at each evaluation slot, picks which frames to
//! fuse into a reconstruction of the scene. This crate simulates that loop
//! end to end with a synthetic scene oracle, scores reconstructions with
//! PSNR and SSIM, and compares a threshold rule against a learned policy.

/// Discrete time index. One slot lasts `slot_len_ms` milliseconds.
pub type Slot = u64;

pub mod aoi;
pub mod channel;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod scene;
pub mod simulator;
pub mod sources;
