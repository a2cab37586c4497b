//! Synthetic dynamic scene used as the fidelity oracle.
//!
//! The ground-truth novel view is a mid-gray background with Gaussian blobs
//! drifting at constant velocity on a torus (positions wrap at the image
//! edges, so blobs never leave the frame). Camera `n` of `N` observes only
//! its column stripe of that view, widened on both sides by
//! `stripe_overlap` stripe widths. Reconstruction averages whatever stale
//! observations were selected, pixel by pixel, and falls back to the
//! background level where nothing was selected.
//!
//! Less coverage costs fidelity through missing content; staler frames cost
//! it through blobs drawn where they used to be.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sources::Pose;

pub mod remote;

pub use remote::{RemoteClient, RemoteConfig, RemoteError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be >= 1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("bit depth must be in 1..=16, got {0}")]
    BadDepth(u8),
    #[error("expected {expected} pixels, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("pixel {index} = {value} exceeds maximum {max}")]
    OutOfRange { index: usize, value: u16, max: u16 },
}

/// Grayscale raster, row-major, values in `[0, 2^depth - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    depth: u8,
    pixels: Vec<u16>,
}

impl Image {
    pub fn new(width: usize, height: usize, depth: u8, pixels: Vec<u16>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if !(1..=16).contains(&depth) {
            return Err(ImageError::BadDepth(depth));
        }
        if pixels.len() != width * height {
            return Err(ImageError::LengthMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        let max = max_value(depth);
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &v)| v > max) {
            return Err(ImageError::OutOfRange { index, value, max });
        }
        Ok(Self {
            width,
            height,
            depth,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, depth: u8, value: u16) -> Result<Self, ImageError> {
        Self::new(width, height, depth, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// `R_I = 2^depth - 1`.
    pub fn max_value(&self) -> u16 {
        max_value(self.depth)
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.depth == other.depth
    }

    /// Row-major samples: one byte each up to 8 bits, big-endian pairs above.
    pub fn to_bytes(&self) -> Vec<u8> {
        if self.depth <= 8 {
            self.pixels.iter().map(|&p| p as u8).collect()
        } else {
            self.pixels.iter().flat_map(|p| p.to_be_bytes()).collect()
        }
    }

    pub fn from_bytes(width: usize, height: usize, depth: u8, bytes: &[u8]) -> Result<Self, ImageError> {
        let pixels = if depth <= 8 {
            bytes.iter().map(|&b| b as u16).collect()
        } else {
            if !bytes.len().is_multiple_of(2) {
                return Err(ImageError::LengthMismatch {
                    expected: width * height * 2,
                    got: bytes.len(),
                });
            }
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        Self::new(width, height, depth, pixels)
    }

    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.max_value()).into_bytes();
        out.extend(self.to_bytes());
        out
    }
}

pub fn max_value(depth: u8) -> u16 {
    ((1u32 << depth) - 1) as u16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    /// Initial centre `[x, y]` in pixels (x = column, y = row).
    pub center: [f64; 2],
    /// Pixels per ms.
    pub velocity: [f64; 2],
    /// Signed peak intensity added to the background.
    pub amplitude: f64,
    /// Gaussian standard deviation in pixels.
    pub radius: f64,
}

impl Blob {
    /// Centre at `t_ms`, wrapped onto the `width x height` torus.
    pub fn center_at(&self, t_ms: f64, width: usize, height: usize) -> [f64; 2] {
        [
            (self.center[0] + self.velocity[0] * t_ms).rem_euclid(width as f64),
            (self.center[1] + self.velocity[1] * t_ms).rem_euclid(height as f64),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Bits per pixel.
    pub depth: u8,
    pub blobs: Vec<Blob>,
    /// Background level `b0`.
    pub background: f64,
    pub novel_view_pose: Pose,
    /// Stripe widening on each side, as a fraction of the stripe width.
    pub stripe_overlap: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let blob = |x: f64, y: f64, vx: f64, vy: f64, amplitude: f64| Blob {
            center: [x, y],
            velocity: [vx, vy],
            amplitude,
            radius: 4.5,
        };
        Self {
            height: 32,
            width: 144,
            depth: 8,
            blobs: vec![
                blob(20.0, 8.0, 0.114, 0.048, 110.0),
                blob(58.0, 22.0, -0.086, 0.089, -95.0),
                blob(95.0, 12.0, 0.048, -0.114, 100.0),
                blob(128.0, 26.0, -0.119, -0.033, -115.0),
            ],
            background: 128.0,
            novel_view_pose: Pose::new(0.0, 0.0, 2.0, 0.0, 0.0),
            stripe_overlap: 0.48,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene.{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let invalid = |field, reason: &str| {
            Err(SceneError::Invalid {
                field,
                reason: reason.to_string(),
            })
        };
        if self.height == 0 || self.width == 0 {
            return invalid("width", "image dimensions must be >= 1");
        }
        if !(1..=16).contains(&self.depth) {
            return invalid("depth", "must be in 1..=16");
        }
        if !(0.0..0.5).contains(&self.stripe_overlap) {
            return invalid("stripe_overlap", "must be in [0, 0.5)");
        }
        if !self.background.is_finite() {
            return invalid("background", "must be finite");
        }
        for b in &self.blobs {
            let finite = b.center.iter().chain(&b.velocity).chain([&b.amplitude]).all(|v| v.is_finite());
            if !finite || !(b.radius.is_finite() && b.radius > 0.0) {
                return invalid("blobs", "centres, velocities and amplitudes must be finite, radii > 0");
            }
        }
        Ok(())
    }

    pub fn max_value(&self) -> u16 {
        max_value(self.depth)
    }

    fn quantize(&self, v: f64) -> u16 {
        v.round().clamp(0.0, self.max_value() as f64) as u16
    }

    pub fn background_pixel(&self) -> u16 {
        self.quantize(self.background)
    }

    /// Columns covered by camera `index` (0-based) out of `n_cameras`.
    pub fn stripe_columns(&self, n_cameras: usize, index: usize) -> Range<usize> {
        let stripe = self.width as f64 / n_cameras as f64;
        let widen = self.stripe_overlap * stripe;
        let start = index as f64 * stripe - widen;
        let end = (index + 1) as f64 * stripe + widen;
        let lo = start.ceil().max(0.0) as usize;
        let hi = (end.ceil().max(0.0) as usize).min(self.width);
        lo.min(hi)..hi
    }

    /// Ground truth restricted to `cols`, row-major with `cols.len()` stride.
    pub fn render_columns(&self, t_ms: f64, cols: Range<usize>) -> Vec<u16> {
        let ncols = cols.len();
        let (w, h) = (self.width as f64, self.height as f64);
        let torus = |d: f64, span: f64| {
            let d = d.abs() % span;
            d.min(span - d)
        };
        // Gaussians are separable: amplitude * gx(col) * gy(row)
        let factors: Vec<(f64, Vec<f64>, Vec<f64>)> = self
            .blobs
            .iter()
            .map(|b| {
                let [cx, cy] = b.center_at(t_ms, self.width, self.height);
                let inv = 1.0 / (2.0 * b.radius * b.radius);
                let gx = cols
                    .clone()
                    .map(|c| {
                        let d = torus(c as f64 - cx, w);
                        (-d * d * inv).exp()
                    })
                    .collect();
                let gy = (0..self.height)
                    .map(|r| {
                        let d = torus(r as f64 - cy, h);
                        (-d * d * inv).exp()
                    })
                    .collect();
                (b.amplitude, gx, gy)
            })
            .collect();

        let mut out = Vec::with_capacity(ncols * self.height);
        let mut acc = vec![0.0; ncols];
        for row in 0..self.height {
            acc.iter_mut().for_each(|v| *v = self.background);
            for (amp, gx, gy) in &factors {
                let coef = amp * gy[row];
                if coef.abs() < 1e-9 {
                    continue;
                }
                for (a, g) in acc.iter_mut().zip(gx) {
                    *a += coef * g;
                }
            }
            out.extend(acc.iter().map(|&v| self.quantize(v)));
        }
        out
    }
}

/// Ground-truth novel view at `t_ms`.
pub fn render_ground_truth(cfg: &SceneConfig, t_ms: f64) -> Image {
    let pixels = cfg.render_columns(t_ms, 0..cfg.width);
    Image::new(cfg.width, cfg.height, cfg.depth, pixels).expect("validated scene renders a valid image")
}

/// One camera's capture: its stripe of the ground truth at capture time.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub camera_index: usize,
    pub t_ms: f64,
    /// Covered columns; every row of these columns is covered.
    pub columns: Range<usize>,
    /// `height x columns.len()`, row-major.
    pub pixels: Vec<u16>,
}

impl Observation {
    pub fn covers(&self, col: usize) -> bool {
        self.columns.contains(&col)
    }

    /// Per-pixel coverage of a `width x height` frame.
    pub fn coverage_mask(&self, width: usize, height: usize) -> Vec<bool> {
        (0..height)
            .flat_map(|_| (0..width).map(|c| self.covers(c)))
            .collect()
    }

    /// Full-size image with uncovered pixels set to `fill`.
    pub fn to_image(&self, cfg: &SceneConfig, fill: u16) -> Image {
        let ncols = self.columns.len();
        let mut pixels = vec![fill; cfg.width * cfg.height];
        for row in 0..cfg.height {
            let dst = row * cfg.width + self.columns.start;
            pixels[dst..dst + ncols].copy_from_slice(&self.pixels[row * ncols..(row + 1) * ncols]);
        }
        Image::new(cfg.width, cfg.height, cfg.depth, pixels).expect("observation fits the scene frame")
    }
}

pub fn observe(cfg: &SceneConfig, n_cameras: usize, camera_index: usize, t_ms: f64) -> Observation {
    let columns = cfg.stripe_columns(n_cameras, camera_index);
    Observation {
        camera_index,
        t_ms,
        pixels: cfg.render_columns(t_ms, columns.clone()),
        columns,
    }
}

/// A member of the selected set `D(t)`.
#[derive(Clone, Debug)]
pub struct SelectedObservation {
    pub camera_id: usize,
    pub gen_time_ms: f64,
    pub pose: Pose,
    pub observation: Arc<Observation>,
}

pub type ObservationSet = Vec<SelectedObservation>;

/// Per-pixel mean of the selected observations; background where none
/// covers a pixel.
pub fn reconstruct(cfg: &SceneConfig, selected: &[SelectedObservation]) -> Image {
    let (w, h) = (cfg.width, cfg.height);
    let mut sums = vec![0u32; w * h];
    let mut counts = vec![0u32; w];
    for sel in selected {
        let obs = &sel.observation;
        let ncols = obs.columns.len();
        for c in obs.columns.clone() {
            counts[c] += 1;
        }
        for row in 0..h {
            let src = &obs.pixels[row * ncols..(row + 1) * ncols];
            let dst = &mut sums[row * w + obs.columns.start..row * w + obs.columns.end];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s as u32;
            }
        }
    }
    let fill = cfg.background_pixel();
    let pixels = sums
        .iter()
        .enumerate()
        .map(|(i, &s)| match counts[i % w] {
            0 => fill,
            n => (s as f64 / n as f64).round() as u16,
        })
        .collect();
    Image::new(w, h, cfg.depth, pixels).expect("averages stay in range")
}
