//! HTTP client for an external reconstruction backend.
//!
//! Request (JSON, POST):
//!
//! ```text
//! { "t_ms": f64, "novel_view_pose": Pose, "width": u, "height": u, "depth": u,
//!   "frames": [ { "camera_id": u, "gen_time_ms": f64, "pose": Pose,
//!                 "columns": [start, end], "image_base64": str } ] }
//! ```
//!
//! Each frame image is full-size, row-major, with uncovered pixels set to
//! the background level. Response: `{ "image_base64", "width", "height",
//! "depth" }`. Samples are one byte each for depth <= 8, big-endian `u16`
//! pairs otherwise.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Image, SceneConfig, SelectedObservation};
use crate::sources::Pose;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemoteError {
    #[error("transport failure talking to {url}: {message}")]
    Transport { url: String, message: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend returned {got_w}x{got_h}@{got_d}bit, expected {want_w}x{want_h}@{want_d}bit")]
    DimensionMismatch {
        want_w: usize,
        want_h: usize,
        want_d: u8,
        got_w: usize,
        got_h: usize,
        got_d: u8,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Use the synthetic reconstruction when the backend fails.
    #[serde(default)]
    pub fallback_to_synthetic: bool,
}

fn default_timeout_ms() -> u64 {
    5_000
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireFrame {
    pub camera_id: usize,
    pub gen_time_ms: f64,
    pub pose: Pose,
    pub columns: [usize; 2],
    pub image_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub t_ms: f64,
    pub novel_view_pose: Pose,
    pub width: usize,
    pub height: usize,
    pub depth: u8,
    pub frames: Vec<WireFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireImage {
    pub image_base64: String,
    pub width: usize,
    pub height: usize,
    pub depth: u8,
}

impl WireImage {
    pub fn encode(img: &Image) -> Self {
        Self {
            image_base64: STANDARD.encode(img.to_bytes()),
            width: img.width(),
            height: img.height(),
            depth: img.depth(),
        }
    }

    pub fn decode(&self) -> Result<Image, RemoteError> {
        let bytes = STANDARD
            .decode(&self.image_base64)
            .map_err(|e| RemoteError::Malformed(format!("image_base64: {e}")))?;
        Image::from_bytes(self.width, self.height, self.depth, &bytes)
            .map_err(|e| RemoteError::Malformed(e.to_string()))
    }
}

pub fn encode_request(cfg: &SceneConfig, selected: &[SelectedObservation], t_ms: f64) -> WireRequest {
    let fill = cfg.background_pixel();
    WireRequest {
        t_ms,
        novel_view_pose: cfg.novel_view_pose,
        width: cfg.width,
        height: cfg.height,
        depth: cfg.depth,
        frames: selected
            .iter()
            .map(|s| WireFrame {
                camera_id: s.camera_id,
                gen_time_ms: s.gen_time_ms,
                pose: s.pose,
                columns: [s.observation.columns.start, s.observation.columns.end],
                image_base64: STANDARD.encode(s.observation.to_image(cfg, fill).to_bytes()),
            })
            .collect(),
    }
}

/// Synchronous client; one request in flight at a time.
#[derive(Clone, Debug)]
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn remote_reconstruct(
        &self,
        cfg: &SceneConfig,
        selected: &[SelectedObservation],
        t_ms: f64,
    ) -> Result<Image, RemoteError> {
        let request = encode_request(cfg, selected, t_ms);
        let transport = |message: String| RemoteError::Transport {
            url: self.config.url.clone(),
            message,
        };
        let response = self
            .agent
            .post(&self.config.url)
            .send_json(&request)
            .map_err(|e| transport(e.to_string()))?;
        let body = response
            .into_body()
            .read_to_string()
            .map_err(|e| transport(e.to_string()))?;
        let wire: WireImage =
            serde_json::from_str(&body).map_err(|e| RemoteError::Malformed(e.to_string()))?;
        if (wire.width, wire.height, wire.depth) != (cfg.width, cfg.height, cfg.depth) {
            return Err(RemoteError::DimensionMismatch {
                want_w: cfg.width,
                want_h: cfg.height,
                want_d: cfg.depth,
                got_w: wire.width,
                got_h: wire.height,
                got_d: wire.depth,
            });
        }
        wire.decode()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LpipsRequest {
    pub reference: WireImage,
    pub candidate: WireImage,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LpipsResponse {
    pub lpips: f64,
}

/// LPIPS scored by an external service using the same image encoding.
#[derive(Clone, Debug)]
pub struct RemoteLpips {
    client: RemoteClient,
}

impl RemoteLpips {
    pub fn new(config: RemoteConfig) -> Self {
        Self {
            client: RemoteClient::new(config),
        }
    }
}

impl crate::metrics::LpipsProvider for RemoteLpips {
    fn lpips(&self, a: &Image, b: &Image) -> Result<f64, crate::metrics::MetricsError> {
        let fail = |e: String| crate::metrics::MetricsError::Lpips(e);
        let request = LpipsRequest {
            reference: WireImage::encode(a),
            candidate: WireImage::encode(b),
        };
        let body = self
            .client
            .agent
            .post(&self.client.config.url)
            .send_json(&request)
            .map_err(|e| fail(e.to_string()))?
            .into_body()
            .read_to_string()
            .map_err(|e| fail(e.to_string()))?;
        let response: LpipsResponse = serde_json::from_str(&body).map_err(|e| fail(e.to_string()))?;
        if response.lpips.is_finite() && response.lpips >= 0.0 {
            Ok(response.lpips)
        } else {
            Err(fail(format!("lpips must be finite and >= 0, got {}", response.lpips)))
        }
    }
}
