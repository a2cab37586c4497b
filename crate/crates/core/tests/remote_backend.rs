//! The HTTP reconstruction backend against a local test server.

use std::thread;

use aoi_fidelity::policy::SelectAll;
use aoi_fidelity::scene::remote::{WireImage, WireRequest};
use aoi_fidelity::scene::{Image, RemoteConfig, RemoteError};
use aoi_fidelity::simulator::{SimConfig, SimError, Simulation};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;

/// Serves `handler` on an ephemeral port until the test process exits.
fn serve(handler: fn(WireRequest) -> WireImage) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}/reconstruct", server.server_addr().to_ip().unwrap());
    thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body).unwrap();
            let wire: WireRequest = serde_json::from_str(&body).unwrap();
            let reply = serde_json::to_string(&handler(wire)).unwrap();
            let _ = request.respond(tiny_http::Response::from_string(reply));
        }
    });
    url
}

/// Independent fusion: mean over the frames whose columns cover a pixel.
fn average(req: WireRequest) -> WireImage {
    let (w, h) = (req.width, req.height);
    let frames: Vec<(Vec<u8>, [usize; 2])> = req
        .frames
        .iter()
        .map(|f| (STANDARD.decode(&f.image_base64).unwrap(), f.columns))
        .collect();
    let background = 128u16;
    let mut pixels = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let covering: Vec<f64> = frames
                .iter()
                .filter(|(_, c)| c[0] <= col && col < c[1])
                .map(|(px, _)| px[row * w + col] as f64)
                .collect();
            pixels.push(if covering.is_empty() {
                background
            } else {
                (covering.iter().sum::<f64>() / covering.len() as f64).round() as u16
            });
        }
    }
    WireImage::encode(&Image::new(w, h, req.depth, pixels).unwrap())
}

fn too_wide(req: WireRequest) -> WireImage {
    WireImage::encode(&Image::filled(req.width + 1, req.height, req.depth, 0).unwrap())
}

fn config(remote: Option<RemoteConfig>) -> SimConfig {
    SimConfig {
        horizon: 900,
        remote,
        ..SimConfig::default()
    }
}

fn remote(url: String, fallback: bool) -> Option<RemoteConfig> {
    Some(RemoteConfig {
        url,
        timeout_ms: 2_000,
        fallback_to_synthetic: fallback,
    })
}

fn scores(cfg: SimConfig) -> Result<Vec<(f64, f64, bool)>, SimError> {
    let mut sim = Simulation::new(cfg)?;
    let mut out = Vec::new();
    while let Some(rec) = sim.step(&mut SelectAll)? {
        if let Some(ev) = rec.eval {
            out.push((ev.psnr, ev.ssim, ev.remote_fallback));
        }
    }
    Ok(out)
}

#[test]
fn averaging_backend_reproduces_local_fusion() {
    let url = serve(average);
    let local = scores(config(None)).unwrap();
    let remote = scores(config(remote(url, false))).unwrap();
    assert!(!local.is_empty());
    assert_eq!(local, remote);
}

#[test]
fn wrong_dimensions_are_rejected() {
    let url = serve(too_wide);
    match scores(config(remote(url, false))) {
        Err(SimError::Remote(RemoteError::DimensionMismatch { want_w, got_w, .. })) => {
            assert_eq!((want_w, got_w), (144, 145))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unreachable_backend_fails_or_falls_back() {
    // nothing listens on the discard port
    let url = "http://127.0.0.1:9/reconstruct".to_string();
    match scores(config(remote(url.clone(), false))) {
        Err(SimError::Remote(RemoteError::Transport { url: u, .. })) => assert_eq!(u, url),
        other => panic!("{other:?}"),
    }
    let fallback = scores(config(remote(url, true))).unwrap();
    let local = scores(config(None)).unwrap();
    assert!(fallback.iter().all(|s| s.2));
    let strip = |v: &[(f64, f64, bool)]| v.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>();
    assert_eq!(strip(&fallback), strip(&local));
}
