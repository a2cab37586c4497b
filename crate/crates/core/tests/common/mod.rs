//! Oracles shared by the integration tests and the acceptance target.

#![allow(dead_code)]

use aoi_fidelity::aoi::{Age, AoiVector};
use aoi_fidelity::channel::ChannelConfig;
use aoi_fidelity::rng;
use aoi_fidelity::simulator::{self, SimConfig};
use rand::Rng;

/// Varied configurations for replay checks: camera count, frame interval,
/// phases, delay and burstiness all differ per run.
pub fn varied_config(run: u64) -> SimConfig {
    let mut r = rng::stream(run, &[0xA01]);
    let n_cameras = r.random_range(1..=8);
    let gen_interval = [7, 30, 45][r.random_range(0..3)];
    let mut channel = ChannelConfig::exponential([5.0, 30.0, 60.0, 150.0][r.random_range(0..4)]);
    if run % 2 == 1 {
        channel.burstiness_enabled = true;
        channel.mean_delay_high = channel.mean_delay_low * 4.0;
        channel.lambda_switch = 0.01;
        channel.mu_switch = 0.02;
    }
    let phase_offsets = if run.is_multiple_of(3) {
        (0..n_cameras).map(|_| r.random_range(0..gen_interval)).collect()
    } else {
        Vec::new()
    };
    SimConfig {
        n_cameras,
        gen_interval,
        horizon: 1_500,
        seed: 1_000 + run,
        warmup: 0,
        eval_interval: gen_interval,
        eval_offset: 0,
        phase_offsets,
        channel,
        ..SimConfig::default()
    }
}

/// Runs `cfg` and checks every slot's AoI against a recomputation from the
/// delivery log alone. Returns the number of slots checked.
pub fn replay_aoi(cfg: SimConfig) -> Result<u64, String> {
    let n = cfg.n_cameras;
    // (camera index, generation slot, delivery slot) in delivery order
    let mut log: Vec<(usize, u64, u64)> = Vec::new();
    let mut checked = 0;
    for rec in simulator::run(cfg).map_err(|e| e.to_string())? {
        let rec = rec.map_err(|e| e.to_string())?;
        for f in &rec.deliveries {
            if f.delivery_slot != Some(rec.slot) {
                return Err(format!("slot {}: frame logged with delivery {:?}", rec.slot, f.delivery_slot));
            }
            log.push((f.camera_id - 1, f.gen_slot, rec.slot));
        }
        let t = rec.slot;
        let expected = AoiVector {
            ages: (0..n)
                .map(|cam| {
                    let newest = log
                        .iter()
                        .filter(|&&(c, _, d)| c == cam && d <= t)
                        .map(|&(_, g, _)| g)
                        .max();
                    match newest {
                        Some(g) => Age { slots: t - g, seeded: true },
                        None => Age { slots: t, seeded: false },
                    }
                })
                .collect(),
        };
        if rec.aoi != expected {
            return Err(format!("slot {t}: simulator {:?}, log {:?}", rec.aoi, expected));
        }
        checked += 1;
    }
    Ok(checked)
}
