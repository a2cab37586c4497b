//! Fidelity under bursty traffic.
//!
//! Lags are counted on the evaluation grid. From the first evaluation after
//! each switch from high to low traffic we count the slots until an
//! evaluation whose PSNR is back within tolerance of the settled
//! low-traffic mean. The same count started from settled low-traffic
//! evaluations measures how long that takes by chance alone; the reported
//! recovery lag is the difference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::BurstinessConfig;
use super::stats::{bootstrap_diff_ci, mean, mean_std, MeanStd};
use super::sweep::{replication_seed, thread_pool};
use crate::channel::TrafficState;
use crate::policy::ThresholdPolicy;
use crate::rng;
use crate::simulator::{SimConfig, SimError, Simulation};
use crate::Slot;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub slot: Slot,
    pub state: TrafficState,
    /// Last switch into `state`.
    pub since_switch: Slot,
    pub psnr: f64,
}

/// Per-evaluation trace of one run.
pub fn fidelity_trace(cfg: &SimConfig, gamma_ms: f64) -> Result<Vec<EvalPoint>, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut policy = ThresholdPolicy::new(gamma_ms);
    let mut out = Vec::new();
    let mut prev = None;
    let mut last_switch = 0;
    while let Some(rec) = sim.step(&mut policy)? {
        if prev.is_some_and(|p| p != rec.traffic_state) {
            last_switch = rec.slot;
        }
        prev = Some(rec.traffic_state);
        if let Some(ev) = rec.eval {
            out.push(EvalPoint {
                slot: rec.slot,
                state: rec.traffic_state,
                since_switch: rec.slot - last_switch,
                psnr: ev.psnr,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lags {
    /// Slots from the first evaluation after each high-to-low switch to
    /// recovery.
    pub after_switch: Vec<f64>,
    /// Slots from settled low-traffic evaluations to the next recovered one.
    pub control: Vec<f64>,
    /// Switch lags cut short by the next switch back to high.
    pub censored: usize,
    pub low_mean_psnr: f64,
}

/// Lags of one trace. A lag stops at the first recovered evaluation, at the
/// end of the low-traffic period, or after `max_lag` slots.
pub fn recovery_lags(trace: &[EvalPoint], cfg: &BurstinessConfig) -> Lags {
    let settled: Vec<f64> = trace
        .iter()
        .filter(|p| p.state == TrafficState::LowTraffic && p.since_switch >= cfg.settled_after_slots)
        .map(|p| p.psnr)
        .collect();
    let low_mean_psnr = mean(&settled);
    let target = (1.0 - cfg.recovery_tolerance) * low_mean_psnr;
    let mut lags = Lags {
        low_mean_psnr,
        ..Lags::default()
    };
    if settled.is_empty() {
        return lags;
    }

    // slots from evaluation `i` to the first recovered one; false when cut short
    let lag_from = |i: usize| -> (f64, bool) {
        let start = trace[i].slot;
        for p in &trace[i..] {
            if p.state != TrafficState::LowTraffic || p.slot - start > cfg.max_lag_slots {
                return ((p.slot - start) as f64, false);
            }
            if p.psnr >= target {
                return ((p.slot - start) as f64, true);
            }
        }
        let end = trace.last().map_or(start, |p| p.slot);
        ((end - start) as f64, false)
    };

    for (i, p) in trace.iter().enumerate() {
        if p.state != TrafficState::LowTraffic {
            continue;
        }
        if i > 0 && trace[i - 1].state == TrafficState::HighTraffic {
            let (lag, done) = lag_from(i);
            lags.after_switch.push(lag);
            lags.censored += usize::from(!done);
        } else if p.since_switch >= cfg.settled_after_slots {
            lags.control.push(lag_from(i).0);
        }
    }
    lags
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstinessReport {
    pub mean_delay_low: f64,
    pub mean_delay_high: f64,
    pub psnr_low: MeanStd,
    pub psnr_high: MeanStd,
    /// Mean slots to recover after a switch to low traffic.
    pub raw_lag_slots: f64,
    /// Same count from settled low-traffic instants.
    pub control_lag_slots: f64,
    /// `raw - control`.
    pub recovery_lag_slots: f64,
    pub recovery_lag_ci95: (f64, f64),
    pub switches: usize,
    pub censored: usize,
    pub low_share: f64,
    /// Mean low-traffic PSNR by slots since the switch from high, in
    /// `(bin start, mean)` pairs of one evaluation interval each.
    pub recovery_curve: Vec<(f64, f64)>,
}

impl BurstinessReport {
    /// Lag positive with 95% confidence.
    pub fn lag_is_positive(&self) -> bool {
        self.recovery_lag_ci95.0 > 0.0
    }
}

pub fn burstiness_config(base: &SimConfig, b: &BurstinessConfig) -> SimConfig {
    let mut cfg = base.clone();
    cfg.channel.burstiness_enabled = true;
    cfg.channel.mean_delay_low = b.mean_delay_low;
    cfg.channel.mean_delay_high = b.mean_delay_low * b.high_factor;
    cfg.channel.lambda_switch = b.lambda_switch;
    cfg.channel.mu_switch = b.mu_switch;
    cfg.channel.eta = None;
    cfg
}

pub fn burstiness_report(base: &SimConfig, b: &BurstinessConfig) -> Result<BurstinessReport, SimError> {
    let cfg = burstiness_config(base, b);
    cfg.validate()?;
    let traces: Vec<Vec<EvalPoint>> = thread_pool().install(|| {
        (0..b.replications)
            .into_par_iter()
            .map(|r| {
                let run = SimConfig {
                    seed: replication_seed(cfg.seed, r),
                    ..cfg.clone()
                };
                fidelity_trace(&run, b.gamma_ms)
            })
            .collect::<Result<_, _>>()
    })?;

    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut all = Lags::default();
    let bin = cfg.eval_interval.max(1);
    let mut bins: Vec<(f64, usize)> = vec![(0.0, 0); (b.max_lag_slots / bin + 1) as usize];
    for trace in &traces {
        // the first low switch of a trace may follow the initial state, not a high period
        let mut after_high = false;
        for (i, p) in trace.iter().enumerate() {
            if i > 0 && trace[i - 1].state != p.state {
                after_high = p.state == TrafficState::LowTraffic;
            }
            if after_high && p.state == TrafficState::LowTraffic {
                if let Some(slot) = bins.get_mut((p.since_switch / bin) as usize) {
                    slot.0 += p.psnr;
                    slot.1 += 1;
                }
            }
            match p.state {
                TrafficState::LowTraffic => low.push(p.psnr),
                TrafficState::HighTraffic => high.push(p.psnr),
            }
        }
        let lags = recovery_lags(trace, b);
        all.after_switch.extend(lags.after_switch);
        all.control.extend(lags.control);
        all.censored += lags.censored;
    }

    let raw = mean(&all.after_switch);
    let control = mean(&all.control);
    let mut boot = rng::stream(cfg.seed, &[rng::tag::BOOTSTRAP]);
    let ci = bootstrap_diff_ci(&all.after_switch, &all.control, b.bootstrap_resamples, 0.95, &mut boot);
    let n_low = low.len() as f64;
    Ok(BurstinessReport {
        mean_delay_low: cfg.channel.mean_delay_low,
        mean_delay_high: cfg.channel.mean_delay_high,
        psnr_low: mean_std(&low),
        psnr_high: mean_std(&high),
        raw_lag_slots: raw,
        control_lag_slots: control,
        recovery_lag_slots: raw - control,
        recovery_lag_ci95: ci,
        switches: all.after_switch.len(),
        censored: all.censored,
        low_share: n_low / (n_low + high.len() as f64).max(1.0),
        recovery_curve: bins
            .iter()
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(i, (sum, n))| ((i as u64 * bin) as f64, sum / *n as f64))
            .collect(),
    })
}
