//! MAT and delay sweeps.
//!
//! Replication `r` of every grid point uses the same seed, so all points
//! see the same channel realizations (common random numbers). The policy
//! never feeds back into the channel, which lets one simulation score the
//! whole `Gamma` grid at each evaluation slot.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean_std, MeanStd};
use crate::policy::{threshold_select, Decision, Policy, ThresholdPolicyCfg};
use crate::rng;
use crate::simulator::{SimConfig, SimError, Simulation};

/// Worker pool bounded by `AOI_SIM_THREADS` when set.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("AOI_SIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

pub fn replication_seed(master: u64, replication: usize) -> u64 {
    rng::derive_seed(master, &[rng::tag::REPLICATION, replication as u64])
}

/// Per-run means over evaluation slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub reward: f64,
    pub evaluations: usize,
}

#[derive(Default)]
struct Acc {
    psnr: f64,
    ssim: f64,
    reward: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, psnr: f64, ssim: f64, reward: f64) {
        self.psnr += psnr;
        self.ssim += ssim;
        self.reward += reward;
        self.n += 1;
    }

    fn finish(&self) -> RunSummary {
        let n = self.n.max(1) as f64;
        RunSummary {
            psnr: self.psnr / n,
            ssim: self.ssim / n,
            reward: self.reward / n,
            evaluations: self.n,
        }
    }
}

/// Runs `cfg` to its horizon under `policy`.
pub fn run_summary(cfg: &SimConfig, policy: &mut dyn Policy) -> Result<RunSummary, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut acc = Acc::default();
    while let Some(rec) = sim.step(policy)? {
        if let Some(ev) = rec.eval {
            acc.push(ev.psnr, ev.ssim, ev.reward);
        }
    }
    Ok(acc.finish())
}

/// One run of `cfg`, scoring every threshold in `gammas` at each
/// evaluation slot. Same result as one run per threshold.
pub fn run_thresholds(cfg: &SimConfig, gammas: &[f64]) -> Result<Vec<RunSummary>, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    let mut accs: Vec<Acc> = gammas.iter().map(|_| Acc::default()).collect();
    while let Some(rec) = sim.advance() {
        if !cfg.is_eval_slot(rec.slot) {
            continue;
        }
        for (acc, &gamma_ms) in accs.iter_mut().zip(gammas) {
            let mask = threshold_select(&rec.aoi, &ThresholdPolicyCfg { gamma_ms }, cfg.slot_len_ms);
            let ev = sim.evaluate_now(Decision::deterministic(mask))?;
            acc.push(ev.psnr, ev.ssim, ev.reward);
        }
    }
    Ok(accs.iter().map(Acc::finish).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub axis: f64,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub reward: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub points: Vec<CurvePoint>,
    pub replications: usize,
}

impl TradeoffCurve {
    /// Aggregates `runs[point][replication]`.
    pub fn from_runs(axis: &[f64], runs: &[Vec<RunSummary>]) -> Self {
        let points = axis
            .iter()
            .zip(runs)
            .map(|(&a, reps)| {
                let col = |f: fn(&RunSummary) -> f64| mean_std(&reps.iter().map(f).collect::<Vec<_>>());
                CurvePoint {
                    axis: a,
                    psnr: col(|r| r.psnr),
                    ssim: col(|r| r.ssim),
                    reward: col(|r| r.reward),
                }
            })
            .collect();
        Self {
            points,
            replications: runs.first().map_or(0, Vec::len),
        }
    }

    pub fn axis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.axis).collect()
    }

    fn argmax(&self, key: impl Fn(&CurvePoint) -> f64) -> Option<usize> {
        // strict > keeps the smallest axis value among ties
        let mut best: Option<usize> = None;
        for (i, p) in self.points.iter().enumerate() {
            if best.is_none_or(|b| key(p) > key(&self.points[b])) {
                best = Some(i);
            }
        }
        best
    }

    /// Index of `Gamma*`, the point with the highest mean PSNR.
    pub fn best_index(&self) -> Option<usize> {
        self.argmax(|p| p.psnr.mean)
    }

    pub fn gamma_star(&self) -> Option<f64> {
        self.best_index().map(|i| self.points[i].axis)
    }

    /// Point with the highest mean reward.
    pub fn best_reward_point(&self) -> Option<&CurvePoint> {
        self.argmax(|p| p.reward.mean).map(|i| &self.points[i])
    }
}

/// Threshold sweep: `replications` runs of `base`, each scoring every
/// `Gamma` in `gammas`.
pub fn sweep_mat(base: &SimConfig, gammas: &[f64], replications: usize) -> Result<TradeoffCurve, SimError> {
    base.validate()?;
    let per_rep: Vec<Vec<RunSummary>> = thread_pool().install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let cfg = SimConfig {
                    seed: replication_seed(base.seed, r),
                    ..base.clone()
                };
                run_thresholds(&cfg, gammas)
            })
            .collect::<Result<_, _>>()
    })?;
    let by_point: Vec<Vec<RunSummary>> = (0..gammas.len())
        .map(|g| per_rep.iter().map(|rep| rep[g]).collect())
        .collect();
    Ok(TradeoffCurve::from_runs(gammas, &by_point))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayPoint {
    pub mean_delay_ms: f64,
    pub gamma_star: f64,
    pub curve: TradeoffCurve,
}

/// One threshold sweep per mean delay. With burstiness on, the high-traffic
/// mean keeps its ratio to the low-traffic mean.
pub fn sweep_delay(
    base: &SimConfig,
    delays_ms: &[f64],
    gammas: &[f64],
    replications: usize,
) -> Result<Vec<DelayPoint>, SimError> {
    let ratio = base.channel.mean_delay_high / base.channel.mean_delay_low;
    delays_ms
        .iter()
        .map(|&d| {
            let mut cfg = base.clone();
            cfg.channel.mean_delay_low = d;
            cfg.channel.mean_delay_high = d * ratio;
            let curve = sweep_mat(&cfg, gammas, replications)?;
            Ok(DelayPoint {
                mean_delay_ms: d,
                gamma_star: curve.gamma_star().expect("nonempty grid"),
                curve,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelConfig;
    use crate::policy::ThresholdPolicy;

    fn quick() -> SimConfig {
        SimConfig {
            horizon: 3_000,
            ..SimConfig::default()
        }
    }

    #[test]
    fn shared_run_matches_separate_runs() {
        let cfg = quick();
        let gammas = [0.0, 30.0, 51.0, 120.0];
        let shared = run_thresholds(&cfg, &gammas).unwrap();
        for (g, s) in gammas.iter().zip(&shared) {
            let alone = run_summary(&cfg, &mut ThresholdPolicy::new(*g)).unwrap();
            assert_eq!(&alone, s, "gamma {g}");
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = sweep_mat(&quick(), &[0.0, 60.0], 2).unwrap();
        let b = sweep_mat(&quick(), &[0.0, 60.0], 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn static_scene_is_flat_and_ties_break_low() {
        let mut cfg = quick();
        cfg.scene.blobs.iter_mut().for_each(|b| b.velocity = [0.0, 0.0]);
        cfg.channel = ChannelConfig::deterministic(1.0);
        let gammas = [18.0, 60.0, 120.0];
        let curve = sweep_mat(&cfg, &gammas, 2).unwrap();
        assert!(curve.points.iter().all(|p| p.psnr.mean == 100.0));
        assert_eq!(curve.gamma_star(), Some(18.0));
    }

    #[test]
    fn deterministic_delay_optimum_sits_just_above_the_age() {
        // frames generated at 30k arrive at 30k + 10; evaluation at 30k + 15
        // sees every camera at age exactly 15
        let mut cfg = quick();
        cfg.channel = ChannelConfig::deterministic(10.0);
        let gammas: Vec<f64> = (0..=20).map(|i| i as f64 * 6.0).collect();
        let curve = sweep_mat(&cfg, &gammas, 1).unwrap();
        assert_eq!(curve.gamma_star(), Some(18.0));
    }
}
