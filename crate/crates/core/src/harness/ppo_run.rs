//! Train the PPO selector and compare it with the best fixed threshold.

use serde::{Deserialize, Serialize};

use super::config::PpoRunConfig;
use super::stats::{mean_std, MeanStd};
use super::sweep::TradeoffCurve;
use crate::policy::ppo::{train, ActionMode, TrainError, TrainLog};
use crate::policy::{Policy, PpoAgent, ThresholdPolicy};
use crate::rng;
use crate::simulator::{SimConfig, SimError, Simulation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub gamma_ms: Option<f64>,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub reward: MeanStd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub window: usize,
    /// Mean reward of the last `window` episodes.
    pub last_mean: f64,
    /// Best mean over any `window` consecutive episodes.
    pub best_mean: f64,
    /// First episode count at which the trailing mean came within
    /// tolerance of `best_mean`.
    pub first_reached: Option<usize>,
    /// The final trailing mean is within tolerance of `best_mean`.
    pub reached: bool,
}

pub fn plateau(rewards: &[f64], window: usize, tolerance: f64) -> Plateau {
    let trailing: Vec<f64> = if rewards.len() < window || window == 0 {
        Vec::new()
    } else {
        rewards.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    };
    let best_mean = trailing.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last_mean = trailing.last().copied().unwrap_or(f64::NAN);
    let close = |m: f64| m >= best_mean - tolerance * best_mean.abs();
    Plateau {
        window,
        last_mean,
        best_mean,
        first_reached: trailing.iter().position(|&m| close(m)).map(|i| i + window),
        reached: !trailing.is_empty() && close(last_mean),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PpoReport {
    /// Best fixed threshold, then the frozen PPO policy, scored on the same
    /// evaluation episodes.
    pub rows: Vec<MethodRow>,
    /// Best mean reward of the threshold sweep the comparison is based on.
    pub sweep_best_reward: f64,
    pub sweep_best_gamma_ms: f64,
    pub plateau: Plateau,
    pub trace: TrainLog,
}

impl PpoReport {
    pub fn ppo(&self) -> &MethodRow {
        &self.rows[1]
    }

    pub fn threshold(&self) -> &MethodRow {
        &self.rows[0]
    }
}

fn episode_horizon(cfg: &SimConfig, episodes: usize) -> u64 {
    cfg.warmup + cfg.eval_interval * (episodes as u64 + 2)
}

/// Scores `episodes` consecutive evaluation slots of a fresh run.
pub fn evaluate_policy(
    cfg: &SimConfig,
    policy: &mut dyn Policy,
    episodes: usize,
    name: &str,
    gamma_ms: Option<f64>,
) -> Result<MethodRow, SimError> {
    let run = SimConfig {
        horizon: episode_horizon(cfg, episodes),
        ..cfg.clone()
    };
    let mut sim = Simulation::new(run)?;
    let (mut psnr, mut ssim, mut reward) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..episodes {
        let ep = sim.episode(policy)?;
        psnr.push(ep.psnr);
        ssim.push(ep.ssim);
        reward.push(ep.sample.reward);
    }
    Ok(MethodRow {
        method: name.to_string(),
        gamma_ms,
        psnr: mean_std(&psnr),
        ssim: mean_std(&ssim),
        reward: mean_std(&reward),
    })
}

/// Trains on one seed stream, then evaluates the greedy policy and the
/// sweep's best-reward threshold on another.
pub fn train_and_eval_ppo(
    base: &SimConfig,
    run: &PpoRunConfig,
    sweep: &TradeoffCurve,
) -> Result<(PpoReport, PpoAgent), SimError> {
    base.validate()?;
    let best = sweep
        .best_reward_point()
        .ok_or_else(|| crate::simulator::ConfigError::single("sweep", "empty threshold grid"))?;

    let train_cfg = SimConfig {
        seed: rng::derive_seed(base.seed, &[rng::tag::POLICY]),
        horizon: episode_horizon(base, run.train_episodes),
        ..base.clone()
    };
    let mut env = Simulation::new(train_cfg)?;
    let mut agent = PpoAgent::new(base.n_cameras, run.agent.clone(), base.seed);
    let trace = train(&mut env, &mut agent, run.train_episodes).map_err(|e| match e {
        TrainError::Env(e) => e,
        TrainError::Ppo(e) => SimError::Policy(e),
    })?;

    let eval_cfg = SimConfig {
        seed: rng::derive_seed(base.seed, &[rng::tag::EVALUATION]),
        ..base.clone()
    };
    let threshold = evaluate_policy(
        &eval_cfg,
        &mut ThresholdPolicy::new(best.axis),
        run.eval_episodes,
        "best_threshold",
        Some(best.axis),
    )?;
    agent.mode = ActionMode::Greedy;
    let ppo = evaluate_policy(&eval_cfg, &mut agent, run.eval_episodes, "ppo", None)?;

    let report = PpoReport {
        rows: vec![threshold, ppo],
        sweep_best_reward: best.reward.mean,
        sweep_best_gamma_ms: best.axis,
        plateau: plateau(&trace.rewards, run.plateau_window, run.plateau_tolerance),
        trace,
    };
    Ok((report, agent))
}
