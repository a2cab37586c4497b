//! Single-step PPO for frame selection.
//!
//! Every episode is one decision: observe the normalized age vector, draw a
//! Bernoulli mask from the policy network, receive the fidelity reward. With
//! one step there is no bootstrapping, so the advantage is `r - V(s)`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mlp::{sigmoid, Activation, Adam, LayerShape, Mlp};
use super::{normalize_state, StateScaling, Decision, DecisionContext, Policy, SelectionMask};
use crate::aoi::AoiVector;
use crate::rng::{self, SimRng};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("non-finite gradient in {net} network at update {update}")]
    NonFiniteGradient { net: &'static str, update: u64 },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("sample has {got} inputs, network expects {want}")]
    ShapeMismatch { want: usize, got: usize },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: usize,
    pub clip_eps: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Episodes per update.
    pub batch_size: usize,
    /// Optimizer passes over each batch.
    pub epochs: usize,
    pub state: StateScaling,
    /// Standardize advantages within each batch.
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            clip_eps: 0.2,
            policy_lr: 3e-3,
            value_lr: 3e-3,
            batch_size: 16,
            epochs: 4,
            state: StateScaling::default(),
            normalize_advantages: true,
        }
    }
}

/// `theta` (policy) and `phi` (value) networks.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub value: Mlp,
}

impl PolicyParams {
    pub fn init(n_cameras: usize, hidden: usize, rng: &mut SimRng) -> Self {
        Self {
            policy: Mlp::new(&[n_cameras, hidden, n_cameras], Activation::Tanh, Activation::Identity, 0.01, rng),
            value: Mlp::new(&[n_cameras, hidden, 1], Activation::Tanh, Activation::Identity, 0.01, rng),
        }
    }
}

/// Per-camera inclusion probabilities `rho_n = sigma(z_n)`.
pub fn policy_forward(theta: &Mlp, state: &[f64]) -> Vec<f64> {
    theta.forward(state).into_iter().map(sigmoid).collect()
}

/// Independent Bernoulli draws; returns the mask and its probability.
pub fn sample_action<R: Rng + ?Sized>(rho: &[f64], rng: &mut R) -> (SelectionMask, f64) {
    let omega: Vec<bool> = rho.iter().map(|&p| rng.random::<f64>() < p).collect();
    let prob = mask_log_prob(rho, &omega).exp();
    (SelectionMask { omega }, prob)
}

/// Most likely mask: `rho_n > 0.5`.
pub fn greedy_action(rho: &[f64]) -> (SelectionMask, f64) {
    let omega: Vec<bool> = rho.iter().map(|&p| p > 0.5).collect();
    let prob = mask_log_prob(rho, &omega).exp();
    (SelectionMask { omega }, prob)
}

pub fn mask_log_prob(rho: &[f64], omega: &[bool]) -> f64 {
    rho.iter()
        .zip(omega)
        .map(|(&p, &w)| if w { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

/// One finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: SelectionMask,
    pub reward: f64,
    /// Probability of `action` under the policy that acted.
    pub behavior_prob: f64,
}

pub fn advantage(sample: &TransitionSample, value: &Mlp) -> f64 {
    sample.reward - value.forward(&sample.state)[0]
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub mean_advantage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Sample,
    Greedy,
}

#[derive(Clone, Debug)]
pub struct PpoAgent {
    pub config: PpoConfig,
    pub params: PolicyParams,
    policy_opt: Adam,
    value_opt: Adam,
    rng: SimRng,
    pub mode: ActionMode,
    updates: u64,
}

impl PpoAgent {
    pub fn new(n_cameras: usize, config: PpoConfig, seed: u64) -> Self {
        let mut init = rng::stream(seed, &[rng::tag::INIT]);
        let params = PolicyParams::init(n_cameras, config.hidden, &mut init);
        Self::from_params(params, config, seed)
    }

    pub fn from_params(params: PolicyParams, config: PpoConfig, seed: u64) -> Self {
        Self {
            policy_opt: Adam::new(params.policy.params().len(), config.policy_lr),
            value_opt: Adam::new(params.value.params().len(), config.value_lr),
            rng: rng::stream(seed, &[rng::tag::POLICY]),
            mode: ActionMode::Sample,
            updates: 0,
            params,
            config,
        }
    }

    pub fn n_cameras(&self) -> usize {
        self.params.policy.n_inputs()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn features(&self, aoi: &AoiVector, slot_len_ms: f64) -> Vec<f64> {
        normalize_state(aoi, slot_len_ms, &self.config.state)
    }

    pub fn act(&mut self, state: &[f64]) -> (SelectionMask, f64) {
        let rho = policy_forward(&self.params.policy, state);
        match self.mode {
            ActionMode::Sample => sample_action(&rho, &mut self.rng),
            ActionMode::Greedy => greedy_action(&rho),
        }
    }

    /// One PPO update on `batch`. On a non-finite gradient the parameters
    /// are left as they were.
    pub fn update(&mut self, batch: &[TransitionSample]) -> Result<UpdateStats, PpoError> {
        ppo_update(self, batch)
    }

    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        let json = serde_json::to_string_pretty(&Checkpoint::from_agent(self))
            .map_err(|e| PpoError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self, PpoError> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| PpoError::Format(e.to_string()))?;
        ck.into_agent(seed)
    }
}

impl Policy for PpoAgent {
    fn decide(&mut self, aoi: &AoiVector, ctx: &DecisionContext) -> Decision {
        let state = self.features(aoi, ctx.slot_len_ms);
        let (mask, prob) = self.act(&state);
        Decision {
            mask,
            prob: Some(prob),
            features: Some(state),
        }
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn ppo_update(agent: &mut PpoAgent, batch: &[TransitionSample]) -> Result<UpdateStats, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let n = agent.n_cameras();
    if let Some(s) = batch.iter().find(|s| s.state.len() != n || s.action.len() != n) {
        return Err(PpoError::ShapeMismatch {
            want: n,
            got: s.state.len().max(s.action.len()),
        });
    }
    let cfg = agent.config.clone();
    let b = batch.len() as f64;

    // Advantages are fixed for the whole update, from the value net before it moves.
    let mut adv: Vec<f64> = batch.iter().map(|s| advantage(s, &agent.params.value)).collect();
    let mean_advantage = adv.iter().sum::<f64>() / b;
    if cfg.normalize_advantages && batch.len() > 1 {
        let var = adv.iter().map(|a| (a - mean_advantage).powi(2)).sum::<f64>() / b;
        let sd = var.sqrt();
        for a in &mut adv {
            *a = if sd > 1e-12 { (*a - mean_advantage) / sd } else { 0.0 };
        }
    }
    let old_logp: Vec<f64> = batch.iter().map(|s| s.behavior_prob.ln()).collect();

    let mut policy = agent.params.policy.clone();
    let mut value = agent.params.value.clone();
    let mut policy_opt = agent.policy_opt.clone();
    let mut value_opt = agent.value_opt.clone();
    let mut stats = UpdateStats {
        mean_advantage,
        ..UpdateStats::default()
    };

    for _ in 0..cfg.epochs.max(1) {
        let mut pg = vec![0.0; policy.params().len()];
        let mut vg = vec![0.0; value.params().len()];
        let mut surrogate = 0.0;
        let mut clipped = 0usize;
        let mut value_loss = 0.0;
        for ((s, &a), &old) in batch.iter().zip(&adv).zip(&old_logp) {
            let cache = policy.forward_cached(&s.state);
            let rho: Vec<f64> = cache.output().iter().map(|&z| sigmoid(z)).collect();
            let ratio = (mask_log_prob(&rho, &s.action.omega) - old).exp();
            surrogate += clipped_objective(ratio, a, cfg.clip_eps);
            // The gradient flows only where the unclipped term is the minimum.
            let active = if a >= 0.0 { ratio <= 1.0 + cfg.clip_eps } else { ratio >= 1.0 - cfg.clip_eps };
            if active {
                // Ascent on ratio * A; d log pi / d z_n = omega_n - rho_n.
                let g: Vec<f64> = rho
                    .iter()
                    .zip(&s.action.omega)
                    .map(|(&p, &w)| -(a * ratio / b) * (f64::from(u8::from(w)) - p))
                    .collect();
                policy.backward(&cache, &g, &mut pg);
            } else {
                clipped += 1;
            }

            let vcache = value.forward_cached(&s.state);
            let err = vcache.output()[0] - s.reward;
            value_loss += err * err;
            value.backward(&vcache, &[2.0 * err / b], &mut vg);
        }
        if !all_finite(&pg) {
            return Err(PpoError::NonFiniteGradient { net: "policy", update: agent.updates });
        }
        if !all_finite(&vg) {
            return Err(PpoError::NonFiniteGradient { net: "value", update: agent.updates });
        }
        policy_opt.descend(policy.params_mut(), &pg);
        value_opt.descend(value.params_mut(), &vg);
        stats.surrogate = surrogate / b;
        stats.value_loss = value_loss / b;
        stats.clip_fraction = clipped as f64 / b;
    }

    agent.params.policy = policy;
    agent.params.value = value;
    agent.policy_opt = policy_opt;
    agent.value_opt = value_opt;
    agent.updates += 1;
    Ok(stats)
}

/// Anything that can run one decision episode against a policy.
pub trait Environment {
    type Error;
    fn run_episode(&mut self, policy: &mut dyn Policy) -> Result<Episode, Self::Error>;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Episode {
    pub sample: TransitionSample,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Error)]
pub enum TrainError<E> {
    #[error("environment: {0}")]
    Env(E),
    #[error(transparent)]
    Ppo(#[from] PpoError),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    pub rewards: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub updates: Vec<UpdateStats>,
}

/// Collects `episodes` episodes, updating after every full batch.
pub fn train<E: Environment>(
    env: &mut E,
    agent: &mut PpoAgent,
    episodes: usize,
) -> Result<TrainLog, TrainError<E::Error>> {
    let prev_mode = agent.mode;
    agent.mode = ActionMode::Sample;
    let mut log = TrainLog::default();
    let mut batch = Vec::with_capacity(agent.config.batch_size);
    for _ in 0..episodes {
        let ep = env.run_episode(agent).map_err(TrainError::Env)?;
        log.rewards.push(ep.sample.reward);
        log.psnr.push(ep.psnr);
        log.ssim.push(ep.ssim);
        batch.push(ep.sample);
        if batch.len() >= agent.config.batch_size {
            log.updates.push(agent.update(&batch)?);
            batch.clear();
        }
    }
    agent.mode = prev_mode;
    Ok(log)
}

#[derive(Serialize, Deserialize)]
struct NetJson {
    layers: Vec<LayerJson>,
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl NetJson {
    fn from_mlp(net: &Mlp) -> Self {
        Self {
            layers: net
                .shapes()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let (w, b) = net.layer(i);
                    LayerJson {
                        inputs: s.inputs,
                        outputs: s.outputs,
                        activation: s.activation,
                        weights: w.chunks(s.inputs).map(<[f64]>::to_vec).collect(),
                        bias: b.to_vec(),
                    }
                })
                .collect(),
        }
    }

    fn into_mlp(self) -> Result<Mlp, PpoError> {
        let mut shapes = Vec::new();
        let mut params = Vec::new();
        for l in self.layers {
            if l.weights.len() != l.outputs || l.weights.iter().any(|r| r.len() != l.inputs) || l.bias.len() != l.outputs {
                return Err(PpoError::Format(format!("layer {}x{} has mismatched arrays", l.outputs, l.inputs)));
            }
            shapes.push(LayerShape {
                inputs: l.inputs,
                outputs: l.outputs,
                activation: l.activation,
            });
            params.extend(l.weights.into_iter().flatten());
            params.extend(l.bias);
        }
        Mlp::from_parts(shapes, params).ok_or_else(|| PpoError::Format("layers do not chain".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: PpoConfig,
    policy: NetJson,
    value: NetJson,
}

impl Checkpoint {
    fn from_agent(agent: &PpoAgent) -> Self {
        Self {
            config: agent.config.clone(),
            policy: NetJson::from_mlp(&agent.params.policy),
            value: NetJson::from_mlp(&agent.params.value),
        }
    }

    fn into_agent(self, seed: u64) -> Result<PpoAgent, PpoError> {
        let params = PolicyParams {
            policy: self.policy.into_mlp()?,
            value: self.value.into_mlp()?,
        };
        if params.policy.n_inputs() != params.policy.n_outputs() || params.value.n_inputs() != params.policy.n_inputs() {
            return Err(PpoError::Format("policy and value networks disagree on camera count".into()));
        }
        Ok(PpoAgent::from_params(params, self.config, seed))
    }
}
