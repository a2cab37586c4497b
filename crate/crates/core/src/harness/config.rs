//! Experiment configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PpoConfig;
use crate::simulator::{ConfigError, ConfigIssue, SimConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gamma_min_ms: f64,
    pub gamma_max_ms: f64,
    pub gamma_step_ms: f64,
    pub replications: usize,
    /// Mean low-traffic delays for the delay sweep, ms.
    pub delays_ms: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gamma_min_ms: 0.0,
            gamma_max_ms: 120.0,
            gamma_step_ms: 6.0,
            replications: 10,
            delays_ms: vec![20.0, 40.0, 60.0, 80.0],
        }
    }
}

impl SweepConfig {
    /// `min, min + step, ...` up to and including `max`.
    pub fn gamma_grid(&self) -> Vec<f64> {
        let n = ((self.gamma_max_ms - self.gamma_min_ms) / self.gamma_step_ms + 1e-9).floor() as usize;
        (0..=n).map(|i| self.gamma_min_ms + i as f64 * self.gamma_step_ms).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurstinessConfig {
    pub mean_delay_low: f64,
    /// `mean_delay_high = high_factor * mean_delay_low`.
    pub high_factor: f64,
    /// Switching rates, per ms.
    pub lambda_switch: f64,
    pub mu_switch: f64,
    pub replications: usize,
    /// MAT used while measuring; the delay sweep's optimum is a good choice.
    pub gamma_ms: f64,
    /// Recovered once PSNR is within this fraction of the low-traffic mean.
    pub recovery_tolerance: f64,
    /// Evaluations that count as settled low traffic, in slots since the
    /// last switch to low.
    pub settled_after_slots: u64,
    /// Longest recovery window scanned, slots.
    pub max_lag_slots: u64,
    pub bootstrap_resamples: usize,
}

impl Default for BurstinessConfig {
    fn default() -> Self {
        Self {
            mean_delay_low: 30.0,
            high_factor: 4.0,
            lambda_switch: 0.002,
            mu_switch: 0.004,
            replications: 10,
            gamma_ms: 51.0,
            recovery_tolerance: 0.05,
            settled_after_slots: 600,
            max_lag_slots: 1_500,
            bootstrap_resamples: 2_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoRunConfig {
    pub train_episodes: usize,
    pub eval_episodes: usize,
    /// Trailing window for the plateau test, episodes.
    pub plateau_window: usize,
    /// Plateau reached when the trailing mean is within this fraction of
    /// the best trailing mean.
    pub plateau_tolerance: f64,
    pub agent: PpoConfig,
}

impl Default for PpoRunConfig {
    fn default() -> Self {
        Self {
            train_episodes: 600,
            eval_episodes: 200,
            plateau_window: 100,
            plateau_tolerance: 0.02,
            agent: PpoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub sweep: SweepConfig,
    pub burstiness: BurstinessConfig,
    pub ppo: PpoRunConfig,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{}: {error}", path.display())]
    Invalid { path: PathBuf, error: ConfigError },
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = match self.sim.validate() {
            Ok(()) => Vec::new(),
            Err(e) => e.issues,
        };
        let mut bad = |field: &str, message: &str| {
            issues.push(ConfigIssue {
                field: field.into(),
                message: message.into(),
            })
        };
        let s = &self.sweep;
        if !(s.gamma_step_ms > 0.0 && s.gamma_min_ms >= 0.0 && s.gamma_max_ms >= s.gamma_min_ms) {
            bad("sweep.gamma_step_ms", "grid needs 0 <= min <= max and step > 0");
        }
        if s.replications == 0 {
            bad("sweep.replications", "must be >= 1");
        }
        if s.delays_ms.is_empty() || s.delays_ms.windows(2).any(|w| w[0] >= w[1]) || s.delays_ms.iter().any(|&d| d <= 0.0) {
            bad("sweep.delays_ms", "must be nonempty, positive and strictly increasing");
        }
        let b = &self.burstiness;
        if !(b.mean_delay_low > 0.0 && b.high_factor > 0.0) {
            bad("burstiness.mean_delay_low", "delays must be > 0");
        }
        if !(b.lambda_switch > 0.0 && b.mu_switch > 0.0) {
            bad("burstiness.lambda_switch", "switching rates must be > 0");
        }
        if b.replications == 0 {
            bad("burstiness.replications", "must be >= 1");
        }
        let p = &self.ppo;
        if p.eval_episodes == 0 {
            bad("ppo.eval_episodes", "must be >= 1");
        }
        if p.plateau_window == 0 {
            bad("ppo.plateau_window", "must be >= 1");
        }
        if p.agent.batch_size == 0 {
            bad("ppo.agent.batch_size", "must be >= 1");
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, LoadError> {
        let parse_err = |message: String| LoadError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let cfg: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| parse_err(e.to_string()))?
        };
        cfg.validate().map_err(|error| LoadError::Invalid {
            path: path.to_path_buf(),
            error,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_0_to_120_by_6() {
        let g = SweepConfig::default().gamma_grid();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[1], g[20]), (0.0, 6.0, 120.0));
    }

    #[test]
    fn empty_toml_is_the_default() {
        let cfg = ExperimentConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn json_and_toml_agree() {
        let toml = "[sim]\nn_cameras = 4\nseed = 9\n[sim.policy]\nkind = \"fresh_only\"\n";
        let json = r#"{"sim": {"n_cameras": 4, "seed": 9, "policy": {"kind": "fresh_only"}}}"#;
        let a = ExperimentConfig::parse(toml, Path::new("a.toml")).unwrap();
        let b = ExperimentConfig::parse(json, Path::new("a.json")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sim.n_cameras, 4);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("[sim]\nbogus = 1\n", Path::new("a.toml")),
            Err(LoadError::Parse { .. })
        ));
        match ExperimentConfig::parse("[sweep]\nreplications = 0\n", Path::new("a.toml")) {
            Err(LoadError::Invalid { error, .. }) => assert!(error.mentions("sweep.replications")),
            other => panic!("{other:?}"),
        }
    }
}
