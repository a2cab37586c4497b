//! Stochastic uplink: per-frame transmission delay, optionally modulated by
//! a two-state switched-Poisson (Gilbert-Elliott) traffic process.
//!
//! The traffic process is a continuous-time Markov chain on
//! `{LowTraffic, HighTraffic}` with switching rates `lambda` (low to high)
//! and `mu` (high to low), both per millisecond. It is advanced once per
//! slot through the exact transition matrix `P(T_s) = exp(Q T_s)`, so no
//! discretization error is introduced regardless of the slot length.
//!
//! Delays are exponential (or deterministic, for analysis runs) with a mean
//! that depends on the traffic state at generation time, and are rounded up
//! to whole slots with a floor of one slot.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Slot;

/// Allowed drift between `1 - exp(-eta^2)` and `mu / (lambda + mu)`.
pub const ETA_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("channel.{field} must be {requirement}, got {value}")]
    InvalidParameter {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("transition interval must be non-negative, got {0} ms")]
    NegativeInterval(f64),
    #[error(
        "eta implies a low-traffic share of {from_eta}, but mu/(lambda+mu) = {from_rates}"
    )]
    EtaMismatch { from_eta: f64, from_rates: f64 },
    #[error("both switching rates are zero; the stationary distribution is not unique")]
    Reducible,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayDistribution {
    #[default]
    Exponential,
    /// Every frame takes exactly the state's mean delay. Used for
    /// hand-checkable runs.
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Mean transmission delay (ms) in the low-traffic state.
    pub mean_delay_low: f64,
    /// Mean transmission delay (ms) in the high-traffic state.
    pub mean_delay_high: f64,
    /// Switching rate low -> high, per ms.
    pub lambda_switch: f64,
    /// Switching rate high -> low, per ms.
    pub mu_switch: f64,
    /// Normalized fading-envelope threshold. When present the stationary
    /// low-traffic share must equal `1 - exp(-eta^2)`.
    pub eta: Option<f64>,
    pub burstiness_enabled: bool,
    /// Background packet rates `(high, low)`. Stored only; they do not
    /// drive frame delivery.
    pub background_rates: Option<(f64, f64)>,
    pub delay_distribution: DelayDistribution,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            mean_delay_low: 60.0,
            mean_delay_high: 240.0,
            lambda_switch: 0.001,
            mu_switch: 0.002,
            eta: None,
            burstiness_enabled: false,
            background_rates: None,
            delay_distribution: DelayDistribution::Exponential,
        }
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), ChannelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ChannelError::InvalidParameter {
            field,
            requirement: "finite and > 0",
            value,
        })
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<(), ChannelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ChannelError::InvalidParameter {
            field,
            requirement: "finite and >= 0",
            value,
        })
    }
}

impl ChannelConfig {
    /// Plain exponential delay with the given mean and no burstiness.
    pub fn exponential(mean_delay_ms: f64) -> Self {
        Self {
            mean_delay_low: mean_delay_ms,
            mean_delay_high: mean_delay_ms,
            ..Self::default()
        }
    }

    pub fn deterministic(delay_ms: f64) -> Self {
        Self {
            delay_distribution: DelayDistribution::Deterministic,
            ..Self::exponential(delay_ms)
        }
    }

    /// Fixes `mu` from `eta` and `lambda` so that the stationary constraint
    /// holds: `mu / (lambda + mu) = 1 - exp(-eta^2)`.
    pub fn with_eta(mut self, eta: f64, lambda_switch: f64) -> Result<Self, ChannelError> {
        positive("eta", eta)?;
        positive("lambda_switch", lambda_switch)?;
        let p_low = -(-eta * eta).exp_m1();
        self.lambda_switch = lambda_switch;
        self.mu_switch = lambda_switch * p_low / (1.0 - p_low);
        self.eta = Some(eta);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        positive("mean_delay_low", self.mean_delay_low)?;
        positive("mean_delay_high", self.mean_delay_high)?;
        non_negative("lambda_switch", self.lambda_switch)?;
        non_negative("mu_switch", self.mu_switch)?;
        if let Some((high, low)) = self.background_rates {
            positive("background_rates[0]", high)?;
            positive("background_rates[1]", low)?;
        }
        if let Some(eta) = self.eta {
            positive("eta", eta)?;
            stationary_distribution(self)?;
        }
        Ok(())
    }

    /// Mean delay (ms) used for frames generated in `state`.
    pub fn mean_delay(&self, state: TrafficState) -> f64 {
        match (self.burstiness_enabled, state) {
            (true, TrafficState::HighTraffic) => self.mean_delay_high,
            _ => self.mean_delay_low,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficState {
    /// `s1`
    #[default]
    LowTraffic,
    /// `s2`
    HighTraffic,
}

impl TrafficState {
    pub fn index(self) -> usize {
        match self {
            TrafficState::LowTraffic => 0,
            TrafficState::HighTraffic => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            TrafficState::LowTraffic => TrafficState::HighTraffic,
            TrafficState::HighTraffic => TrafficState::LowTraffic,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TrafficState::LowTraffic => "low",
            TrafficState::HighTraffic => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelState {
    pub traffic_state: TrafficState,
    pub last_switch_slot: Slot,
}

/// Row-stochastic 2x2 matrix; `p[i][j]` is the probability of being in
/// state `j` after the interval when starting in state `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub p: [[f64; 2]; 2],
}

impl TransitionMatrix {
    pub const IDENTITY: TransitionMatrix = TransitionMatrix {
        p: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub fn prob(&self, from: TrafficState, to: TrafficState) -> f64 {
        self.p[from.index()][to.index()]
    }

    pub fn mul(&self, rhs: &TransitionMatrix) -> TransitionMatrix {
        let mut p = [[0.0; 2]; 2];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.p[i][0] * rhs.p[0][j] + self.p[i][1] * rhs.p[1][j];
            }
        }
        TransitionMatrix { p }
    }
}

/// `Q = [[-lambda, lambda], [mu, -mu]]`.
pub fn generator_matrix(cfg: &ChannelConfig) -> [[f64; 2]; 2] {
    let (l, m) = (cfg.lambda_switch, cfg.mu_switch);
    [[-l, l], [m, -m]]
}

/// Closed-form `exp(Q t)` for the two-state chain, `t` in ms.
pub fn transition_matrix(cfg: &ChannelConfig, t_ms: f64) -> Result<TransitionMatrix, ChannelError> {
    if t_ms.is_nan() || t_ms < 0.0 {
        return Err(ChannelError::NegativeInterval(t_ms));
    }
    let (l, m) = (cfg.lambda_switch, cfg.mu_switch);
    let sum = l + m;
    if sum == 0.0 {
        return Ok(TransitionMatrix::IDENTITY);
    }
    // 1 - e^{-t(l+m)}, accurate for small t
    let decay = -(-t_ms * sum).exp_m1();
    let low_to_high = l * decay / sum;
    let high_to_low = m * decay / sum;
    Ok(TransitionMatrix {
        p: [
            [1.0 - low_to_high, low_to_high],
            [high_to_low, 1.0 - high_to_low],
        ],
    })
}

/// `(mu/(lambda+mu), lambda/(lambda+mu))`, checked against `eta` if set.
pub fn stationary_distribution(cfg: &ChannelConfig) -> Result<(f64, f64), ChannelError> {
    let (l, m) = (cfg.lambda_switch, cfg.mu_switch);
    let sum = l + m;
    if sum == 0.0 {
        return Err(ChannelError::Reducible);
    }
    let p_low = m / sum;
    if let Some(eta) = cfg.eta {
        let from_eta = -(-eta * eta).exp_m1();
        if (from_eta - p_low).abs() > ETA_TOLERANCE {
            return Err(ChannelError::EtaMismatch {
                from_eta,
                from_rates: p_low,
            });
        }
    }
    Ok((p_low, l / sum))
}

/// Draws the traffic state one slot (`slot_len_ms`) later.
pub fn step_traffic_state<R: Rng + ?Sized>(
    state: ChannelState,
    cfg: &ChannelConfig,
    slot_len_ms: f64,
    slot: Slot,
    rng: &mut R,
) -> Result<ChannelState, ChannelError> {
    let p = transition_matrix(cfg, slot_len_ms)?;
    Ok(advance(state, &p, slot, rng))
}

fn advance<R: Rng + ?Sized>(
    state: ChannelState,
    p: &TransitionMatrix,
    slot: Slot,
    rng: &mut R,
) -> ChannelState {
    let current = state.traffic_state;
    let leave = p.prob(current, current.other());
    // always consume one draw so the stream stays aligned with the slot index
    let u: f64 = rng.random();
    if u < leave {
        ChannelState {
            traffic_state: current.other(),
            last_switch_slot: slot,
        }
    } else {
        state
    }
}

/// One transmission delay in whole slots (ceil, at least one).
pub fn sample_transmission_delay<R: Rng + ?Sized>(
    state: TrafficState,
    cfg: &ChannelConfig,
    slot_len_ms: f64,
    rng: &mut R,
) -> Slot {
    let mean = cfg.mean_delay(state);
    let delay_ms = match cfg.delay_distribution {
        DelayDistribution::Exponential => {
            let unit: f64 = Exp1.sample(rng);
            mean * unit
        }
        DelayDistribution::Deterministic => mean,
    };
    let slots = (delay_ms / slot_len_ms).ceil();
    if slots.is_finite() && slots >= 1.0 {
        slots as Slot
    } else {
        1
    }
}

/// Owned traffic process: configuration, cached one-slot transition
/// matrix, current state and a dedicated RNG stream.
#[derive(Clone, Debug)]
pub struct TrafficProcess<R> {
    cfg: ChannelConfig,
    one_slot: TransitionMatrix,
    state: ChannelState,
    rng: R,
}

impl<R: Rng> TrafficProcess<R> {
    /// Starts from a draw of the stationary distribution when burstiness is
    /// enabled (low traffic otherwise).
    pub fn new(cfg: ChannelConfig, slot_len_ms: f64, mut rng: R) -> Result<Self, ChannelError> {
        cfg.validate()?;
        let one_slot = transition_matrix(&cfg, slot_len_ms)?;
        let traffic_state = if cfg.burstiness_enabled {
            let p_high = stationary_distribution(&cfg).map(|(_, h)| h).unwrap_or(0.0);
            if rng.random::<f64>() < p_high {
                TrafficState::HighTraffic
            } else {
                TrafficState::LowTraffic
            }
        } else {
            TrafficState::LowTraffic
        };
        Ok(Self {
            cfg,
            one_slot,
            state: ChannelState {
                traffic_state,
                last_switch_slot: 0,
            },
            rng,
        })
    }

    pub fn state(&self) -> ChannelState {
        self.state
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    /// Advances one slot. A no-op when burstiness is disabled.
    pub fn step(&mut self, slot: Slot) -> ChannelState {
        if self.cfg.burstiness_enabled {
            self.state = advance(self.state, &self.one_slot, slot, &mut self.rng);
        }
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn cfg(l: f64, m: f64) -> ChannelConfig {
        ChannelConfig {
            lambda_switch: l,
            mu_switch: m,
            burstiness_enabled: true,
            ..ChannelConfig::default()
        }
    }

    /// exp(A) by scaling and squaring around a truncated Taylor series.
    fn expm_taylor(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let norm = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        let mut squarings = 0;
        let mut scale = 1.0;
        while norm * scale > 0.5 {
            scale *= 0.5;
            squarings += 1;
        }
        let s = [[a[0][0] * scale, a[0][1] * scale], [a[1][0] * scale, a[1][1] * scale]];
        let mul = |x: [[f64; 2]; 2], y: [[f64; 2]; 2]| {
            let mut r = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
                }
            }
            r
        };
        let mut term = [[1.0, 0.0], [0.0, 1.0]];
        let mut sum = term;
        for k in 1..30 {
            term = mul(term, s);
            for row in term.iter_mut() {
                for v in row.iter_mut() {
                    *v /= k as f64;
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    sum[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            sum = mul(sum, sum);
        }
        sum
    }

    #[test]
    fn generator_substitution() {
        assert_eq!(generator_matrix(&cfg(0.1, 0.2)), [[-0.1, 0.1], [0.2, -0.2]]);
        let q = generator_matrix(&cfg(0.5, 0.5));
        assert_eq!(q[0][1], q[1][0]);
        assert_eq!(q[0][0], q[1][1]);
        let q = generator_matrix(&cfg(0.01, 0.03));
        assert_eq!(q[0][0] + q[0][1], 0.0);
        assert_eq!(q[1][0] + q[1][1], 0.0);
    }

    #[test]
    fn transition_matrix_at_zero_is_identity() {
        assert_eq!(transition_matrix(&cfg(0.3, 0.7), 0.0).unwrap(), TransitionMatrix::IDENTITY);
    }

    #[test]
    fn transition_matrix_long_run_limit() {
        let p = transition_matrix(&cfg(1.0, 1.0), 1e3).unwrap();
        for row in p.p {
            assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_matrix_matches_series_expm() {
        let c = cfg(0.1, 0.2);
        let q = generator_matrix(&c);
        let qt = [[q[0][0] * 10.0, q[0][1] * 10.0], [q[1][0] * 10.0, q[1][1] * 10.0]];
        let oracle = expm_taylor(qt);
        let p = transition_matrix(&c, 10.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.p[i][j] - oracle[i][j]).abs() < 1e-9, "{i}{j}");
            }
        }
    }

    #[test]
    fn negative_interval_rejected() {
        assert_eq!(
            transition_matrix(&cfg(0.1, 0.2), -1.0),
            Err(ChannelError::NegativeInterval(-1.0))
        );
    }

    #[test]
    fn stationary_examples() {
        assert_eq!(stationary_distribution(&cfg(0.4, 0.4)).unwrap(), (0.5, 0.5));
        assert_eq!(stationary_distribution(&cfg(1.0, 3.0)).unwrap(), (0.75, 0.25));
        assert_eq!(stationary_distribution(&cfg(0.0, 0.0)), Err(ChannelError::Reducible));
    }

    #[test]
    fn eta_constraint() {
        // 1 - e^{-eta^2} = 0.75  <=>  eta^2 = ln 4
        let eta = 4f64.ln().sqrt();
        let c = ChannelConfig::default().with_eta(eta, 1.0).unwrap();
        assert!((c.mu_switch - 3.0).abs() < 1e-12);
        let accepted = ChannelConfig { eta: Some(eta), ..cfg(1.0, 3.0) };
        assert!(accepted.validate().is_ok());
        let rejected = ChannelConfig { eta: Some(eta), ..cfg(1.0, 2.0) };
        assert!(matches!(rejected.validate(), Err(ChannelError::EtaMismatch { .. })));
    }

    #[test]
    fn invalid_means_rejected() {
        let c = ChannelConfig { mean_delay_low: 0.0, ..ChannelConfig::default() };
        assert!(matches!(
            c.validate(),
            Err(ChannelError::InvalidParameter { field: "mean_delay_low", .. })
        ));
    }

    #[test]
    fn zero_rates_or_zero_slot_freeze_the_state() {
        let mut r = rng::stream(1, &[]);
        for start in [TrafficState::LowTraffic, TrafficState::HighTraffic] {
            let s0 = ChannelState { traffic_state: start, last_switch_slot: 0 };
            let mut s = s0;
            for slot in 1..1000 {
                s = step_traffic_state(s, &cfg(0.0, 0.0), 1.0, slot, &mut r).unwrap();
            }
            assert_eq!(s, s0);
            for slot in 1..1000 {
                s = step_traffic_state(s, &cfg(5.0, 5.0), 0.0, slot, &mut r).unwrap();
            }
            assert_eq!(s, s0);
        }
    }

    #[test]
    fn occupancy_converges_to_stationary() {
        let c = cfg(1.0, 3.0);
        let mut process = TrafficProcess::new(c.clone(), 1.0, rng::stream(11, &[rng::tag::TRAFFIC])).unwrap();
        let n = 1_000_000u64;
        let mut low = 0u64;
        for slot in 1..=n {
            if process.step(slot).traffic_state == TrafficState::LowTraffic {
                low += 1;
            }
        }
        let (p_low, _) = stationary_distribution(&c).unwrap();
        let frac = low as f64 / n as f64;
        // lag-one autocorrelation of the chain inflates the binomial variance
        let rho = (-(c.lambda_switch + c.mu_switch)).exp();
        let sigma = (p_low * (1.0 - p_low) / n as f64 * (1.0 + rho) / (1.0 - rho)).sqrt();
        assert!((frac - p_low).abs() < 3.0 * sigma, "frac {frac} p {p_low} sigma {sigma}");
    }

    #[test]
    fn delay_sample_mean_near_sixty_ms() {
        let c = ChannelConfig::exponential(60.0);
        let mut r = rng::stream(3, &[rng::tag::CAMERA_BASE]);
        let n = 100_000;
        let sum: u64 = (0..n)
            .map(|_| sample_transmission_delay(TrafficState::LowTraffic, &c, 1.0, &mut r))
            .sum();
        let mean = sum as f64 / n as f64;
        assert!((58.8..=61.2).contains(&mean), "{mean}");
    }

    #[test]
    fn tiny_mean_rounds_up_to_one_slot() {
        let c = ChannelConfig::exponential(f64::MIN_POSITIVE);
        let mut r = rng::stream(3, &[]);
        for _ in 0..1000 {
            assert_eq!(sample_transmission_delay(TrafficState::LowTraffic, &c, 1.0, &mut r), 1);
        }
    }

    #[test]
    fn high_traffic_uses_high_mean_only_when_bursty() {
        let mut c = ChannelConfig::deterministic(10.0);
        c.mean_delay_high = 40.0;
        let mut r = rng::stream(3, &[]);
        assert_eq!(sample_transmission_delay(TrafficState::HighTraffic, &c, 1.0, &mut r), 10);
        c.burstiness_enabled = true;
        assert_eq!(sample_transmission_delay(TrafficState::HighTraffic, &c, 1.0, &mut r), 40);
        assert_eq!(sample_transmission_delay(TrafficState::LowTraffic, &c, 1.0, &mut r), 10);
    }

    #[test]
    fn seeded_delays_replay() {
        let c = ChannelConfig::exponential(60.0);
        let draw = || {
            let mut r = rng::stream(99, &[rng::tag::CAMERA_BASE + 2]);
            (0..500)
                .map(|_| sample_transmission_delay(TrafficState::LowTraffic, &c, 1.0, &mut r))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_and_chapman_kolmogorov_holds(
            l in 0.0f64..2.0, m in 0.0f64..2.0, t1 in 0.0f64..50.0, t2 in 0.0f64..50.0
        ) {
            let c = cfg(l, m);
            let a = transition_matrix(&c, t1).unwrap();
            let b = transition_matrix(&c, t2).unwrap();
            let ab = transition_matrix(&c, t1 + t2).unwrap();
            let prod = a.mul(&b);
            for i in 0..2 {
                prop_assert!((a.p[i][0] + a.p[i][1] - 1.0).abs() < 1e-12);
                for j in 0..2 {
                    prop_assert!((0.0..=1.0).contains(&a.p[i][j]));
                    prop_assert!((prod.p[i][j] - ab.p[i][j]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn entries_move_monotonically_toward_stationary(
            l in 0.01f64..2.0, m in 0.01f64..2.0, t in 0.0f64..20.0, dt in 0.0f64..20.0
        ) {
            let c = cfg(l, m);
            let (p_low, _) = stationary_distribution(&c).unwrap();
            let a = transition_matrix(&c, t).unwrap();
            let b = transition_matrix(&c, t + dt).unwrap();
            for i in 0..2 {
                prop_assert!((b.p[i][0] - p_low).abs() <= (a.p[i][0] - p_low).abs() + 1e-15);
            }
        }
    }
}
