use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixers::MixerKind;

/// Training algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Discrete actor-critic over the MLP mixer.
    Nqmix,
    /// Discrete actor-critic over the hypernetwork mixer without `|·|`.
    NqmixM,
    /// Deterministic-policy actor-critic over the MLP mixer.
    NqmixContinuous,
    /// Value-based baseline with the monotonic hypernetwork mixer.
    Qmix,
    /// Value-based baseline with the additive mixer.
    Vdn,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Nqmix, Algo::NqmixM, Algo::NqmixContinuous, Algo::Qmix, Algo::Vdn];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Nqmix => "nqmix",
            Algo::NqmixM => "nqmix_m",
            Algo::NqmixContinuous => "nqmix_continuous",
            Algo::Qmix => "qmix",
            Algo::Vdn => "vdn",
        }
    }

    pub fn mixer_kind(self) -> MixerKind {
        match self {
            Algo::Nqmix | Algo::NqmixContinuous => MixerKind::Nqmix,
            Algo::NqmixM => MixerKind::NqmixM,
            Algo::Qmix => MixerKind::Qmix,
            Algo::Vdn => MixerKind::Vdn,
        }
    }

    /// Whether the algorithm trains per-agent policy heads.
    pub fn has_actor(self) -> bool {
        matches!(self, Algo::Nqmix | Algo::NqmixM | Algo::NqmixContinuous)
    }

    pub fn is_continuous(self) -> bool {
        self == Algo::NqmixContinuous
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| Error::InvalidValue {
            field: "algo".into(),
            reason: format!("unknown algorithm `{s}` (expected nqmix, nqmix_m, nqmix_continuous, qmix or vdn)"),
        })
    }
}

/// Learner hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NqmixConfig {
    pub gamma: f64,
    pub tau_soft: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    /// Episodes per minibatch.
    pub batch_episodes: usize,
    pub buffer_capacity: usize,
    pub total_steps: u64,
    pub eval_interval_steps: u64,
    pub eval_episodes: usize,
    pub hidden_width: usize,
    /// ε-greedy schedule for the value-based baselines.
    pub epsilon_start: f64,
    pub epsilon_finish: f64,
    pub epsilon_anneal_fraction: f64,
    /// Gaussian behaviour noise for continuous actions, as a fraction of the action range.
    pub exploration_noise: f64,
    /// Evaluate with sampled rather than greedy actions.
    pub stochastic_eval: bool,
}

impl Default for NqmixConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau_soft: 0.001,
            lr_critic: 5e-4,
            lr_actor: 5e-4,
            batch_episodes: 32,
            buffer_capacity: 5000,
            total_steps: 50_000,
            eval_interval_steps: 1000,
            eval_episodes: 32,
            hidden_width: 64,
            epsilon_start: 1.0,
            epsilon_finish: 0.05,
            epsilon_anneal_fraction: 0.3,
            exploration_noise: 0.1,
            stochastic_eval: false,
        }
    }
}

impl NqmixConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::InvalidValue { field: field.into(), reason: reason.into() });
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if !(self.tau_soft > 0.0 && self.tau_soft <= 1.0) {
            return bad("tau_soft", "must lie in (0, 1]");
        }
        if !(self.lr_critic > 0.0) {
            return bad("lr_critic", "must be positive");
        }
        if !(self.lr_actor > 0.0) {
            return bad("lr_actor", "must be positive");
        }
        if self.batch_episodes == 0 {
            return bad("batch_episodes", "must be positive");
        }
        if self.buffer_capacity < self.batch_episodes {
            return bad("buffer_capacity", "must hold at least one minibatch");
        }
        if self.eval_interval_steps == 0 {
            return bad("eval_interval_steps", "must be at least 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes", "must be at least 1");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_finish) {
            return bad("epsilon_start", "exploration rates must lie in [0, 1]");
        }
        if !(self.epsilon_anneal_fraction > 0.0 && self.epsilon_anneal_fraction <= 1.0) {
            return bad("epsilon_anneal_fraction", "must lie in (0, 1]");
        }
        if !(self.exploration_noise >= 0.0) {
            return bad("exploration_noise", "must be non-negative");
        }
        Ok(())
    }

    /// Linearly annealed ε at a given environment step.
    pub fn epsilon_at(&self, env_steps: u64) -> f64 {
        let horizon = (self.total_steps as f64 * self.epsilon_anneal_fraction).max(1.0);
        let frac = env_steps as f64 / horizon;
        if frac >= 1.0 {
            return self.epsilon_finish;
        }
        self.epsilon_start + frac * (self.epsilon_finish - self.epsilon_start)
    }
}
