use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AgentNetworks;
use crate::envs::{brute_force_optimum, Env};
use crate::error::{Error, Result};
use crate::learner::{rollout, ActMode, Algo, LearnerState};

/// Absolute tolerance for counting a discrete episode as optimal.
pub const DISCRETE_SUCCESS_TOL: f64 = 1e-6;
/// Fraction of the analytic optimum a continuous episode must reach.
pub const CONTINUOUS_SUCCESS_FRACTION: f64 = 0.9;

/// When an evaluation episode counts as a success.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SuccessThreshold {
    /// Return within `tol` of the enumerated optimum.
    Exact { optimum: f64, tol: f64 },
    /// Return at least `fraction · optimum`.
    Fraction { optimum: f64, fraction: f64 },
}

impl SuccessThreshold {
    pub fn optimum(&self) -> f64 {
        match self {
            SuccessThreshold::Exact { optimum, .. } | SuccessThreshold::Fraction { optimum, .. } => *optimum,
        }
    }

    pub fn is_success(&self, ret: f64) -> bool {
        match self {
            SuccessThreshold::Exact { optimum, tol } => (ret - optimum).abs() <= *tol,
            SuccessThreshold::Fraction { optimum, fraction } => ret >= fraction * optimum,
        }
    }
}

pub fn success_threshold(env: &dyn Env) -> Result<SuccessThreshold> {
    let optimum = brute_force_optimum(env)?;
    Ok(if env.descriptor().is_discrete() {
        SuccessThreshold::Exact { optimum, tol: DISCRETE_SUCCESS_TOL }
    } else {
        SuccessThreshold::Fraction { optimum, fraction: CONTINUOUS_SUCCESS_FRACTION }
    })
}

/// Aggregate of a batch of evaluation episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_return: f64,
    /// Population standard deviation over episodes.
    pub return_stddev: f64,
    pub success_rate: f64,
}

impl Evaluation {
    pub fn from_returns(returns: &[f64], threshold: &SuccessThreshold) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::Usage("evaluation needs at least one episode".into()));
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        let wins = returns.iter().filter(|r| threshold.is_success(**r)).count();
        Ok(Self { mean_return: mean, return_stddev: var.sqrt(), success_rate: wins as f64 / n })
    }
}

/// Evaluation RNG for a learner snapshot; independent of every training stream.
pub fn eval_rng(seed: u64, env_steps: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ env_steps.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(2);
    rng
}

/// Plays `n_episodes` with fixed networks on a clone of `env`.
pub fn evaluate_networks(
    nets: &AgentNetworks,
    algo: Algo,
    env: &dyn Env,
    n_episodes: usize,
    mode: ActMode,
    rng: &mut ChaCha8Rng,
    threshold: &SuccessThreshold,
) -> Result<Evaluation> {
    if n_episodes == 0 {
        return Err(Error::Usage("n_episodes must be at least 1".into()));
    }
    let mut env = env.boxed_clone();
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        returns.push(rollout(nets, algo, env.as_mut(), rng, mode, 0)?.total_reward());
    }
    Evaluation::from_returns(&returns, threshold)
}

/// Evaluates a learner snapshot: greedy / argmax-Q / noise-free actions by
/// default, sampled actions when `stochastic_eval` is set. The learner and
/// `env` are left untouched.
pub fn evaluate(
    state: &LearnerState,
    env: &dyn Env,
    n_episodes: usize,
    threshold: &SuccessThreshold,
) -> Result<Evaluation> {
    let mode = if state.config.stochastic_eval && state.algo.has_actor() && !state.algo.is_continuous() {
        ActMode::Sample
    } else {
        ActMode::Greedy
    };
    let mut rng = eval_rng(state.seed, state.env_steps);
    evaluate_networks(&state.eval.agents, state.algo, env, n_episodes, mode, &mut rng, threshold)
}
