//! Replay, TD targets, critic descent, sign-modulated actor ascent and the
//! training loops for the actor-critic variants and value-based baselines.

pub mod batch;
pub mod config;
pub mod episode;
pub mod rollout;
pub mod state;

pub use batch::Batch;
pub use config::{Algo, NqmixConfig};
pub use episode::{Episode, ReplayBuffer};
pub use rollout::{rollout, ActMode};
pub use state::{
    all_actions_actor_grad, all_actions_actor_grad_weighted, deterministic_actor_grad, discounts,
    expected_state_value, policy_state_value, td_target_discrete, ActorGrads, CriticPass, LearnerState, Networks,
};

use serde::{Deserialize, Serialize};

use crate::envs::Env;
use crate::error::Result;
use crate::harness::{evaluate, success_threshold, Evaluation};

/// One periodic evaluation of the greedy (or sampled) policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub env_steps: u64,
    pub episode_count: u64,
    pub evaluation: Evaluation,
}

/// Runs the training loop until `config.total_steps` environment steps,
/// calling `on_eval` after every evaluation.
///
/// Evaluations happen at step 0, every `eval_interval_steps`, and once more at
/// the end. A zero step budget produces no evaluations and no updates.
pub fn run_training(
    state: &mut LearnerState,
    env: &mut dyn Env,
    mut on_eval: impl FnMut(&LearnerState, &EvalPoint) -> Result<()>,
) -> Result<Vec<EvalPoint>> {
    let mut points = Vec::new();
    let total = state.config.total_steps;
    if total == 0 {
        return Ok(points);
    }
    let threshold = success_threshold(env)?;
    let interval = state.config.eval_interval_steps;
    let mut next_eval = state.env_steps.div_ceil(interval) * interval;
    let mut last_eval = None;
    loop {
        let done = state.env_steps >= total;
        if (state.env_steps >= next_eval || done) && last_eval != Some(state.env_steps) {
            let evaluation = evaluate(state, &*env, state.config.eval_episodes, &threshold)?;
            let point = EvalPoint { env_steps: state.env_steps, episode_count: state.episodes, evaluation };
            on_eval(state, &point)?;
            points.push(point);
            last_eval = Some(state.env_steps);
            while next_eval <= state.env_steps {
                next_eval += interval;
            }
        }
        if done {
            return Ok(points);
        }
        state.step(env)?;
    }
}

/// Builds a fresh learner for `algo` and trains it on `env`.
pub fn train(config: &NqmixConfig, env: &mut dyn Env, algo: Algo, seed: u64) -> Result<Vec<EvalPoint>> {
    let mut state = LearnerState::new(algo, config.clone(), env.descriptor(), seed)?;
    run_training(&mut state, env, |_, _| Ok(()))
}
