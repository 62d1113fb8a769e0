//! Fixtures shared by the benchmarks: a warmed-up learner and a ready batch.

use nqmix_core::envs::{make_env, Env};
use nqmix_core::learner::{Algo, Batch, LearnerState, NqmixConfig};
use nqmix_core::Result;

/// A learner whose buffer already holds one minibatch, plus a sampled batch.
pub fn warm_learner(algo: Algo, env_name: &str) -> Result<(LearnerState, Box<dyn Env>, Batch)> {
    let mut env = make_env(env_name, None)?;
    let config = NqmixConfig::default();
    let mut state = LearnerState::new(algo, config, env.descriptor(), 0)?;
    for _ in 0..state.config.batch_episodes {
        let ep = state.generate_episode(env.as_mut())?;
        state.buffer.push(ep);
    }
    let batch = state.sample_batch()?;
    Ok((state, env, batch))
}
