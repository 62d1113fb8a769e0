use super::{one_hot, ActionSpace, DecPomdpDescriptor, Env, JointAction, StepResult};
use crate::error::{Error, Result};

/// One-step continuous game with reward `u⁰ · u¹`, `uᵃ ∈ [−1, 1]`.
///
/// Both `(1, 1)` and `(−1, −1)` are optimal, so each agent's best response
/// depends on the sign of the other's action. Observation: own previous
/// action (zero at reset). State: step one-hot over `{0, 1}`.
#[derive(Clone, Debug)]
pub struct ProductGame {
    desc: DecPomdpDescriptor,
    done: bool,
}

impl Default for ProductGame {
    fn default() -> Self {
        Self::new()
    }
}

impl ProductGame {
    pub fn new() -> Self {
        Self {
            desc: DecPomdpDescriptor {
                n_agents: 2,
                state_width: 2,
                action_spaces: vec![ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] }; 2],
                obs_width: 1,
                horizon: 1,
            },
            done: false,
        }
    }
}

impl Env for ProductGame {
    fn descriptor(&self) -> &DecPomdpDescriptor {
        &self.desc
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.done = false;
        StepResult { observations: vec![vec![0.0]; 2], state: one_hot(2, Some(0)), reward: 0.0, terminal: false }
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step after terminal".into()));
        }
        let JointAction::Continuous(u) = action else {
            return Err(Error::Usage("discrete action sent to a continuous game".into()));
        };
        if u.len() != 2 || u.iter().any(|a| a.len() != 1) {
            return Err(Error::Usage("expected one scalar action per agent".into()));
        }
        if let Some(bad) = u.iter().flatten().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(Error::Usage(format!("action {bad} outside [-1, 1]")));
        }
        self.done = true;
        Ok(StepResult {
            observations: u.clone(),
            state: one_hot(2, Some(1)),
            reward: u[0][0] * u[1][0],
            terminal: true,
        })
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }

    fn analytic_optimum(&self) -> Option<f64> {
        Some(1.0)
    }

    fn name(&self) -> &str {
        "product"
    }
}
