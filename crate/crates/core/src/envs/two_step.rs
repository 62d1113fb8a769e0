use super::{check_discrete_action, one_hot, ActionSpace, DecPomdpDescriptor, Env, JointAction, MatrixGameSpec, StepResult};
use crate::error::{Error, Result};

const N_ACTIONS: usize = 3;

/// Two-phase game. In phase 0 agent 0 picks a branch (action 0 → A, else B)
/// and nobody is rewarded. In phase 1 both agents play the branch's matrix:
/// A pays 7 everywhere, B is the non-monotonic default table.
///
/// Observation: `[phase ≥ 1 flag, own previous action one-hot]`, so agent 1
/// never sees which branch agent 0 chose. State: step one-hot over `{0,1,2}`
/// followed by the branch one-hot (zeros before the choice).
#[derive(Clone, Debug)]
pub struct TwoStepGame {
    desc: DecPomdpDescriptor,
    branch_b: MatrixGameSpec,
    phase: usize,
    branch: Option<usize>,
}

impl Default for TwoStepGame {
    fn default() -> Self {
        Self::new()
    }
}

impl TwoStepGame {
    pub fn new() -> Self {
        Self {
            desc: DecPomdpDescriptor {
                n_agents: 2,
                state_width: 5,
                action_spaces: vec![ActionSpace::Discrete(N_ACTIONS); 2],
                obs_width: 1 + N_ACTIONS,
                horizon: 2,
            },
            branch_b: MatrixGameSpec::non_monotonic(),
            phase: 0,
            branch: None,
        }
    }

    fn observe(&self, prev: Option<&[usize]>) -> Vec<Vec<f64>> {
        (0..2)
            .map(|a| {
                let mut o = vec![if self.phase >= 1 { 1.0 } else { 0.0 }];
                o.extend(one_hot(N_ACTIONS, prev.map(|p| p[a])));
                o
            })
            .collect()
    }

    fn state(&self) -> Vec<f64> {
        let mut s = one_hot(3, Some(self.phase));
        s.extend(one_hot(2, self.branch));
        s
    }
}

impl Env for TwoStepGame {
    fn descriptor(&self) -> &DecPomdpDescriptor {
        &self.desc
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.phase = 0;
        self.branch = None;
        StepResult { observations: self.observe(None), state: self.state(), reward: 0.0, terminal: false }
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.phase >= 2 {
            return Err(Error::Usage("step after terminal".into()));
        }
        let a = check_discrete_action(action, 2, N_ACTIONS)?;
        let reward = if self.phase == 0 {
            self.branch = Some(if a[0] == 0 { 0 } else { 1 });
            0.0
        } else if self.branch == Some(0) {
            7.0
        } else {
            self.branch_b.payoff(a[0], a[1])
        };
        self.phase += 1;
        Ok(StepResult {
            observations: self.observe(Some(&a)),
            state: self.state(),
            reward,
            terminal: self.phase == 2,
        })
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }

    fn name(&self) -> &str {
        "two_step"
    }
}
