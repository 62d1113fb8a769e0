//! Cooperative Dec-POMDP environments.
//!
//! All games are deterministic given the joint action and reward the team with
//! a single global scalar. Observations are per-agent and partial; the global
//! state is only shown to the mixer during training.

mod matrix;
mod product;
mod two_step;

pub use matrix::{MatrixGame, MatrixGameSpec};
pub use product::ProductGame;
pub use two_step::TwoStepGame;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-agent action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Number of discrete actions, or the action dimension for boxes.
    pub fn width(&self) -> usize {
        match self {
            ActionSpace::Discrete(n) => *n,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

/// Static description of an environment: agents, spaces, widths and horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecPomdpDescriptor {
    pub n_agents: usize,
    pub state_width: usize,
    pub action_spaces: Vec<ActionSpace>,
    pub obs_width: usize,
    pub horizon: usize,
}

impl DecPomdpDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::Shape(format!("need at least 2 agents, got {}", self.n_agents)));
        }
        if self.horizon < 1 {
            return Err(Error::Shape("horizon must be at least 1".into()));
        }
        if self.action_spaces.len() != self.n_agents {
            return Err(Error::Shape("one action space per agent required".into()));
        }
        for space in &self.action_spaces {
            match space {
                ActionSpace::Discrete(0) => return Err(Error::Shape("empty discrete action space".into())),
                ActionSpace::Continuous { low, high } => {
                    if low.is_empty() || low.len() != high.len() || low.iter().zip(high).any(|(l, h)| !(l < h)) {
                        return Err(Error::Shape("continuous bounds need low < high per dimension".into()));
                    }
                }
                ActionSpace::Discrete(_) => {}
            }
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        self.action_spaces.iter().all(ActionSpace::is_discrete)
    }

    /// Action count of agent 0 for discrete environments (all toy games are homogeneous).
    pub fn n_actions(&self) -> usize {
        self.action_spaces[0].width()
    }
}

/// One joint action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum JointAction {
    Discrete(Vec<usize>),
    Continuous(Vec<Vec<f64>>),
}

/// What the environment returns after a reset or a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observations: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub trait Env: Send {
    fn descriptor(&self) -> &DecPomdpDescriptor;

    /// Restarts the episode. The seed feeds the environment's internal RNG;
    /// the toy games are deterministic so it only matters for determinism checks.
    fn reset(&mut self, seed: u64) -> StepResult;

    fn step(&mut self, action: &JointAction) -> Result<StepResult>;

    /// Per-agent availability masks at the current step.
    fn available_actions(&self) -> Vec<Vec<bool>> {
        self.descriptor().action_spaces.iter().map(|s| vec![true; s.width()]).collect()
    }

    fn boxed_clone(&self) -> Box<dyn Env>;

    /// Analytic optimum for continuous games that declare one.
    fn analytic_optimum(&self) -> Option<f64> {
        None
    }

    fn name(&self) -> &str;
}

/// Largest number of joint-action paths [`brute_force_optimum`] will enumerate.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Exact maximum undiscounted episode return.
///
/// Discrete games are solved by exhaustive enumeration of joint-action
/// sequences; continuous games must declare an analytic optimum.
pub fn brute_force_optimum(env: &dyn Env) -> Result<f64> {
    let desc = env.descriptor();
    if !desc.is_discrete() {
        return env
            .analytic_optimum()
            .ok_or_else(|| Error::Usage(format!("{} has no declared analytic optimum", env.name())));
    }
    let joint: u128 = desc.action_spaces.iter().map(|s| s.width() as u128).product();
    let needed = (0..desc.horizon).try_fold(1u128, |acc, _| acc.checked_mul(joint)).unwrap_or(u128::MAX);
    if needed > ENUMERATION_BUDGET {
        return Err(Error::Budget { needed, budget: ENUMERATION_BUDGET });
    }
    let mut root = env.boxed_clone();
    root.reset(0);
    let widths: Vec<usize> = desc.action_spaces.iter().map(ActionSpace::width).collect();
    search(root.as_ref(), &widths)
}

fn search(env: &dyn Env, widths: &[usize]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for joint in joint_actions(widths) {
        let mut child = env.boxed_clone();
        let res = child.step(&JointAction::Discrete(joint))?;
        let value = if res.terminal { res.reward } else { res.reward + search(child.as_ref(), widths)? };
        best = best.max(value);
    }
    Ok(best)
}

/// All joint actions in lexicographic order (agent 0 most significant).
pub fn joint_actions(widths: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = widths.iter().product();
    (0..total).map(move |mut idx| {
        let mut out = vec![0; widths.len()];
        for (slot, w) in out.iter_mut().zip(widths).rev() {
            *slot = idx % w;
            idx /= w;
        }
        out
    })
}

/// Builds an environment by name.
///
/// `payoff_file` replaces the default matrix game's table when given.
pub fn make_env(name: &str, payoff_file: Option<&std::path::Path>) -> Result<Box<dyn Env>> {
    match name {
        "matrix" => Ok(Box::new(match payoff_file {
            Some(p) => MatrixGame::new(MatrixGameSpec::load(p)?)?,
            None => MatrixGame::default_game(),
        })),
        "two_step" => Ok(Box::new(TwoStepGame::new())),
        "product" => Ok(Box::new(ProductGame::new())),
        other => Err(Error::InvalidValue {
            field: "env".into(),
            reason: format!("unknown environment `{other}` (expected matrix, two_step or product)"),
        }),
    }
}

pub(crate) fn one_hot(width: usize, index: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; width];
    if let Some(i) = index {
        v[i] = 1.0;
    }
    v
}

pub(crate) fn check_discrete_action(action: &JointAction, n_agents: usize, n_actions: usize) -> Result<Vec<usize>> {
    match action {
        JointAction::Discrete(a) if a.len() == n_agents => {
            if let Some(bad) = a.iter().find(|x| **x >= n_actions) {
                return Err(Error::Usage(format!("action {bad} out of range 0..{n_actions}")));
            }
            Ok(a.clone())
        }
        JointAction::Discrete(a) => Err(Error::Usage(format!("expected {n_agents} actions, got {}", a.len()))),
        JointAction::Continuous(_) => Err(Error::Usage("continuous action sent to a discrete game".into())),
    }
}
