use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::JointAction;
use crate::error::{Error, Result};

/// One recorded episode of length `T`.
///
/// Observations, states and masks carry `T + 1` entries: the last one is the
/// post-terminal step used for bootstrapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// `[t][agent][feature]`
    pub observations: Vec<Vec<Vec<f64>>>,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<JointAction>,
    pub rewards: Vec<f64>,
    pub terminals: Vec<bool>,
    /// `[t][agent][action]`
    pub masks: Vec<Vec<Vec<bool>>>,
    /// Learner update count when the episode was generated.
    pub policy_version: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        let consistent = self.observations.len() == t + 1
            && self.states.len() == t + 1
            && self.masks.len() == t + 1
            && self.rewards.len() == t
            && self.terminals.len() == t;
        if !consistent {
            return Err(Error::Shape("episode field lengths disagree".into()));
        }
        let terminal_count = self.terminals.iter().filter(|x| **x).count();
        if t == 0 || terminal_count != 1 || !self.terminals[t - 1] {
            return Err(Error::Shape("episode must end with exactly one terminal step".into()));
        }
        Ok(())
    }

    /// Encoding of agent `agent`'s action at step `t`: one-hot of width
    /// `width` for discrete actions, the raw vector for continuous ones.
    pub fn action_encoding(&self, t: usize, agent: usize, width: usize) -> Vec<f64> {
        match &self.actions[t] {
            JointAction::Discrete(a) => {
                let mut v = vec![0.0; width];
                v[a[agent]] = 1.0;
                v
            }
            JointAction::Continuous(a) => a[agent].clone(),
        }
    }

    /// Previous-action input at step `t` (zeros at `t = 0`).
    pub fn prev_action_input(&self, t: usize, agent: usize, width: usize) -> Vec<f64> {
        if t == 0 {
            vec![0.0; width]
        } else {
            self.action_encoding(t - 1, agent, width)
        }
    }
}

/// Ring buffer of the most recent episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, episodes: VecDeque::with_capacity(capacity.min(4096)) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Uniformly samples `n` distinct episodes.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Episode>> {
        if n > self.episodes.len() {
            return Err(Error::Usage(format!("cannot sample {n} episodes from {}", self.episodes.len())));
        }
        Ok(rand::seq::index::sample(rng, self.episodes.len(), n)
            .into_iter()
            .map(|i| self.episodes[i].clone())
            .collect())
    }
}
