use ndarray::Array2;

use super::episode::Episode;
use crate::agents::NetworkShape;
use crate::error::{Error, Result};

/// A minibatch of episodes laid out per timestep.
///
/// Agent rows are interleaved: row `e · n + a` holds agent `a` of episode `e`.
/// Episodes shorter than the longest one are zero-padded and masked out
/// through `valid`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub n_episodes: usize,
    pub n_agents: usize,
    pub max_len: usize,
    /// `T + 1` trunk inputs, each `(N·n) × input_width`.
    pub inputs: Vec<Array2<f64>>,
    /// `T + 1` global states, each `N × S`.
    pub states: Vec<Array2<f64>>,
    /// `T + 1` availability masks, each `(N·n) × U`.
    pub masks: Vec<Array2<bool>>,
    /// `T` executed actions, each `(N·n) × action_width`.
    pub actions: Vec<Array2<f64>>,
    /// `T` rewards, `N × 1`.
    pub rewards: Vec<Array2<f64>>,
    /// `T` columns of `1 − terminal`.
    pub not_done: Vec<Array2<f64>>,
    /// `T` columns marking real (non-padded) transitions.
    pub valid: Vec<Array2<f64>>,
    pub valid_count: usize,
}

impl Batch {
    pub fn new(episodes: &[Episode], shape: &NetworkShape) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        for e in episodes {
            e.validate()?;
        }
        let (n_ep, n) = (episodes.len(), shape.n_agents);
        let max_len = episodes.iter().map(Episode::len).max().expect("non-empty");
        let aw = shape.action_width;
        let state_width = episodes[0].states[0].len();
        let rows = n_ep * n;

        let mut batch = Batch {
            n_episodes: n_ep,
            n_agents: n,
            max_len,
            inputs: Vec::with_capacity(max_len + 1),
            states: Vec::with_capacity(max_len + 1),
            masks: Vec::with_capacity(max_len + 1),
            actions: Vec::with_capacity(max_len),
            rewards: Vec::with_capacity(max_len),
            not_done: Vec::with_capacity(max_len),
            valid: Vec::with_capacity(max_len),
            valid_count: 0,
        };

        for t in 0..=max_len {
            let mut input = Array2::zeros((rows, shape.input_width()));
            let mut state = Array2::zeros((n_ep, state_width));
            let mut mask = Array2::from_elem((rows, aw), true);
            for (e, ep) in episodes.iter().enumerate() {
                if t > ep.len() {
                    continue;
                }
                for (j, v) in ep.states[t].iter().enumerate() {
                    state[[e, j]] = *v;
                }
                for a in 0..n {
                    let r = e * n + a;
                    let mut row = ep.observations[t][a].clone();
                    row.extend(ep.prev_action_input(t, a, aw));
                    row.extend((0..n).map(|k| if k == a { 1.0 } else { 0.0 }));
                    if row.len() != shape.input_width() {
                        return Err(Error::Shape(format!(
                            "episode input width {} does not match network input width {}",
                            row.len(),
                            shape.input_width()
                        )));
                    }
                    for (j, v) in row.into_iter().enumerate() {
                        input[[r, j]] = v;
                    }
                    if shape.bounds.is_none() {
                        for (j, m) in ep.masks[t][a].iter().enumerate() {
                            mask[[r, j]] = *m;
                        }
                    }
                }
            }
            batch.inputs.push(input);
            batch.states.push(state);
            batch.masks.push(mask);

            if t == max_len {
                break;
            }
            let mut actions = Array2::zeros((rows, aw));
            let mut rewards = Array2::zeros((n_ep, 1));
            let mut not_done = Array2::zeros((n_ep, 1));
            let mut valid = Array2::zeros((n_ep, 1));
            for (e, ep) in episodes.iter().enumerate() {
                if t >= ep.len() {
                    continue;
                }
                rewards[[e, 0]] = ep.rewards[t];
                not_done[[e, 0]] = if ep.terminals[t] { 0.0 } else { 1.0 };
                valid[[e, 0]] = 1.0;
                batch.valid_count += 1;
                for a in 0..n {
                    for (j, v) in ep.action_encoding(t, a, aw).into_iter().enumerate() {
                        actions[[e * n + a, j]] = v;
                    }
                }
            }
            batch.actions.push(actions);
            batch.rewards.push(rewards);
            batch.not_done.push(not_done);
            batch.valid.push(valid);
        }
        Ok(batch)
    }

    /// Row indices belonging to agent `a`.
    pub fn agent_rows(&self, a: usize) -> Vec<usize> {
        (0..self.n_episodes).map(|e| e * self.n_agents + a).collect()
    }

    /// Whether any transition at step `t` needs a bootstrap value.
    pub fn needs_bootstrap(&self, t: usize) -> bool {
        self.not_done[t].iter().zip(self.valid[t].iter()).any(|(d, v)| *d > 0.0 && *v > 0.0)
    }
}
