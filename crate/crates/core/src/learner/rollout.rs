use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::Algo;
use super::episode::Episode;
use crate::agents::AgentNetworks;
use crate::envs::{Env, JointAction};
use crate::error::{Error, Result};
use crate::mixers::argmax;
use crate::nn::Graph;

/// How actions are chosen while rolling out an episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActMode {
    /// Behaviour policy: sampled from π for discrete actors, ε-greedy for the
    /// value-based baselines, μ plus Gaussian noise for continuous actors.
    Explore { epsilon: f64, noise: f64 },
    /// Argmax probability / argmax Q / noise-free μ.
    Greedy,
    /// Sampled from π without ε or noise.
    Sample,
}

fn masked_argmax(values: &[f64], mask: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if mask[i] && best.map_or(true, |b| *v > values[b]) {
            best = Some(i);
        }
    }
    best.expect("mask validated non-empty")
}

fn uniform_available<R: Rng + ?Sized>(mask: &[bool], rng: &mut R) -> usize {
    let avail: Vec<usize> = (0..mask.len()).filter(|i| mask[*i]).collect();
    avail[rng.random_range(0..avail.len())]
}

/// Plays one episode with the given networks.
///
/// Hidden states are threaded through the shared trunk; the trunk sees each
/// agent's observation, previous action and id.
pub fn rollout<R: Rng + ?Sized>(
    nets: &AgentNetworks,
    algo: Algo,
    env: &mut dyn Env,
    rng: &mut R,
    mode: ActMode,
    policy_version: u64,
) -> Result<Episode> {
    let desc = env.descriptor().clone();
    let n = desc.n_agents;
    let shape = &nets.shape;
    if shape.n_agents != n || shape.obs_width != desc.obs_width {
        return Err(Error::Shape("networks were built for a different environment".into()));
    }
    if algo.has_actor() && nets.policies.len() != n {
        return Err(Error::Shape("actor algorithm without policy heads".into()));
    }
    let aw = shape.action_width;
    let hw = shape.hidden_width;

    let seed: u64 = rng.random();
    let mut res = env.reset(seed);
    let mut ep = Episode {
        observations: vec![res.observations.clone()],
        states: vec![res.state.clone()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminals: Vec::new(),
        masks: vec![env.available_actions()],
        policy_version,
    };
    let mut hidden = Array2::<f64>::zeros((n, hw));
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; aw]; n];

    for _ in 0..desc.horizon {
        let mut input = Array2::zeros((n, shape.input_width()));
        for a in 0..n {
            let row = nets.input(&res.observations[a], &prev[a], a).to_vec();
            for (j, v) in row.into_iter().enumerate() {
                input[[a, j]] = v;
            }
        }
        let mut g = Graph::new();
        let cv = nets.critic.bind(&mut g, false);
        let x = g.constant(input);
        let h0 = g.constant(hidden.clone());
        let h = cv.encode(&mut g, x, h0)?;
        hidden = g.value(h).clone();
        let masks = ep.masks.last().expect("mask per step").clone();

        let action = if algo.is_continuous() {
            let mut acts = Vec::with_capacity(n);
            let (low, high) = shape.bounds.clone().expect("continuous shape has bounds");
            for a in 0..n {
                let pv = nets.policies[a].bind(&mut g, false);
                let ha = g.constant(hidden.row(a).to_owned().insert_axis(ndarray::Axis(0)));
                let mu = pv.action(&mut g, ha)?;
                let mut u: Vec<f64> = g.value(mu).iter().copied().collect();
                if let ActMode::Explore { noise, .. } = mode {
                    for (j, uj) in u.iter_mut().enumerate() {
                        let sigma = noise * (high[j] - low[j]);
                        if sigma > 0.0 {
                            let d = Normal::new(0.0, sigma).expect("positive sigma");
                            *uj += d.sample(rng);
                        }
                        *uj = uj.clamp(low[j], high[j]);
                    }
                }
                acts.push(u);
            }
            JointAction::Continuous(acts)
        } else if algo.has_actor() {
            let mut acts = Vec::with_capacity(n);
            for a in 0..n {
                let pv = nets.policies[a].bind(&mut g, false);
                let ha = g.constant(hidden.row(a).to_owned().insert_axis(ndarray::Axis(0)));
                let m = Array2::from_shape_vec((1, aw), masks[a].clone()).map_err(|e| Error::Shape(e.to_string()))?;
                let p = pv.probs(&mut g, ha, Some(&m))?;
                let probs: Vec<f64> = g.value(p).iter().copied().collect();
                acts.push(match mode {
                    ActMode::Greedy => masked_argmax(&probs, &masks[a]),
                    ActMode::Explore { .. } | ActMode::Sample => crate::agents::sample_action(&probs, rng),
                });
            }
            JointAction::Discrete(acts)
        } else {
            let q = cv.q_values(&mut g, h)?;
            let qv = g.value(q).clone();
            let mut acts = Vec::with_capacity(n);
            for a in 0..n {
                let row: Vec<f64> = qv.row(a).to_vec();
                let greedy = masked_argmax(&row, &masks[a]);
                acts.push(match mode {
                    ActMode::Explore { epsilon, .. } if rng.random::<f64>() < epsilon => {
                        uniform_available(&masks[a], rng)
                    }
                    _ => greedy,
                });
            }
            JointAction::Discrete(acts)
        };
        g.check_finite()?;

        res = env.step(&action)?;
        for (a, p) in prev.iter_mut().enumerate() {
            *p = match &action {
                JointAction::Discrete(u) => {
                    let mut v = vec![0.0; aw];
                    v[u[a]] = 1.0;
                    v
                }
                JointAction::Continuous(u) => u[a].clone(),
            };
        }
        ep.actions.push(action);
        ep.rewards.push(res.reward);
        ep.observations.push(res.observations.clone());
        ep.states.push(res.state.clone());
        ep.masks.push(env.available_actions());
        let last = ep.actions.len() == desc.horizon;
        ep.terminals.push(res.terminal || last);
        if res.terminal {
            break;
        }
    }
    Ok(ep)
}

/// Greedy joint action from per-agent values, for diagnostics.
pub fn greedy_joint(q_tables: &[Vec<f64>]) -> Vec<usize> {
    q_tables.iter().map(|q| argmax(q)).collect()
}
