use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::config::{Algo, NqmixConfig};
use super::episode::{Episode, ReplayBuffer};
use super::rollout::{rollout, ActMode};
use crate::agents::{AgentNetworks, NetworkShape, PolicyHead, SharedCritic};
use crate::envs::{DecPomdpDescriptor, Env};
use crate::error::{Error, Result};
use crate::mixers::{sgn, Mixer};
use crate::nn::{soft_update, Direction, Graph, Parameterized, RmsProp, Tensor, Var};

/// Agent networks plus the mixer that combines their values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub agents: AgentNetworks,
    pub mixer: Mixer,
}

impl Parameterized for Networks {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.agents.named_params();
        out.extend(self.mixer.named_params().into_iter().map(|(n, t)| (format!("mixer.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.agents.params_mut();
        out.extend(self.mixer.params_mut());
        out
    }
}

/// Per-timestep values recorded by the evaluate-network critic pass.
#[derive(Clone, Debug)]
pub struct CriticPass {
    pub loss: f64,
    /// Gradients for the critic parameters followed by the mixer parameters.
    pub grads: Vec<Array2<f64>>,
    /// Hidden states after step `t`, `(N·n) × H`.
    pub hidden: Vec<Array2<f64>>,
    /// Discrete action-values after step `t`, `(N·n) × U` (empty for continuous critics).
    pub q_all: Vec<Array2<f64>>,
    /// Values of the executed actions, `N × n`.
    pub chosen: Vec<Array2<f64>>,
}

/// Unapplied actor gradients with the quantities that shaped them.
#[derive(Clone, Debug)]
pub struct ActorGrads {
    /// `per_agent[a]` lines up with `policies[a].params()`.
    pub per_agent: Vec<Vec<Array2<f64>>>,
    /// `sgn(∂Q_tot/∂Q_a)` per timestep, `N × n`.
    pub signs: Vec<Array2<f64>>,
    /// Discount weights `I` per timestep.
    pub discounts: Vec<f64>,
}

/// Everything the training thread mutates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub algo: Algo,
    pub config: NqmixConfig,
    pub seed: u64,
    pub eval: Networks,
    pub target: Networks,
    pub critic_opt: RmsProp,
    pub actor_opts: Vec<RmsProp>,
    pub buffer: ReplayBuffer,
    /// Initialisation and minibatch sampling.
    pub rng: ChaCha8Rng,
    /// Behaviour-policy episode generation.
    pub act_rng: ChaCha8Rng,
    pub env_steps: u64,
    pub episodes: u64,
    pub updates: u64,
}

/// `I_t` for `t = 0..len`, by repeated multiplication with `γ`.
pub fn discounts(gamma: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut i = 1.0;
    for _ in 0..len {
        out.push(i);
        i *= gamma;
    }
    out
}

/// `V′_a = Σ_u π(u) q_u` over the available actions.
pub fn expected_state_value(probs: &[f64], q: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    if probs.len() != q.len() || mask.is_some_and(|m| m.len() != q.len()) {
        return Err(Error::Shape(format!("{} probabilities for {} action-values", probs.len(), q.len())));
    }
    Ok(probs
        .iter()
        .zip(q)
        .enumerate()
        .filter(|(i, _)| mask.map_or(true, |m| m[*i]))
        .map(|(_, (p, v))| p * v)
        .sum())
}

/// `V′_a` with the probabilities taken from `policy` at hidden state `h`.
pub fn policy_state_value(policy: &PolicyHead, h: &[f64], q: &[f64], mask: Option<&[bool]>) -> Result<f64> {
    let probs = crate::agents::policy_probs(policy, h, mask)?;
    expected_state_value(&probs, q, mask)
}

pub fn td_target_discrete(reward: f64, gamma: f64, v_tot: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * v_tot
    }
}

fn bind_constant(g: &mut Graph, rows: &Array2<f64>) -> Var {
    g.constant(rows.clone())
}

fn param_grads(g: &mut Graph, objective: Var, vars: &[Var]) -> Result<Vec<Array2<f64>>> {
    let grads = g.backward(objective)?;
    Ok(vars.iter().map(|v| grads.wrt(*v)).collect())
}

/// `Σ_rows w_r Σ_u ∇_θ π(u|h_r) q_{r,u}` for one policy head.
///
/// The action-values are constants: no gradient reaches the critic.
pub fn all_actions_actor_grad_weighted(
    policy: &PolicyHead,
    h: &Array2<f64>,
    q: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    weights: &Array2<f64>,
) -> Result<Vec<Array2<f64>>> {
    if h.nrows() != q.nrows() || weights.dim() != (h.nrows(), 1) {
        return Err(Error::Shape(format!(
            "actor gradient rows disagree: h {:?}, q {:?}, weights {:?}",
            h.dim(),
            q.dim(),
            weights.dim()
        )));
    }
    if q.ncols() != policy.net.spec.output_width() || mask.is_some_and(|m| m.dim() != q.dim()) {
        return Err(Error::Shape(format!("q {:?} does not match the policy output", q.dim())));
    }
    let mut g = Graph::new();
    let pv = policy.bind(&mut g, true);
    let hv = bind_constant(&mut g, h);
    let p = pv.probs(&mut g, hv, mask)?;
    let qv = bind_constant(&mut g, q);
    let per_row = g.row_dot(p, qv);
    let w = bind_constant(&mut g, weights);
    let weighted = g.mul(per_row, w);
    let total = g.sum(weighted);
    param_grads(&mut g, total, &pv.vars())
}

/// `Σ_u ∇_θ π(u|h) Q_a(h, u)` summed over the rows of `h`.
pub fn all_actions_actor_grad(
    policy: &PolicyHead,
    h: &Array2<f64>,
    q: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<Vec<Array2<f64>>> {
    all_actions_actor_grad_weighted(policy, h, q, mask, &Array2::ones((h.nrows(), 1)))
}

/// `Σ_rows w_r ∇_θ μ(h_r) ∇_u Q(h_r, u)|_{u = μ(h_r)}` with the critic frozen.
pub fn deterministic_actor_grad(
    policy: &PolicyHead,
    critic: &SharedCritic,
    h: &Array2<f64>,
    weights: &Array2<f64>,
) -> Result<Vec<Array2<f64>>> {
    if weights.dim() != (h.nrows(), 1) {
        return Err(Error::Shape(format!("weights {:?} for {} rows", weights.dim(), h.nrows())));
    }
    let mut g = Graph::new();
    let pv = policy.bind(&mut g, true);
    let cv = critic.bind(&mut g, false);
    let hv = bind_constant(&mut g, h);
    let u = pv.action(&mut g, hv)?;
    let q = cv.q_value(&mut g, hv, u)?;
    let w = bind_constant(&mut g, weights);
    let weighted = g.mul(q, w);
    let total = g.sum(weighted);
    param_grads(&mut g, total, &pv.vars())
}

fn mask_rows(mask: &Array2<bool>, rows: &[usize]) -> Array2<bool> {
    Array2::from_shape_fn((rows.len(), mask.ncols()), |(r, j)| mask[[rows[r], j]])
}

impl LearnerState {
    pub fn new(algo: Algo, config: NqmixConfig, desc: &DecPomdpDescriptor, seed: u64) -> Result<Self> {
        config.validate()?;
        desc.validate()?;
        if algo.is_continuous() == desc.is_discrete() {
            return Err(Error::InvalidValue {
                field: "algo".into(),
                reason: format!("{algo} cannot act in this environment's action space"),
            });
        }
        let shape = NetworkShape::from_descriptor(desc, config.hidden_width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut act_rng = ChaCha8Rng::seed_from_u64(seed);
        act_rng.set_stream(1);
        let agents = AgentNetworks::new(shape, algo.has_actor(), &mut rng);
        let mixer = Mixer::new(algo.mixer_kind(), desc.n_agents, desc.state_width, &mut rng);
        let eval = Networks { agents, mixer };
        let actor_opts = if algo.has_actor() {
            (0..desc.n_agents).map(|_| RmsProp::new(config.lr_actor)).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            algo,
            seed,
            target: eval.clone(),
            eval,
            critic_opt: RmsProp::new(config.lr_critic),
            actor_opts,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            rng,
            act_rng,
            env_steps: 0,
            episodes: 0,
            updates: 0,
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.eval.agents.shape
    }

    /// Behaviour action selection for the configured algorithm.
    pub fn behaviour_mode(&self) -> ActMode {
        match self.algo {
            Algo::Nqmix | Algo::NqmixM => ActMode::Sample,
            Algo::NqmixContinuous => ActMode::Explore { epsilon: 0.0, noise: self.config.exploration_noise },
            Algo::Qmix | Algo::Vdn => {
                ActMode::Explore { epsilon: self.config.epsilon_at(self.env_steps), noise: 0.0 }
            }
        }
    }

    /// Plays one episode with the behaviour policy; counters are not advanced.
    pub fn generate_episode(&mut self, env: &mut dyn Env) -> Result<Episode> {
        let mode = self.behaviour_mode();
        rollout(&self.eval.agents, self.algo, env, &mut self.act_rng, mode, self.updates)
    }

    /// Generates one episode, stores it, and trains once the buffer can fill a minibatch.
    pub fn step(&mut self, env: &mut dyn Env) -> Result<()> {
        let episode = self.generate_episode(env)?;
        self.env_steps += episode.len() as u64;
        self.episodes += 1;
        self.buffer.push(episode);
        if self.buffer.len() >= self.config.batch_episodes {
            let batch = self.sample_batch()?;
            self.train_on(&batch)?;
        }
        Ok(())
    }

    pub fn sample_batch(&mut self) -> Result<Batch> {
        let episodes = self.buffer.sample(self.config.batch_episodes, &mut self.rng)?;
        Batch::new(&episodes, self.shape())
    }

    /// One full learner iteration on `batch`: critic descent, sign-modulated
    /// actor ascent (both from the same pre-update networks), soft target update.
    pub fn train_on(&mut self, batch: &Batch) -> Result<f64> {
        let targets = self.targets(batch)?;
        let pass = self.critic_pass(batch, &targets)?;
        let actor = if self.algo.has_actor() { Some(self.actor_grads(batch, &pass)?) } else { None };
        self.apply_critic(&pass.grads)?;
        if let Some(actor) = actor {
            self.apply_actor(&actor)?;
        }
        self.soft_update_targets()?;
        self.updates += 1;
        Ok(pass.loss)
    }

    /// Critic and mixer descent on the mean squared TD error. Policies are untouched.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        let targets = self.targets(batch)?;
        let pass = self.critic_pass(batch, &targets)?;
        self.apply_critic(&pass.grads)?;
        Ok(pass.loss)
    }

    /// Critic update for the value-based baselines, bootstrapping on per-agent greedy target values.
    pub fn qmix_baseline_update(&mut self, batch: &Batch) -> Result<f64> {
        if self.algo.has_actor() {
            return Err(Error::Usage(format!("{} is not a value-based baseline", self.algo)));
        }
        self.critic_update(batch)
    }

    /// Sign-modulated actor ascent for discrete policies. Critic and mixer are untouched.
    pub fn actor_update_discrete(&mut self, batch: &Batch) -> Result<ActorGrads> {
        if self.algo.is_continuous() || !self.algo.has_actor() {
            return Err(Error::Usage(format!("{} has no discrete actor", self.algo)));
        }
        self.actor_update(batch)
    }

    /// Sign-modulated deterministic-policy ascent. Critic and mixer are untouched.
    pub fn actor_update_continuous(&mut self, batch: &Batch) -> Result<ActorGrads> {
        if !self.algo.is_continuous() {
            return Err(Error::Usage(format!("{} has no continuous actor", self.algo)));
        }
        self.actor_update(batch)
    }

    fn actor_update(&mut self, batch: &Batch) -> Result<ActorGrads> {
        let targets = self.targets(batch)?;
        let pass = self.critic_pass(batch, &targets)?;
        let grads = self.actor_grads(batch, &pass)?;
        self.apply_actor(&grads)?;
        Ok(grads)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        soft_update(&mut self.target, &self.eval, self.config.tau_soft)
    }

    fn apply_critic(&mut self, grads: &[Array2<f64>]) -> Result<()> {
        let mut params = self.eval.agents.critic.params_mut();
        params.extend(self.eval.mixer.params_mut());
        self.critic_opt.step_with(&mut params, grads, Direction::Descent)
    }

    fn apply_actor(&mut self, grads: &ActorGrads) -> Result<()> {
        for (a, g) in grads.per_agent.iter().enumerate() {
            let mut params = self.eval.agents.policies[a].params_mut();
            self.actor_opts[a].step_with(&mut params, g, Direction::Ascent)?;
        }
        Ok(())
    }

    /// TD targets `y_t` (`N × 1` per step); padded rows carry zeros.
    pub fn targets(&self, batch: &Batch) -> Result<Vec<Array2<f64>>> {
        let gamma = self.config.gamma;
        let last = (0..batch.max_len).filter(|t| batch.needs_bootstrap(*t)).max();
        let mut ys: Vec<Array2<f64>> = batch.rewards.iter().zip(&batch.valid).map(|(r, v)| r * v).collect();
        let Some(last) = last else {
            return Ok(ys);
        };

        let n = batch.n_agents;
        let rows_total = batch.n_episodes * n;
        let target = &self.target;
        let mut g = Graph::new();
        let cv = target.agents.critic.bind(&mut g, false);
        let mut h = g.constant(Array2::zeros((rows_total, target.agents.shape.hidden_width)));
        let mut hidden = Vec::with_capacity(last + 2);
        for t in 0..=last + 1 {
            let x = g.constant(batch.inputs[t].clone());
            h = cv.encode(&mut g, x, h)?;
            hidden.push(h);
        }

        for t in 0..=last {
            if !batch.needs_bootstrap(t) {
                continue;
            }
            let hn = hidden[t + 1];
            let hn_val = g.value(hn).clone();
            let mut v = Array2::<f64>::zeros((batch.n_episodes, n));
            match self.algo {
                Algo::Nqmix | Algo::NqmixM => {
                    let q = cv.q_values(&mut g, hn)?;
                    let q = g.value(q).clone();
                    for a in 0..n {
                        let rows = batch.agent_rows(a);
                        let pv = target.agents.policies[a].bind(&mut g, false);
                        let ha = g.constant(hn_val.select(Axis(0), &rows));
                        let m = mask_rows(&batch.masks[t + 1], &rows);
                        let p = pv.probs(&mut g, ha, Some(&m))?;
                        let p = g.value(p);
                        for (e, r) in rows.iter().enumerate() {
                            v[[e, a]] = p.row(e).dot(&q.row(*r));
                        }
                    }
                }
                Algo::Qmix | Algo::Vdn => {
                    let q = cv.q_values(&mut g, hn)?;
                    let q = g.value(q);
                    let mask = &batch.masks[t + 1];
                    for e in 0..batch.n_episodes {
                        for a in 0..n {
                            let r = e * n + a;
                            v[[e, a]] = q
                                .row(r)
                                .iter()
                                .zip(mask.row(r))
                                .filter(|(_, m)| **m)
                                .map(|(x, _)| *x)
                                .fold(f64::NEG_INFINITY, f64::max);
                        }
                    }
                }
                Algo::NqmixContinuous => {
                    for a in 0..n {
                        let rows = batch.agent_rows(a);
                        let pv = target.agents.policies[a].bind(&mut g, false);
                        let ha = g.constant(hn_val.select(Axis(0), &rows));
                        let u = pv.action(&mut g, ha)?;
                        let q = cv.q_value(&mut g, ha, u)?;
                        let q = g.value(q);
                        for e in 0..batch.n_episodes {
                            v[[e, a]] = q[[e, 0]];
                        }
                    }
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("target state values".into()));
            }
            let v_tot = target.mixer.mix_batch(&v, &batch.states[t + 1])?;
            for e in 0..batch.n_episodes {
                let keep = batch.valid[t][[e, 0]] * batch.not_done[t][[e, 0]];
                ys[t][[e, 0]] += gamma * keep * v_tot[[e, 0]];
            }
        }
        g.check_finite()?;
        Ok(ys)
    }

    /// Evaluate-network forward pass over the batch with the gradient of the
    /// mean squared TD error. Nothing is mutated.
    pub fn critic_pass(&self, batch: &Batch, targets: &[Array2<f64>]) -> Result<CriticPass> {
        if targets.len() != batch.max_len {
            return Err(Error::Shape(format!("{} targets for {} steps", targets.len(), batch.max_len)));
        }
        let n = batch.n_agents;
        let rows_total = batch.n_episodes * n;
        let continuous = self.algo.is_continuous();
        let mut g = Graph::new();
        let cv = self.eval.agents.critic.bind(&mut g, true);
        let mv = self.eval.mixer.bind(&mut g, true);
        let mut h = g.constant(Array2::zeros((rows_total, self.shape().hidden_width)));
        let mut hidden = Vec::with_capacity(batch.max_len);
        let mut q_all = Vec::with_capacity(batch.max_len);
        let mut chosen = Vec::with_capacity(batch.max_len);
        let mut total: Option<Var> = None;
        for t in 0..batch.max_len {
            let x = g.constant(batch.inputs[t].clone());
            h = cv.encode(&mut g, x, h)?;
            hidden.push(g.value(h).clone());
            let u = g.constant(batch.actions[t].clone());
            let qa = if continuous {
                cv.q_value(&mut g, h, u)?
            } else {
                let q = cv.q_values(&mut g, h)?;
                q_all.push(g.value(q).clone());
                g.row_dot(q, u)
            };
            let qa = g.reshape(qa, batch.n_episodes, n);
            chosen.push(g.value(qa).clone());
            let q_tot = mv.forward(&mut g, qa, &batch.states[t])?;
            let y = g.constant(targets[t].clone());
            let diff = g.sub(q_tot, y);
            let valid = g.constant(batch.valid[t].clone());
            let diff = g.mul(diff, valid);
            let sq = g.square(diff);
            let s = g.sum(sq);
            total = Some(match total {
                Some(acc) => g.add(acc, s),
                None => s,
            });
        }
        let total = total.ok_or_else(|| Error::Usage("empty batch".into()))?;
        let loss = g.scale(total, 1.0 / batch.valid_count as f64);
        let mut vars = cv.vars();
        vars.extend(mv.vars());
        let grads = param_grads(&mut g, loss, &vars)?;
        Ok(CriticPass { loss: g.scalar(loss), grads, hidden, q_all, chosen })
    }

    /// Per-agent actor gradients from a critic pass of the current evaluate networks.
    pub fn actor_grads(&self, batch: &Batch, pass: &CriticPass) -> Result<ActorGrads> {
        let n = batch.n_agents;
        let gamma_t = discounts(self.config.gamma, batch.max_len);
        let mut signs = Vec::with_capacity(batch.max_len);
        for t in 0..batch.max_len {
            let d = self.eval.mixer.grad_wrt_agent_q(&pass.chosen[t], &batch.states[t])?;
            signs.push(d.mapv(sgn));
        }
        let scale = 1.0 / batch.valid_count as f64;
        let hw = self.shape().hidden_width;
        let aw = self.shape().action_width;
        let mut per_agent = Vec::with_capacity(n);
        for a in 0..n {
            let mut h_rows = Vec::new();
            let mut q_rows = Vec::new();
            let mut m_rows = Vec::new();
            let mut w = Vec::new();
            for t in 0..batch.max_len {
                for e in 0..batch.n_episodes {
                    if batch.valid[t][[e, 0]] == 0.0 {
                        continue;
                    }
                    let r = e * n + a;
                    h_rows.extend(pass.hidden[t].row(r).iter().copied());
                    if !self.algo.is_continuous() {
                        q_rows.extend(pass.q_all[t].row(r).iter().copied());
                        m_rows.extend(batch.masks[t].row(r).iter().copied());
                    }
                    w.push(signs[t][[e, a]] * gamma_t[t] * scale);
                }
            }
            let count = w.len();
            let to_err = |e: ndarray::ShapeError| Error::Shape(e.to_string());
            let h = Array2::from_shape_vec((count, hw), h_rows).map_err(to_err)?;
            let w = Array2::from_shape_vec((count, 1), w).map_err(to_err)?;
            let policy = &self.eval.agents.policies[a];
            let grads = if self.algo.is_continuous() {
                deterministic_actor_grad(policy, &self.eval.agents.critic, &h, &w)?
            } else {
                let q = Array2::from_shape_vec((count, aw), q_rows).map_err(to_err)?;
                let m = Array2::from_shape_vec((count, aw), m_rows).map_err(to_err)?;
                all_actions_actor_grad_weighted(policy, &h, &q, Some(&m), &w)?
            };
            per_agent.push(grads);
        }
        Ok(ActorGrads { per_agent, signs, discounts: gamma_t })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let state: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        state.config.validate()?;
        Ok(state)
    }
}
