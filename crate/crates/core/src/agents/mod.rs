//! Agent networks: one recurrent critic trunk shared by every agent, and one
//! policy head per agent that is never shared.
//!
//! The trunk reads `[o_t, u_{t-1}, one_hot(agent)]`, applies FC → ReLU → GRU
//! and produces either `|U|` action-values (discrete) or, for continuous
//! actions, a scalar `Q(h, u)` from a small MLP over `[h, u]`.

mod checkpoint;

pub use checkpoint::{load_params, save_params, ParamCheckpoint};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionSpace, DecPomdpDescriptor};
use crate::error::{shape_err, Error, Result};
use crate::nn::{
    softmax, softmax_values, Activation, Graph, Gru, GruSpec, GruVars, Linear, LinearVars, Mlp, MlpSpec, MlpVars,
    Parameterized, Tensor, Var,
};

/// Network input for one agent at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentInput {
    pub observation: Vec<f64>,
    /// One-hot for discrete actions, raw vector for continuous; zeros at `t = 0`.
    pub prev_action: Vec<f64>,
    pub agent_id: Vec<f64>,
}

impl AgentInput {
    pub fn new(observation: Vec<f64>, prev_action: Vec<f64>, agent: usize, n_agents: usize) -> Self {
        let mut agent_id = vec![0.0; n_agents];
        agent_id[agent] = 1.0;
        Self { observation, prev_action, agent_id }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.observation.clone();
        v.extend_from_slice(&self.prev_action);
        v.extend_from_slice(&self.agent_id);
        v
    }

    pub fn width(&self) -> usize {
        self.observation.len() + self.prev_action.len() + self.agent_id.len()
    }
}

/// Widths every agent network is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub n_agents: usize,
    pub obs_width: usize,
    /// Discrete action count or continuous action dimension.
    pub action_width: usize,
    pub hidden_width: usize,
    /// Per-dimension bounds for continuous actions.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl NetworkShape {
    pub fn from_descriptor(desc: &DecPomdpDescriptor, hidden_width: usize) -> Result<Self> {
        desc.validate()?;
        let first = &desc.action_spaces[0];
        if desc.action_spaces.iter().any(|s| s != first) {
            return Err(shape_err("agents with different action spaces are not supported"));
        }
        let bounds = match first {
            ActionSpace::Discrete(_) => None,
            ActionSpace::Continuous { low, high } => Some((low.clone(), high.clone())),
        };
        Ok(Self {
            n_agents: desc.n_agents,
            obs_width: desc.obs_width,
            action_width: first.width(),
            hidden_width,
            bounds,
        })
    }

    pub fn is_continuous(&self) -> bool {
        self.bounds.is_some()
    }

    pub fn input_width(&self) -> usize {
        self.obs_width + self.action_width + self.n_agents
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CriticHead {
    /// `h → |U|` action-values.
    Discrete(Linear),
    /// `[h, u] → 64 (ReLU) → 1`.
    Continuous(Mlp),
}

/// The recurrent critic trunk shared by all agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedCritic {
    pub fc_in: Linear,
    pub gru: Gru,
    pub head: CriticHead,
}

pub enum HeadVars {
    Discrete(LinearVars),
    Continuous(MlpVars),
}

pub struct CriticVars {
    pub fc_in: LinearVars,
    pub gru: GruVars,
    pub head: HeadVars,
}

impl SharedCritic {
    pub fn new<R: Rng + ?Sized>(shape: &NetworkShape, rng: &mut R) -> Self {
        let h = shape.hidden_width;
        let gru = Gru::new(GruSpec { input_width: h, hidden_width: h }, rng);
        let head = if shape.is_continuous() {
            let spec = MlpSpec::new(vec![h + shape.action_width, 64, 1], vec![Activation::Relu, Activation::Identity])
                .expect("positive widths");
            CriticHead::Continuous(Mlp::new(spec, rng))
        } else {
            CriticHead::Discrete(Linear::new(h, shape.action_width, rng))
        };
        Self { fc_in: Linear::new(shape.input_width(), h, rng), gru, head }
    }

    pub fn zeros(shape: &NetworkShape) -> Self {
        let h = shape.hidden_width;
        let head = if shape.is_continuous() {
            let spec = MlpSpec::new(vec![h + shape.action_width, 64, 1], vec![Activation::Relu, Activation::Identity])
                .expect("positive widths");
            CriticHead::Continuous(Mlp::zeros(spec))
        } else {
            CriticHead::Discrete(Linear::zeros(h, shape.action_width))
        };
        Self {
            fc_in: Linear::zeros(shape.input_width(), h),
            gru: Gru::zeros(GruSpec { input_width: h, hidden_width: h }),
            head,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.gru.spec.hidden_width
    }

    pub fn input_width(&self) -> usize {
        self.fc_in.input_width()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> CriticVars {
        CriticVars {
            fc_in: self.fc_in.bind(g, trainable),
            gru: self.gru.bind(g, trainable),
            head: match &self.head {
                CriticHead::Discrete(l) => HeadVars::Discrete(l.bind(g, trainable)),
                CriticHead::Continuous(m) => HeadVars::Continuous(m.bind(g, trainable)),
            },
        }
    }
}

impl CriticVars {
    /// Advances the history summary: `h' = GRU(relu(fc_in(x)), h)`.
    pub fn encode(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let pre = self.fc_in.forward(g, x);
        let emb = g.relu(pre);
        self.gru.step(g, emb, h)
    }

    /// All action-values for a discrete critic.
    pub fn q_values(&self, g: &mut Graph, h: Var) -> Result<Var> {
        match &self.head {
            HeadVars::Discrete(l) => Ok(l.forward(g, h)),
            HeadVars::Continuous(_) => Err(Error::Usage("q_values needs a discrete critic head".into())),
        }
    }

    /// `Q(h, u)` for a continuous critic.
    pub fn q_value(&self, g: &mut Graph, h: Var, u: Var) -> Result<Var> {
        match &self.head {
            HeadVars::Continuous(m) => {
                let x = g.concat(&[h, u]);
                m.forward(g, x)
            }
            HeadVars::Discrete(_) => Err(Error::Usage("q_value needs a continuous critic head".into())),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.fc_in.vars();
        v.extend(self.gru.vars());
        match &self.head {
            HeadVars::Discrete(l) => v.extend(l.vars()),
            HeadVars::Continuous(m) => v.extend(m.vars()),
        }
        v
    }
}

impl Parameterized for SharedCritic {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.fc_in.named_params().into_iter().map(|(n, t)| (format!("fc_in.{n}"), t)).collect();
        out.extend(self.gru.named_params().into_iter().map(|(n, t)| (format!("gru.{n}"), t)));
        let head = match &self.head {
            CriticHead::Discrete(l) => l.named_params(),
            CriticHead::Continuous(m) => m.named_params(),
        };
        out.extend(head.into_iter().map(|(n, t)| (format!("head.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.fc_in.params_mut();
        out.extend(self.gru.params_mut());
        match &mut self.head {
            CriticHead::Discrete(l) => out.extend(l.params_mut()),
            CriticHead::Continuous(m) => out.extend(m.params_mut()),
        }
        out
    }
}

/// Per-agent policy: `h → 64 (ReLU) → out`, followed by a masked softmax
/// (discrete) or a tanh squash rescaled to the action bounds (continuous).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHead {
    pub net: Mlp,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

pub struct PolicyVars {
    net: MlpVars,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl PolicyHead {
    fn spec(shape: &NetworkShape) -> MlpSpec {
        MlpSpec::new(
            vec![shape.hidden_width, 64, shape.action_width],
            vec![Activation::Relu, Activation::Identity],
        )
        .expect("positive widths")
    }

    pub fn new<R: Rng + ?Sized>(shape: &NetworkShape, rng: &mut R) -> Self {
        Self { net: Mlp::new(Self::spec(shape), rng), bounds: shape.bounds.clone() }
    }

    pub fn zeros(shape: &NetworkShape) -> Self {
        Self { net: Mlp::zeros(Self::spec(shape)), bounds: shape.bounds.clone() }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> PolicyVars {
        PolicyVars { net: self.net.bind(g, trainable), bounds: self.bounds.clone() }
    }
}

impl PolicyVars {
    /// Action probabilities `π(·|h)` with unavailable actions at exactly zero.
    pub fn probs(&self, g: &mut Graph, h: Var, mask: Option<&Array2<bool>>) -> Result<Var> {
        if self.bounds.is_some() {
            return Err(Error::Usage("probabilities requested from a continuous policy".into()));
        }
        let logits = self.net.forward(g, h)?;
        softmax(g, logits, mask)
    }

    /// Deterministic action `μ(h) = mid + half_range · tanh(net(h))`.
    pub fn action(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let Some((low, high)) = &self.bounds else {
            return Err(Error::Usage("deterministic action requested from a discrete policy".into()));
        };
        let raw = self.net.forward(g, h)?;
        let squashed = g.tanh(raw);
        let dim = low.len();
        let half = Array2::from_shape_fn((dim, dim), |(i, j)| if i == j { 0.5 * (high[i] - low[i]) } else { 0.0 });
        let mid = Array2::from_shape_fn((1, dim), |(_, j)| 0.5 * (high[j] + low[j]));
        let half = g.constant(half);
        let mid = g.constant(mid);
        let scaled = g.matmul(squashed, half);
        Ok(g.add_row(scaled, mid))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.net.vars()
    }
}

impl Parameterized for PolicyHead {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.net.named_params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }
}

/// Shared critic plus one policy head per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentNetworks {
    pub shape: NetworkShape,
    pub critic: SharedCritic,
    pub policies: Vec<PolicyHead>,
}

impl AgentNetworks {
    pub fn new<R: Rng + ?Sized>(shape: NetworkShape, with_policies: bool, rng: &mut R) -> Self {
        let critic = SharedCritic::new(&shape, rng);
        let policies =
            if with_policies { (0..shape.n_agents).map(|_| PolicyHead::new(&shape, rng)).collect() } else { Vec::new() };
        Self { shape, critic, policies }
    }

    /// Builds the trunk input row for one agent.
    pub fn input(&self, observation: &[f64], prev_action: &[f64], agent: usize) -> AgentInput {
        AgentInput::new(observation.to_vec(), prev_action.to_vec(), agent, self.shape.n_agents)
    }
}

impl Parameterized for AgentNetworks {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> =
            self.critic.named_params().into_iter().map(|(n, t)| (format!("critic.{n}"), t)).collect();
        for (a, p) in self.policies.iter().enumerate() {
            out.extend(p.named_params().into_iter().map(|(n, t)| (format!("policy{a}.{n}"), t)));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.critic.params_mut();
        for p in &mut self.policies {
            out.extend(p.params_mut());
        }
        out
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

/// One trunk step for a single agent: returns the new hidden state and, for a
/// discrete critic, the action-values `Q_a(τ_t, ·)` (empty for continuous).
pub fn encode_step(critic: &SharedCritic, input: &AgentInput, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if input.width() != critic.input_width() || h.len() != critic.hidden_width() {
        return Err(shape_err(format!(
            "trunk expects input width {} and hidden width {}, got {} and {}",
            critic.input_width(),
            critic.hidden_width(),
            input.width(),
            h.len()
        )));
    }
    let mut g = Graph::new();
    let vars = critic.bind(&mut g, false);
    let x = g.constant(row(&input.to_vec()));
    let hv = g.constant(row(h));
    let h2 = vars.encode(&mut g, x, hv)?;
    let q = match vars.head {
        HeadVars::Discrete(_) => {
            let q = vars.q_values(&mut g, h2)?;
            g.value(q).iter().copied().collect()
        }
        HeadVars::Continuous(_) => Vec::new(),
    };
    g.check_finite()?;
    Ok((g.value(h2).iter().copied().collect(), q))
}

/// `π(·|h)` for a single hidden state.
pub fn policy_probs(policy: &PolicyHead, h: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = policy.net.bind(&mut g, false);
    let hv = g.constant(row(h));
    let logits = vars.forward(&mut g, hv)?;
    let logits: Vec<f64> = g.value(logits).iter().copied().collect();
    softmax_values(&logits, mask)
}

/// `μ(h)` for a single hidden state.
pub fn deterministic_action(policy: &PolicyHead, h: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let vars = policy.bind(&mut g, false);
    let hv = g.constant(row(h));
    let a = vars.action(&mut g, hv)?;
    g.check_finite()?;
    Ok(g.value(a).iter().copied().collect())
}

/// Draws an index from `probs` by inverse CDF; zero-probability entries are never chosen.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        cumulative += p;
        last = i;
        if u < cumulative {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, MatrixGame, ProductGame};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn discrete_shape() -> NetworkShape {
        NetworkShape::from_descriptor(MatrixGame::default_game().descriptor(), 8).unwrap()
    }

    #[test]
    fn zero_trunk_gives_zero_hidden_and_q() {
        let shape = discrete_shape();
        let critic = SharedCritic::zeros(&shape);
        let input = AgentInput::new(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], 1, 2);
        let (h, q) = encode_step(&critic, &input, &[0.0; 8]).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
        assert_eq!(q, vec![0.0; 3]);
    }

    #[test]
    fn agent_id_reaches_the_trunk() {
        let shape = discrete_shape();
        let critic = SharedCritic::new(&shape, &mut ChaCha8Rng::seed_from_u64(4));
        let a = AgentInput::new(vec![0.0; 3], vec![0.0; 3], 0, 2);
        let b = AgentInput::new(vec![0.0; 3], vec![0.0; 3], 1, 2);
        assert_ne!(a.to_vec(), b.to_vec());
        let (_, qa) = encode_step(&critic, &a, &[0.0; 8]).unwrap();
        let (_, qb) = encode_step(&critic, &b, &[0.0; 8]).unwrap();
        assert_ne!(qa, qb);
    }

    #[test]
    fn encode_step_rejects_wrong_width() {
        let critic = SharedCritic::zeros(&discrete_shape());
        let input = AgentInput::new(vec![0.0; 2], vec![0.0; 3], 0, 2);
        assert!(encode_step(&critic, &input, &[0.0; 8]).is_err());
    }

    #[test]
    fn zero_policy_is_uniform_and_respects_masks() {
        let p = PolicyHead::zeros(&discrete_shape());
        let probs = policy_probs(&p, &[0.3; 8], None).unwrap();
        for v in &probs {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let forced = policy_probs(&p, &[0.3; 8], Some(&[false, true, false])).unwrap();
        assert_eq!(forced, vec![0.0, 1.0, 0.0]);
        assert!(matches!(policy_probs(&p, &[0.3; 8], Some(&[false; 3])), Err(Error::EmptyMask)));
    }

    #[test]
    fn degenerate_distribution_always_samples_its_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(sample_action(&[1.0, 0.0, 0.0], &mut rng), 0);
            assert_ne!(sample_action(&[0.5, 0.0, 0.5], &mut rng), 1);
        }
    }

    #[test]
    fn sampling_frequency_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let ones = (0..n).filter(|_| sample_action(&[0.5, 0.5], &mut rng) == 1).count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_action(&[0.2, 0.3, 0.5], &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn zero_continuous_policy_sits_at_midpoint() {
        let shape = NetworkShape::from_descriptor(ProductGame::new().descriptor(), 8).unwrap();
        let p = PolicyHead::zeros(&shape);
        assert_eq!(deterministic_action(&p, &[0.5; 8]).unwrap(), vec![0.0]);
    }

    #[test]
    fn networks_have_one_policy_per_agent() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets = AgentNetworks::new(discrete_shape(), true, &mut rng);
        assert_eq!(nets.policies.len(), 2);
        assert_ne!(nets.policies[0], nets.policies[1]);
        let names: Vec<String> = nets.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.iter().filter(|n| n.starts_with("critic.")).count(), 2 + 9 + 2);
    }
}
