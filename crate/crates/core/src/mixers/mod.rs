//! Mixing functions that combine per-agent values and the global state into
//! a joint value `Q_tot`, plus the per-agent slopes `∂Q_tot/∂Q_a` whose signs
//! steer the actor updates.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::joint_actions;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Graph, Linear, LinearVars, Mlp, MlpSpec, MlpVars, Parameterized, Tensor, Var};

/// Embedding width of the hypernetwork mixers.
pub const HYPER_EMBED: usize = 32;

/// Hidden width of the MLP mixer: `32 · (A + 4) − A`, chosen so its parameter
/// budget tracks the hypernetwork mixer's.
pub fn hidden_width(n_agents: usize) -> usize {
    32 * (n_agents + 4) - n_agents
}

/// `+1` for non-negative input, `−1` otherwise.
pub fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    /// `Q_tot = Σ_a Q_a`.
    Vdn,
    /// Hypernetwork mixer with absolute-valued weights.
    Qmix,
    /// Hypernetwork mixer without the absolute value.
    NqmixM,
    /// Two-layer MLP over `[Q_1..Q_n, s]`.
    Nqmix,
}

/// State-conditioned hypernetwork mixer:
///
/// ```text
/// W1 = f(hyper_w1(s))   b1 = hyper_b1(s)
/// W2 = f(hyper_w2(s))   b2 = hyper_b2(s)     (two layers, ReLU)
/// Q_tot = elu(q W1 + b1) · W2 + b2
/// ```
///
/// with `f = |·|` when `monotone`, identity otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperMixer {
    pub n_agents: usize,
    pub state_width: usize,
    pub embed: usize,
    pub monotone: bool,
    pub hyper_w1: Linear,
    pub hyper_b1: Linear,
    pub hyper_w2: Linear,
    pub hyper_b2: Mlp,
}

impl HyperMixer {
    pub fn new<R: Rng + ?Sized>(n_agents: usize, state_width: usize, monotone: bool, rng: &mut R) -> Self {
        let e = HYPER_EMBED;
        let spec = MlpSpec::new(vec![state_width, e, 1], vec![Activation::Relu, Activation::Identity])
            .expect("positive widths");
        Self {
            n_agents,
            state_width,
            embed: e,
            monotone,
            hyper_w1: Linear::new(state_width, n_agents * e, rng),
            hyper_b1: Linear::new(state_width, e, rng),
            hyper_w2: Linear::new(state_width, e, rng),
            hyper_b2: Mlp::new(spec, rng),
        }
    }
}

impl Parameterized for HyperMixer {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, l) in [("hyper_w1", &self.hyper_w1), ("hyper_b1", &self.hyper_b1), ("hyper_w2", &self.hyper_w2)] {
            out.extend(l.named_params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out.extend(self.hyper_b2.named_params().into_iter().map(|(n, t)| (format!("hyper_b2.{n}"), t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.hyper_w1.params_mut();
        out.extend(self.hyper_b1.params_mut());
        out.extend(self.hyper_w2.params_mut());
        out.extend(self.hyper_b2.params_mut());
        out
    }
}

/// Unconstrained MLP mixer: `[q, s] → hidden_width(A) (ReLU) → 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpMixer {
    pub n_agents: usize,
    pub state_width: usize,
    pub net: Mlp,
}

impl MlpMixer {
    fn spec(n_agents: usize, state_width: usize) -> MlpSpec {
        MlpSpec::new(
            vec![n_agents + state_width, hidden_width(n_agents), 1],
            vec![Activation::Relu, Activation::Identity],
        )
        .expect("positive widths")
    }

    pub fn new<R: Rng + ?Sized>(n_agents: usize, state_width: usize, rng: &mut R) -> Self {
        Self { n_agents, state_width, net: Mlp::new(Self::spec(n_agents, state_width), rng) }
    }

    pub fn zeros(n_agents: usize, state_width: usize) -> Self {
        Self { n_agents, state_width, net: Mlp::zeros(Self::spec(n_agents, state_width)) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mixer {
    Vdn { n_agents: usize, state_width: usize },
    Hyper(HyperMixer),
    Mlp(MlpMixer),
}

pub enum MixerVars {
    Vdn,
    Hyper { w1: LinearVars, b1: LinearVars, w2: LinearVars, b2: MlpVars, embed: usize, monotone: bool },
    Mlp(MlpVars),
}

impl Mixer {
    pub fn new<R: Rng + ?Sized>(kind: MixerKind, n_agents: usize, state_width: usize, rng: &mut R) -> Self {
        match kind {
            MixerKind::Vdn => Mixer::Vdn { n_agents, state_width },
            MixerKind::Qmix => Mixer::Hyper(HyperMixer::new(n_agents, state_width, true, rng)),
            MixerKind::NqmixM => Mixer::Hyper(HyperMixer::new(n_agents, state_width, false, rng)),
            MixerKind::Nqmix => Mixer::Mlp(MlpMixer::new(n_agents, state_width, rng)),
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Vdn { .. } => MixerKind::Vdn,
            Mixer::Hyper(h) if h.monotone => MixerKind::Qmix,
            Mixer::Hyper(_) => MixerKind::NqmixM,
            Mixer::Mlp(_) => MixerKind::Nqmix,
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Mixer::Vdn { n_agents, .. } => *n_agents,
            Mixer::Hyper(h) => h.n_agents,
            Mixer::Mlp(m) => m.n_agents,
        }
    }

    pub fn state_width(&self) -> usize {
        match self {
            Mixer::Vdn { state_width, .. } => *state_width,
            Mixer::Hyper(h) => h.state_width,
            Mixer::Mlp(m) => m.state_width,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MixerVars {
        match self {
            Mixer::Vdn { .. } => MixerVars::Vdn,
            Mixer::Hyper(h) => MixerVars::Hyper {
                w1: h.hyper_w1.bind(g, trainable),
                b1: h.hyper_b1.bind(g, trainable),
                w2: h.hyper_w2.bind(g, trainable),
                b2: h.hyper_b2.bind(g, trainable),
                embed: h.embed,
                monotone: h.monotone,
            },
            Mixer::Mlp(m) => MixerVars::Mlp(m.net.bind(g, trainable)),
        }
    }

    fn check_input(&self, q: (usize, usize), state: (usize, usize)) -> Result<()> {
        if q.1 != self.n_agents() || state.1 != self.state_width() || q.0 != state.0 {
            return Err(shape_err(format!(
                "mixer expects q: B × {} and state: B × {}, got {q:?} and {state:?}",
                self.n_agents(),
                self.state_width()
            )));
        }
        Ok(())
    }

    /// Batched `Q_tot` for `q: B × n` and `state: B × S` as a `B × 1` column.
    pub fn mix_batch(&self, q: &Array2<f64>, state: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(q.dim(), state.dim())?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let qv = g.constant(q.clone());
        let out = vars.forward(&mut g, qv, state)?;
        g.check_finite()?;
        Ok(g.value(out).clone())
    }

    /// `Q_tot` for a single input.
    pub fn mix(&self, q: &[f64], state: &[f64]) -> Result<f64> {
        let qa = Array2::from_shape_vec((1, q.len()), q.to_vec()).map_err(|e| shape_err(e.to_string()))?;
        let sa = Array2::from_shape_vec((1, state.len()), state.to_vec()).map_err(|e| shape_err(e.to_string()))?;
        Ok(self.mix_batch(&qa, &sa)?[[0, 0]])
    }

    /// `∂Q_tot/∂Q_a` for every row of a batch, as `B × n`.
    pub fn grad_wrt_agent_q(&self, q: &Array2<f64>, state: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(q.dim(), state.dim())?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let qv = g.input(q.clone());
        let out = vars.forward(&mut g, qv, state)?;
        // Rows are independent, so the gradient of the sum is the per-row gradient.
        let total = g.sum(out);
        Ok(g.backward(total)?.wrt(qv))
    }
}

impl MixerVars {
    /// `q: B × n` node, `state: B × S` constant data → `B × 1` node.
    pub fn forward(&self, g: &mut Graph, q: Var, state: &Array2<f64>) -> Result<Var> {
        let (rows, _) = g.shape(q);
        if state.nrows() != rows {
            return Err(shape_err(format!("{} state rows for {rows} q rows", state.nrows())));
        }
        Ok(match self {
            MixerVars::Vdn => g.row_sum(q),
            MixerVars::Hyper { w1, b1, w2, b2, embed, monotone } => {
                let s = g.constant(state.clone());
                let mut w1v = w1.forward(g, s);
                let mut w2v = w2.forward(g, s);
                if *monotone {
                    w1v = g.abs(w1v);
                    w2v = g.abs(w2v);
                }
                let b1v = b1.forward(g, s);
                let hidden_pre = g.row_bmv(q, w1v, *embed);
                let hidden_pre = g.add(hidden_pre, b1v);
                let hidden = g.elu(hidden_pre);
                let mixed = g.row_dot(hidden, w2v);
                let bias = b2.forward(g, s)?;
                g.add(mixed, bias)
            }
            MixerVars::Mlp(net) => {
                let s = g.constant(state.clone());
                let x = g.concat(&[q, s]);
                net.forward(g, x)?
            }
        })
    }

    pub fn vars(&self) -> Vec<Var> {
        match self {
            MixerVars::Vdn => Vec::new(),
            MixerVars::Hyper { w1, b1, w2, b2, .. } => {
                let mut v = w1.vars();
                v.extend(b1.vars());
                v.extend(w2.vars());
                v.extend(b2.vars());
                v
            }
            MixerVars::Mlp(net) => net.vars(),
        }
    }
}

impl Parameterized for Mixer {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Mixer::Vdn { .. } => Vec::new(),
            Mixer::Hyper(h) => h.named_params(),
            Mixer::Mlp(m) => m.net.named_params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Mixer::Vdn { .. } => Vec::new(),
            Mixer::Hyper(h) => h.params_mut(),
            Mixer::Mlp(m) => m.net.params_mut(),
        }
    }
}

/// Largest joint action space [`argmax_consistency_check`] will enumerate.
pub const JOINT_BUDGET: u128 = 100_000;

/// Checks whether the brute-force joint argmax of `Q_tot` coincides with the
/// per-agent argmaxes of the individual value tables.
///
/// Ties are resolved in favour of consistency: the check passes when the
/// per-agent greedy joint action attains the joint maximum to within
/// `1e-12` relative precision.
pub fn argmax_consistency_check(mixer: &Mixer, q_tables: &[Vec<f64>], state: &[f64]) -> Result<bool> {
    if q_tables.len() != mixer.n_agents() {
        return Err(shape_err(format!("{} q tables for {} agents", q_tables.len(), mixer.n_agents())));
    }
    let widths: Vec<usize> = q_tables.iter().map(Vec::len).collect();
    let total: u128 = widths.iter().map(|w| *w as u128).product();
    if total > JOINT_BUDGET {
        return Err(Error::Budget { needed: total, budget: JOINT_BUDGET });
    }
    let joints: Vec<Vec<usize>> = joint_actions(&widths).collect();
    let n = widths.len();
    let q = Array2::from_shape_fn((joints.len(), n), |(r, a)| q_tables[a][joints[r][a]]);
    let s = Array2::from_shape_fn((joints.len(), state.len()), |(_, j)| state[j]);
    let values = mixer.mix_batch(&q, &s)?;
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let greedy: Vec<usize> = q_tables.iter().map(|t| argmax(t)).collect();
    let greedy_row = joints.iter().position(|j| *j == greedy).expect("greedy joint action is enumerated");
    Ok(values[[greedy_row, 0]] >= best - 1e-12 * (1.0 + best.abs()))
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hidden_width_formula() {
        assert_eq!(hidden_width(3), 221);
        assert_eq!(hidden_width(2), 190);
        assert_eq!(hidden_width(1), 159);
    }

    #[test]
    fn sgn_convention() {
        assert_eq!(sgn(0.7), 1.0);
        assert_eq!(sgn(-0.7), -1.0);
        assert_eq!(sgn(0.0), 1.0);
    }

    #[test]
    fn vdn_sums_and_has_unit_slopes() {
        let m = Mixer::Vdn { n_agents: 2, state_width: 3 };
        assert_eq!(m.mix(&[2.0, 3.0], &[0.1, 0.2, 0.3]).unwrap(), 5.0);
        let g = m.grad_wrt_agent_q(&array![[2.0, 3.0]], &array![[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(g, array![[1.0, 1.0]]);
    }

    #[test]
    fn zero_mlp_mixer_outputs_zero() {
        let m = Mixer::Mlp(MlpMixer::zeros(2, 2));
        assert_eq!(m.mix(&[5.0, -3.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mixer::new(MixerKind::Qmix, 2, 2, &mut rng);
        assert!(m.mix(&[1.0, 2.0, 3.0], &[1.0, 0.0]).is_err());
        assert!(m.mix(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn vdn_argmax_consistency_example() {
        let m = Mixer::Vdn { n_agents: 2, state_width: 1 };
        assert!(argmax_consistency_check(&m, &[vec![1.0, 5.0], vec![2.0, 0.0]], &[0.0]).unwrap());
    }

    #[test]
    fn kinds_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for kind in [MixerKind::Vdn, MixerKind::Qmix, MixerKind::NqmixM, MixerKind::Nqmix] {
            assert_eq!(Mixer::new(kind, 3, 4, &mut rng).kind(), kind);
        }
    }

    #[test]
    fn hyper_mixers_share_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = Mixer::new(MixerKind::Qmix, 3, 5, &mut rng);
        let m = Mixer::new(MixerKind::NqmixM, 3, 5, &mut rng);
        assert_eq!(q.param_count(), m.param_count());
    }
}
