//! Self-checks behind `nqmix check`: finite-difference gradient sweeps, mixer
//! argmax and monotonicity properties, the all-actions estimator against its
//! explicit per-action sum, soft-update contraction, sign modulation and the
//! mixer width/parameter budget.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{NetworkShape, PolicyHead, SharedCritic};
use crate::envs::{ActionSpace, DecPomdpDescriptor, Env, TwoStepGame};
use crate::error::Result;
use crate::harness::monotonicity_probe;
use crate::learner::{
    all_actions_actor_grad, all_actions_actor_grad_weighted, deterministic_actor_grad, Algo, Batch, LearnerState,
    NqmixConfig,
};
use crate::mixers::{argmax_consistency_check, hidden_width, Mixer, MixerKind};
use crate::nn::{soft_update, Activation, Graph, Gru, GruSpec, Mlp, MlpSpec, Parameterized, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Coordinates checked per configuration for networks with many parameters.
pub const FD_MAX_COORDS: usize = 96;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

/// `|a − n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn coordinates(shapes: &[(usize, usize)], limit: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let all: Vec<(usize, usize, usize)> = shapes
        .iter()
        .enumerate()
        .flat_map(|(p, (r, c))| (0..*r).flat_map(move |i| (0..*c).map(move |j| (p, i, j))))
        .collect();
    if all.len() <= limit {
        return all;
    }
    rand::seq::index::sample(rng, all.len(), limit).into_iter().map(|i| all[i]).collect()
}

/// Largest relative error between `analytic` and central differences of `f`
/// over (a sample of) the parameters of `net`.
pub fn fd_params<P: Parameterized + Clone>(
    net: &P,
    analytic: &[Array2<f64>],
    f: &dyn Fn(&P) -> Result<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let shapes: Vec<(usize, usize)> = net.params().iter().map(|t| t.value().dim()).collect();
    let mut work = net.clone();
    let mut worst: f64 = 0.0;
    for (p, i, j) in coordinates(&shapes, FD_MAX_COORDS, rng) {
        let orig = work.params()[p].value()[[i, j]];
        work.params_mut()[p].value_mut()[[i, j]] = orig + FD_STEP;
        let up = f(&work)?;
        work.params_mut()[p].value_mut()[[i, j]] = orig - FD_STEP;
        let down = f(&work)?;
        work.params_mut()[p].value_mut()[[i, j]] = orig;
        worst = worst.max(relative_error(analytic[p][[i, j]], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

/// Same as [`fd_params`] for a plain input matrix.
pub fn fd_input(
    x: &Array2<f64>,
    analytic: &Array2<f64>,
    f: &dyn Fn(&Array2<f64>) -> Result<f64>,
) -> Result<f64> {
    let mut work = x.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = work[[i, j]];
        work[[i, j]] = orig + FD_STEP;
        let up = f(&work)?;
        work[[i, j]] = orig - FD_STEP;
        let down = f(&work)?;
        work[[i, j]] = orig;
        worst = worst.max(relative_error(analytic[[i, j]], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(worst)
}

fn weighted_sum(out: &Array2<f64>, c: &Array2<f64>) -> f64 {
    (out * c).sum()
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Abs, Activation::Identity][rng.random_range(0..4)]
}

fn random_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<bool> {
    let mut m = Array2::from_shape_fn((rows, cols), |_| rng.random_bool(0.7));
    for mut row in m.rows_mut() {
        if !row.iter().any(|b| *b) {
            let k = rng.random_range(0..cols);
            row[k] = true;
        }
    }
    m
}

fn gradient_family(name: &str, configs: usize, seed: u64, mut one: impl FnMut(&mut ChaCha8Rng) -> Result<f64>) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        worst = worst.max(one(&mut rng)?);
    }
    Ok(CheckReport::new(
        &format!("gradient/{name}"),
        worst <= FD_TOL,
        format!("{configs} configs, max relative error {worst:.2e}"),
    ))
}

fn mlp_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let depth = rng.random_range(1..=3);
    let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=6)).collect();
    let acts: Vec<Activation> = (0..depth).map(|_| random_activation(rng)).collect();
    let mut mlp = Mlp::new(MlpSpec::new(widths.clone(), acts)?, rng);
    // Zero biases behind a dead ReLU layer put the next pre-activation exactly on a kink.
    for layer in &mut mlp.layers {
        layer.bias.value_mut().mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let rows = rng.random_range(1..=3);
    let x = random_matrix(rng, rows, widths[0], 1.0);
    let c = random_matrix(rng, rows, widths[depth], 1.0);
    let eval = |net: &Mlp, x: &Array2<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = net.bind(&mut g, false);
        let xi = g.constant(x.clone());
        let out = v.forward(&mut g, xi)?;
        Ok(weighted_sum(g.value(out), &c))
    };
    let mut g = Graph::new();
    let v = mlp.bind(&mut g, true);
    let xi = g.input(x.clone());
    let out = v.forward(&mut g, xi)?;
    let cv = g.constant(c.clone());
    let prod = g.mul(out, cv);
    let obj = g.sum(prod);
    let grads = g.backward(obj)?;
    let analytic: Vec<Array2<f64>> = v.vars().iter().map(|p| grads.wrt(*p)).collect();
    let e1 = fd_params(&mlp, &analytic, &|n| eval(n, &x), rng)?;
    let e2 = fd_input(&x, &grads.wrt(xi), &|x| eval(&mlp, x))?;
    Ok(e1.max(e2))
}

fn gru_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let input = rng.random_range(1..=4);
    let hidden = rng.random_range(1..=5);
    let horizon = rng.random_range(1..=5);
    let rows = rng.random_range(1..=2);
    let gru = Gru::new(GruSpec::new(input, hidden)?, rng);
    let xs: Vec<Array2<f64>> = (0..horizon).map(|_| random_matrix(rng, rows, input, 1.0)).collect();
    let h0 = random_matrix(rng, rows, hidden, 0.5);
    let c = random_matrix(rng, rows, hidden, 1.0);
    let eval = |net: &Gru| -> Result<f64> {
        let mut g = Graph::new();
        let v = net.bind(&mut g, false);
        let mut h = g.constant(h0.clone());
        for x in &xs {
            let xi = g.constant(x.clone());
            h = v.step(&mut g, xi, h)?;
        }
        Ok(weighted_sum(g.value(h), &c))
    };
    let mut g = Graph::new();
    let v = gru.bind(&mut g, true);
    let mut h = g.constant(h0.clone());
    for x in &xs {
        let xi = g.constant(x.clone());
        h = v.step(&mut g, xi, h)?;
    }
    let cv = g.constant(c.clone());
    let prod = g.mul(h, cv);
    let obj = g.sum(prod);
    let grads = g.backward(obj)?;
    let analytic: Vec<Array2<f64>> = v.vars().iter().map(|p| grads.wrt(*p)).collect();
    fd_params(&gru, &analytic, &eval, rng)
}

fn critic_trunk_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n_agents = rng.random_range(2..=3);
    let n_actions = rng.random_range(2..=4);
    let desc = DecPomdpDescriptor {
        n_agents,
        state_width: 2,
        action_spaces: vec![ActionSpace::Discrete(n_actions); n_agents],
        obs_width: rng.random_range(1..=3),
        horizon: 5,
    };
    let shape = NetworkShape::from_descriptor(&desc, rng.random_range(2..=6))?;
    let critic = SharedCritic::new(&shape, rng);
    let horizon = rng.random_range(1..=5);
    let xs: Vec<Array2<f64>> = (0..horizon).map(|_| random_matrix(rng, n_agents, shape.input_width(), 1.0)).collect();
    let cs: Vec<Array2<f64>> = (0..horizon).map(|_| random_matrix(rng, n_agents, n_actions, 1.0)).collect();
    let build = |g: &mut Graph, net: &SharedCritic, trainable: bool| -> Result<(crate::nn::Var, Vec<crate::nn::Var>)> {
        let v = net.bind(g, trainable);
        let mut h = g.constant(Array2::zeros((n_agents, shape.hidden_width)));
        let mut total = None;
        for (x, c) in xs.iter().zip(&cs) {
            let xi = g.constant(x.clone());
            h = v.encode(g, xi, h)?;
            let q = v.q_values(g, h)?;
            let cv = g.constant(c.clone());
            let prod = g.mul(q, cv);
            let s = g.sum(prod);
            total = Some(match total {
                Some(t) => g.add(t, s),
                None => s,
            });
        }
        Ok((total.expect("horizon ≥ 1"), v.vars()))
    };
    let eval = |net: &SharedCritic| -> Result<f64> {
        let mut g = Graph::new();
        let (obj, _) = build(&mut g, net, false)?;
        Ok(g.scalar(obj))
    };
    let mut g = Graph::new();
    let (obj, vars) = build(&mut g, &critic, true)?;
    let grads = g.backward(obj)?;
    let analytic: Vec<Array2<f64>> = vars.iter().map(|p| grads.wrt(*p)).collect();
    fd_params(&critic, &analytic, &eval, rng)
}

fn mixer_case(kind: MixerKind, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(2..=3);
    let s_width = rng.random_range(1..=4);
    let rows = rng.random_range(1..=3);
    let mixer = Mixer::new(kind, n, s_width, rng);
    let q = random_matrix(rng, rows, n, 2.0);
    let s = random_matrix(rng, rows, s_width, 1.0);
    let c = random_matrix(rng, rows, 1, 1.0);
    let eval = |m: &Mixer, q: &Array2<f64>| -> Result<f64> { Ok(weighted_sum(&m.mix_batch(q, &s)?, &c)) };
    let mut g = Graph::new();
    let v = mixer.bind(&mut g, true);
    let qi = g.input(q.clone());
    let out = v.forward(&mut g, qi, &s)?;
    let cv = g.constant(c.clone());
    let prod = g.mul(out, cv);
    let obj = g.sum(prod);
    let grads = g.backward(obj)?;
    let analytic: Vec<Array2<f64>> = v.vars().iter().map(|p| grads.wrt(*p)).collect();
    let e1 = if analytic.is_empty() { 0.0 } else { fd_params(&mixer, &analytic, &|m| eval(m, &q), rng)? };
    let e2 = fd_input(&q, &grads.wrt(qi), &|q| eval(&mixer, q))?;
    Ok(e1.max(e2))
}

fn discrete_shape(rng: &mut ChaCha8Rng) -> Result<NetworkShape> {
    let n_actions = rng.random_range(2..=4);
    let desc = DecPomdpDescriptor {
        n_agents: 2,
        state_width: 1,
        action_spaces: vec![ActionSpace::Discrete(n_actions); 2],
        obs_width: 1,
        horizon: 1,
    };
    NetworkShape::from_descriptor(&desc, rng.random_range(1..=6))
}

fn continuous_shape(rng: &mut ChaCha8Rng) -> Result<NetworkShape> {
    let dim = rng.random_range(1..=2);
    let low: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..0.0)).collect();
    let high: Vec<f64> = low.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
    let desc = DecPomdpDescriptor {
        n_agents: 2,
        state_width: 1,
        action_spaces: vec![ActionSpace::Continuous { low, high }; 2],
        obs_width: 1,
        horizon: 1,
    };
    NetworkShape::from_descriptor(&desc, rng.random_range(1..=5))
}

fn policy_discrete_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = discrete_shape(rng)?;
    let policy = PolicyHead::new(&shape, rng);
    let rows = rng.random_range(1..=3);
    let h = random_matrix(rng, rows, shape.hidden_width, 1.0);
    let mask = random_mask(rng, rows, shape.action_width);
    let c = random_matrix(rng, rows, shape.action_width, 1.0);
    let eval = |p: &PolicyHead, h: &Array2<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = p.bind(&mut g, false);
        let hi = g.constant(h.clone());
        let out = v.probs(&mut g, hi, Some(&mask))?;
        Ok(weighted_sum(g.value(out), &c))
    };
    let mut g = Graph::new();
    let v = policy.bind(&mut g, true);
    let hi = g.input(h.clone());
    let out = v.probs(&mut g, hi, Some(&mask))?;
    let cv = g.constant(c.clone());
    let prod = g.mul(out, cv);
    let obj = g.sum(prod);
    let grads = g.backward(obj)?;
    let analytic: Vec<Array2<f64>> = v.vars().iter().map(|p| grads.wrt(*p)).collect();
    let e1 = fd_params(&policy, &analytic, &|p| eval(p, &h), rng)?;
    let e2 = fd_input(&h, &grads.wrt(hi), &|h| eval(&policy, h))?;
    Ok(e1.max(e2))
}

fn policy_continuous_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = continuous_shape(rng)?;
    let policy = PolicyHead::new(&shape, rng);
    let rows = rng.random_range(1..=3);
    let h = random_matrix(rng, rows, shape.hidden_width, 1.0);
    let c = random_matrix(rng, rows, shape.action_width, 1.0);
    let eval = |p: &PolicyHead| -> Result<f64> {
        let mut g = Graph::new();
        let v = p.bind(&mut g, false);
        let hi = g.constant(h.clone());
        let out = v.action(&mut g, hi)?;
        Ok(weighted_sum(g.value(out), &c))
    };
    let mut g = Graph::new();
    let v = policy.bind(&mut g, true);
    let hi = g.constant(h.clone());
    let out = v.action(&mut g, hi)?;
    let cv = g.constant(c.clone());
    let prod = g.mul(out, cv);
    let obj = g.sum(prod);
    let grads = g.backward(obj)?;
    let analytic: Vec<Array2<f64>> = v.vars().iter().map(|p| grads.wrt(*p)).collect();
    fd_params(&policy, &analytic, &eval, rng)
}

/// `J̃(θ) = Σ_r w_r Σ_u π_θ(u|h_r) q_{r,u}`.
fn all_actions_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = discrete_shape(rng)?;
    let policy = PolicyHead::new(&shape, rng);
    let rows = rng.random_range(1..=4);
    let h = random_matrix(rng, rows, shape.hidden_width, 1.0);
    let q = random_matrix(rng, rows, shape.action_width, 5.0);
    let mask = random_mask(rng, rows, shape.action_width);
    let w = random_matrix(rng, rows, 1, 1.0);
    let analytic = all_actions_actor_grad_weighted(&policy, &h, &q, Some(&mask), &w)?;
    let objective = |p: &PolicyHead| -> Result<f64> {
        let mut total = 0.0;
        for r in 0..rows {
            let m: Vec<bool> = mask.row(r).to_vec();
            let probs = crate::agents::policy_probs(p, &h.row(r).to_vec(), Some(&m))?;
            total += w[[r, 0]] * probs.iter().zip(q.row(r)).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(total)
    };
    fd_params(&policy, &analytic, &objective, rng)
}

/// `θ ↦ Σ_r w_r Q(h_r, μ_θ(h_r))` through the tanh squash.
fn deterministic_case(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = continuous_shape(rng)?;
    let policy = PolicyHead::new(&shape, rng);
    let critic = SharedCritic::new(&shape, rng);
    let rows = rng.random_range(1..=3);
    let h = random_matrix(rng, rows, shape.hidden_width, 1.0);
    let w = random_matrix(rng, rows, 1, 1.0);
    let analytic = deterministic_actor_grad(&policy, &critic, &h, &w)?;
    let objective = |p: &PolicyHead| -> Result<f64> {
        let mut total = 0.0;
        for r in 0..rows {
            let hr = h.row(r).to_vec();
            let u = crate::agents::deterministic_action(p, &hr)?;
            let mut g = Graph::new();
            let cv = critic.bind(&mut g, false);
            let hv = g.constant(Array2::from_shape_vec((1, hr.len()), hr).expect("row"));
            let uv = g.constant(Array2::from_shape_vec((1, u.len()), u).expect("row"));
            let qv = cv.q_value(&mut g, hv, uv)?;
            total += w[[r, 0]] * g.scalar(qv);
        }
        Ok(total)
    };
    fd_params(&policy, &analytic, &objective, rng)
}

/// Gradient sweeps over every network family, `configs` random configurations each.
pub fn gradient_checks(configs: usize) -> Result<Vec<CheckReport>> {
    Ok(vec![
        gradient_family("mlp", configs, 11, mlp_case)?,
        gradient_family("gru_through_time", configs, 12, gru_case)?,
        gradient_family("critic_trunk_through_time", configs, 13, critic_trunk_case)?,
        gradient_family("mixer_vdn", configs, 14, |r| mixer_case(MixerKind::Vdn, r))?,
        gradient_family("mixer_qmix", configs, 15, |r| mixer_case(MixerKind::Qmix, r))?,
        gradient_family("mixer_nqmix_m", configs, 16, |r| mixer_case(MixerKind::NqmixM, r))?,
        gradient_family("mixer_nqmix", configs, 17, |r| mixer_case(MixerKind::Nqmix, r))?,
        gradient_family("policy_discrete", configs, 18, policy_discrete_case)?,
        gradient_family("policy_continuous", configs, 19, policy_continuous_case)?,
        gradient_family("actor_all_actions", configs, 20, all_actions_case)?,
        gradient_family("actor_deterministic_chain", configs, 21, deterministic_case)?,
    ])
}

fn random_q_tables(rng: &mut ChaCha8Rng, n: usize, u: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..u).map(|_| rng.random_range(-5.0..5.0)).collect()).collect()
}

/// Decentralised-argmax consistency: always for QMIX, counterexamples for the
/// unconstrained mixers.
pub fn argmax_checks(qmix_trials: usize, search_trials: usize) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut consistent = 0;
    for _ in 0..qmix_trials {
        let n = rng.random_range(2..=3);
        let u = rng.random_range(2..=4);
        let s_width = rng.random_range(1..=4);
        let mixer = Mixer::new(MixerKind::Qmix, n, s_width, &mut rng);
        let q = random_q_tables(&mut rng, n, u);
        let s: Vec<f64> = (0..s_width).map(|_| rng.random_range(0.0..1.0)).collect();
        consistent += usize::from(argmax_consistency_check(&mixer, &q, &s)?);
    }
    let mut reports = vec![CheckReport::new(
        "argmax/qmix_consistent",
        consistent == qmix_trials,
        format!("{consistent}/{qmix_trials} consistent"),
    )];
    for kind in [MixerKind::Nqmix, MixerKind::NqmixM] {
        let mut found = None;
        for trial in 0..search_trials {
            let n = rng.random_range(2..=3);
            let u = rng.random_range(2..=4);
            let s_width = rng.random_range(1..=4);
            let mixer = Mixer::new(kind, n, s_width, &mut rng);
            let q = random_q_tables(&mut rng, n, u);
            let s: Vec<f64> = (0..s_width).map(|_| rng.random_range(0.0..1.0)).collect();
            if !argmax_consistency_check(&mixer, &q, &s)? {
                found = Some(trial + 1);
                break;
            }
        }
        reports.push(CheckReport::new(
            &format!("argmax/{kind:?}_counterexample").to_lowercase(),
            found.is_some(),
            match found {
                Some(t) => format!("counterexample at trial {t}"),
                None => format!("none in {search_trials} trials"),
            },
        ));
    }
    Ok(reports)
}

pub fn monotonicity_checks(probes: usize) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let q = monotonicity_probe(MixerKind::Qmix, 3, 4, probes, &mut rng)?;
    let m = monotonicity_probe(MixerKind::NqmixM, 3, 4, probes, &mut rng)?;
    Ok(vec![
        CheckReport::new(
            "monotonicity/qmix_non_negative",
            q.min_slope >= -1e-9,
            format!("{} probes, min slope {:.3e}", q.probes, q.min_slope),
        ),
        CheckReport::new(
            "monotonicity/nqmix_m_negative_found",
            m.negative_probes >= 1,
            format!("{}/{} probes with a negative slope", m.negative_probes, m.probes),
        ),
    ])
}

/// Compares the all-actions estimator with `Σ_u q_u ∇π(u)`, each `∇π(u)`
/// obtained from its own backward pass.
pub fn all_actions_checks(cases: usize) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst_sum: f64 = 0.0;
    let mut worst_const: f64 = 0.0;
    for case in 0..cases {
        let n_actions = 2 + case % 3;
        let desc = DecPomdpDescriptor {
            n_agents: 2,
            state_width: 1,
            action_spaces: vec![ActionSpace::Discrete(n_actions); 2],
            obs_width: 1,
            horizon: 1,
        };
        let shape = NetworkShape::from_descriptor(&desc, rng.random_range(1..=6))?;
        let policy = PolicyHead::new(&shape, &mut rng);
        let h = random_matrix(&mut rng, 1, shape.hidden_width, 1.0);
        let q = random_matrix(&mut rng, 1, n_actions, 5.0);
        let mask = random_mask(&mut rng, 1, n_actions);
        let estimator = all_actions_actor_grad(&policy, &h, &q, Some(&mask))?;

        let mut explicit: Vec<Array2<f64>> = estimator.iter().map(|g| Array2::zeros(g.dim())).collect();
        for u in 0..n_actions {
            let mut g = Graph::new();
            let v = policy.bind(&mut g, true);
            let hi = g.constant(h.clone());
            let p = v.probs(&mut g, hi, Some(&mask))?;
            let pick = g.constant(Array2::from_shape_fn((1, n_actions), |(_, j)| if j == u { 1.0 } else { 0.0 }));
            let pu = g.row_dot(p, pick);
            let obj = g.sum(pu);
            let grads = g.backward(obj)?;
            for (acc, var) in explicit.iter_mut().zip(v.vars()) {
                acc.scaled_add(q[[0, u]], &grads.wrt(var));
            }
        }
        for (a, b) in estimator.iter().zip(&explicit) {
            worst_sum = worst_sum.max((a - b).iter().fold(0.0, |m, x| m.max(x.abs())));
        }

        let c = rng.random_range(-5.0..5.0);
        let constant = all_actions_actor_grad(&policy, &h, &Array2::from_elem((1, n_actions), c), Some(&mask))?;
        for g in &constant {
            worst_const = worst_const.max(g.iter().fold(0.0, |m, x| m.max(x.abs())));
        }
    }
    Ok(vec![
        CheckReport::new(
            "all_actions/explicit_sum",
            worst_sum <= 1e-10,
            format!("{cases} cases (2-4 actions), max abs difference {worst_sum:.2e}"),
        ),
        CheckReport::new(
            "all_actions/constant_q_zero",
            worst_const <= 1e-12,
            format!("max abs component {worst_const:.2e}"),
        ),
    ])
}

fn max_gap<P: Parameterized>(a: &P, b: &P) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .flat_map(|(x, y)| x.value().iter().zip(y.value().iter()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// `‖θ′ − θ‖∞` after `k` soft updates against frozen `θ`, relative to `(1 − τ)^k`.
pub fn soft_update_checks(tau: f64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let game = TwoStepGame::new();
    let shape = NetworkShape::from_descriptor(game.descriptor(), 8)?;
    let eval = crate::agents::AgentNetworks::new(shape.clone(), true, &mut rng);
    let target0 = crate::agents::AgentNetworks::new(shape, true, &mut rng);
    let gap0 = max_gap(&eval, &target0);
    let mut out = Vec::new();
    for k in [1usize, 10, 1000] {
        let mut target = target0.clone();
        for _ in 0..k {
            soft_update(&mut target, &eval, tau)?;
        }
        let expected = (1.0 - tau).powi(k as i32) * gap0;
        let got = max_gap(&eval, &target);
        let err = (got - expected).abs();
        out.push(CheckReport::new(
            &format!("soft_update/k={k}"),
            err <= 1e-9,
            format!("gap {got:.12} vs (1-τ)^k·gap0 {expected:.12}, |diff| {err:.2e}"),
        ));
    }
    Ok(out)
}

fn negate_mixer_output(mixer: &mut Mixer) {
    let flip = |t: &mut Tensor| t.value_mut().mapv_inplace(|v| -v);
    match mixer {
        Mixer::Vdn { .. } => {}
        Mixer::Mlp(m) => {
            let last = m.net.layers.last_mut().expect("mixer has layers");
            flip(&mut last.weight);
            flip(&mut last.bias);
        }
        Mixer::Hyper(h) => {
            flip(&mut h.hyper_w2.weight);
            flip(&mut h.hyper_w2.bias);
            let last = h.hyper_b2.layers.last_mut().expect("hyper bias has layers");
            flip(&mut last.weight);
            flip(&mut last.bias);
        }
    }
}

/// Negating the mixer output must negate every actor gradient component and
/// every first-step parameter update.
pub fn sign_modulation_checks() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (algo, env) in [
        (Algo::Nqmix, crate::envs::make_env("two_step", None)?),
        (Algo::NqmixM, crate::envs::make_env("two_step", None)?),
        (Algo::NqmixContinuous, crate::envs::make_env("product", None)?),
    ] {
        let mut env = env;
        let config = NqmixConfig { batch_episodes: 8, hidden_width: 8, ..Default::default() };
        let mut state = LearnerState::new(algo, config, env.descriptor(), 5)?;
        let episodes = (0..8).map(|_| state.generate_episode(env.as_mut())).collect::<Result<Vec<_>>>()?;
        let batch = Batch::new(&episodes, state.shape())?;
        let targets = state.targets(&batch)?;
        let pass = state.critic_pass(&batch, &targets)?;
        let before = state.actor_grads(&batch, &pass)?;
        let mut flipped = state.clone();
        negate_mixer_output(&mut flipped.eval.mixer);
        let after = flipped.actor_grads(&batch, &pass)?;

        let mut worst: f64 = 0.0;
        let mut exact = true;
        for (ga, gb) in before.per_agent.iter().zip(&after.per_agent) {
            for (a, b) in ga.iter().zip(gb) {
                for (x, y) in a.iter().zip(b.iter()) {
                    worst = worst.max((x + y).abs());
                    exact &= x.to_bits() == (-y).to_bits() || (*x == 0.0 && *y == 0.0);
                }
            }
        }
        // First RMSprop step from a fresh optimiser on each side.
        let step = |grads: &[Vec<Array2<f64>>]| -> Result<Vec<Vec<Array2<f64>>>> {
            let mut deltas = Vec::new();
            for (a, g) in grads.iter().enumerate() {
                let mut policy = state.eval.agents.policies[a].clone();
                let old: Vec<Array2<f64>> = policy.params().iter().map(|t| t.value().clone()).collect();
                let mut opt = crate::nn::RmsProp::new(state.config.lr_actor);
                opt.step_with(&mut policy.params_mut(), g, crate::nn::Direction::Ascent)?;
                deltas.push(policy.params().iter().zip(&old).map(|(t, o)| t.value() - o).collect());
            }
            Ok(deltas)
        };
        let (da, db) = (step(&before.per_agent)?, step(&after.per_agent)?);
        let mut worst_update: f64 = 0.0;
        for (xa, xb) in da.iter().flatten().zip(db.iter().flatten()) {
            worst_update = worst_update.max((xa + xb).iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        out.push(CheckReport::new(
            &format!("sign_modulation/{algo}"),
            worst <= 1e-12 && worst_update <= 1e-12,
            format!(
                "max |g + g'| {worst:.2e} (bitwise {}), max |Δ + Δ'| {worst_update:.2e}",
                if exact { "exact" } else { "inexact" }
            ),
        ));
    }
    Ok(out)
}

/// Hidden-width formula and the MLP-mixer vs QMIX-mixer parameter budget.
pub fn width_checks() -> Result<Vec<CheckReport>> {
    let widths = [(3, 221), (2, 190), (1, 159)];
    let ok = widths.iter().all(|(a, w)| hidden_width(*a) == *w);
    let mut out = vec![CheckReport::new(
        "mixer_width/formula",
        ok,
        widths.iter().map(|(a, _)| format!("A={a}: {}", hidden_width(*a))).collect::<Vec<_>>().join(", "),
    )];
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for a in [2usize, 3] {
        for s in [a * 2, 16, 48] {
            let nq = Mixer::new(MixerKind::Nqmix, a, s, &mut rng).param_count();
            let qm = Mixer::new(MixerKind::Qmix, a, s, &mut rng).param_count();
            let ratio = qm as f64 / nq as f64;
            out.push(CheckReport::new(
                &format!("mixer_width/param_parity_A{a}_S{s}"),
                (ratio - 1.0).abs() <= 0.10,
                format!("nqmix {nq}, qmix {qm}, ratio {ratio:.4}"),
            ));
        }
    }
    Ok(out)
}

/// All self-checks at full size.
pub fn run_all() -> Result<Vec<CheckReport>> {
    let mut out = gradient_checks(100)?;
    out.extend(argmax_checks(100, 1000)?);
    out.extend(monotonicity_checks(10_000)?);
    out.extend(all_actions_checks(120)?);
    out.extend(soft_update_checks(0.001)?);
    out.extend(sign_modulation_checks()?);
    out.extend(width_checks()?);
    Ok(out)
}
