// Forward passes of the layers, agent networks and mixers compared against
// straight-line reimplementations over plain vectors.

use ndarray::Array2;
use nqmix_core::agents::{encode_step, policy_probs, AgentInput, NetworkShape, PolicyHead, SharedCritic};
use nqmix_core::envs::{ActionSpace, DecPomdpDescriptor};
use nqmix_core::mixers::{hidden_width, Mixer, MixerKind};
use nqmix_core::nn::{
    softmax_values, Activation, Graph, Gru, GruSpec, Mlp, MlpSpec, Parameterized, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomize<P: Parameterized>(net: &mut P, rng: &mut ChaCha8Rng, scale: f64) {
    for t in net.params_mut() {
        t.value_mut().mapv_inplace(|_| rng.random_range(-scale..scale));
    }
}

fn at(t: &Tensor, i: usize, j: usize) -> f64 {
    t.value()[[i, j]]
}

fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let [rows, cols] = w.shape();
    assert_eq!(rows, x.len());
    (0..cols).map(|j| at(b, 0, j) + (0..rows).map(|i| x[i] * at(w, i, j)).sum::<f64>()).collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

fn mlp_oracle(net: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (layer, act) in net.layers.iter().zip(&net.spec.activations) {
        h = affine(&h, &layer.weight, &layer.bias);
        for v in h.iter_mut() {
            *v = match act {
                Activation::Relu => relu(*v),
                Activation::Tanh => v.tanh(),
                Activation::Abs => v.abs(),
                Activation::Identity => *v,
            };
        }
    }
    h
}

fn gru_oracle(cell: &Gru, x: &[f64], h: &[f64]) -> Vec<f64> {
    let gate = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f64]| -> Vec<f64> {
        let zeros = Tensor::zeros(1, b.shape()[1]);
        let xw = affine(x, w, b);
        let hu = affine(hin, u, &zeros);
        xw.iter().zip(&hu).map(|(a, c)| a + c).collect()
    };
    let z: Vec<f64> = gate(&cell.w_z, &cell.u_z, &cell.b_z, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(&cell.w_r, &cell.u_r, &cell.b_r, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let n: Vec<f64> = gate(&cell.w_n, &cell.u_n, &cell.b_n, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect()
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{a:?} vs {b:?}");
    }
}

#[test]
fn mlp_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let acts = [Activation::Relu, Activation::Tanh, Activation::Abs, Activation::Identity];
    for case in 0..40 {
        let depth = 1 + case % 3;
        let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..6)).collect();
        let activations = (0..depth).map(|i| acts[(case + i) % 4]).collect();
        let mut net = Mlp::new(MlpSpec::new(widths.clone(), activations).unwrap(), &mut rng);
        randomize(&mut net, &mut rng, 1.0);
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let vars = net.bind(&mut g, false);
        let xv = g.constant(row(&x));
        let out = vars.forward(&mut g, xv).unwrap();
        let got: Vec<f64> = g.value(out).iter().copied().collect();
        close(&got, &mlp_oracle(&net, &x), 1e-12);
    }
}

#[test]
fn gru_matches_standalone_cell_over_several_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (i, hw) = (rng.random_range(1..5), rng.random_range(1..6));
        let mut cell = Gru::new(GruSpec::new(i, hw).unwrap(), &mut rng);
        randomize(&mut cell, &mut rng, 0.8);
        let mut h_lib = vec![0.0; hw];
        let mut h_ref = vec![0.0; hw];
        for _ in 0..5 {
            let x: Vec<f64> = (0..i).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = Graph::new();
            let vars = cell.bind(&mut g, false);
            let (xv, hv) = (g.constant(row(&x)), g.constant(row(&h_lib)));
            let out = vars.step(&mut g, xv, hv).unwrap();
            h_lib = g.value(out).iter().copied().collect();
            h_ref = gru_oracle(&cell, &x, &h_ref);
            close(&h_lib, &h_ref, 1e-12);
        }
    }
}

fn discrete_shape(actions: usize, hidden: usize) -> NetworkShape {
    let desc = DecPomdpDescriptor {
        n_agents: 2,
        state_width: 3,
        action_spaces: vec![ActionSpace::Discrete(actions); 2],
        obs_width: 2,
        horizon: 3,
    };
    NetworkShape::from_descriptor(&desc, hidden).unwrap()
}

#[test]
fn critic_trunk_is_fc_relu_gru_then_linear_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = discrete_shape(3, 5);
    let mut critic = SharedCritic::new(&shape, &mut rng);
    randomize(&mut critic, &mut rng, 0.7);
    let head = match &critic.head {
        nqmix_core::agents::CriticHead::Discrete(l) => l.clone(),
        _ => unreachable!(),
    };
    let mut h = vec![0.0; 5];
    for t in 0..3 {
        let input = AgentInput::new(vec![0.3 * t as f64, -0.5], vec![0.0, 1.0, 0.0], 1, 2);
        let (h_next, q) = encode_step(&critic, &input, &h).unwrap();
        let emb: Vec<f64> =
            affine(&input.to_vec(), &critic.fc_in.weight, &critic.fc_in.bias).into_iter().map(relu).collect();
        let h_ref = gru_oracle(&critic.gru, &emb, &h);
        close(&h_next, &h_ref, 1e-12);
        close(&q, &affine(&h_ref, &head.weight, &head.bias), 1e-12);
        h = h_next;
    }
}

#[test]
fn agent_input_layout_is_observation_action_id() {
    let input = AgentInput::new(vec![0.5, -1.0], vec![0.0, 0.0, 1.0], 2, 3);
    assert_eq!(input.to_vec(), vec![0.5, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    assert_eq!(input.width(), 8);
}

#[test]
fn policy_probabilities_follow_softmax_of_mlp_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shape = discrete_shape(4, 6);
    let mut policy = PolicyHead::new(&shape, &mut rng);
    randomize(&mut policy, &mut rng, 0.5);
    let h: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let logits = mlp_oracle(&policy.net, &h);
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    let expected: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
    close(&policy_probs(&policy, &h, None).unwrap(), &expected, 1e-12);

    let mask = [true, false, true, false];
    let z: f64 = logits.iter().zip(mask).filter(|(_, m)| *m).map(|(l, _)| l.exp()).sum();
    let expected: Vec<f64> =
        logits.iter().zip(mask).map(|(l, m)| if m { l.exp() / z } else { 0.0 }).collect();
    let got = policy_probs(&policy, &h, Some(&mask)).unwrap();
    close(&got, &expected, 1e-12);
    assert_eq!(got[1], 0.0);
    assert_eq!(got[3], 0.0);
}

#[test]
fn softmax_is_shift_invariant_and_stable() {
    let a = softmax_values(&[1.0, 2.0, 3.0], None).unwrap();
    let b = softmax_values(&[1001.0, 1002.0, 1003.0], None).unwrap();
    close(&a, &b, 1e-12);
    let e = [1.0f64.exp(), 2.0f64.exp(), 3.0f64.exp()];
    let z: f64 = e.iter().sum();
    close(&a, &[e[0] / z, e[1] / z, e[2] / z], 1e-12);
    assert!(softmax_values(&[0.0, 0.0], Some(&[false, false])).is_err());
}

#[test]
fn continuous_policy_rescales_tanh_to_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let desc = DecPomdpDescriptor {
        n_agents: 2,
        state_width: 2,
        action_spaces: vec![ActionSpace::Continuous { low: vec![-3.0, 0.0], high: vec![1.0, 2.0] }; 2],
        obs_width: 1,
        horizon: 1,
    };
    let shape = NetworkShape::from_descriptor(&desc, 4).unwrap();
    let mut policy = PolicyHead::new(&shape, &mut rng);
    randomize(&mut policy, &mut rng, 1.0);
    for _ in 0..10 {
        let h: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let raw = mlp_oracle(&policy.net, &h);
        let expected = [-1.0 + 2.0 * raw[0].tanh(), 1.0 + raw[1].tanh()];
        let got = nqmix_core::agents::deterministic_action(&policy, &h).unwrap();
        close(&got, &expected, 1e-12);
        assert!((-3.0..=1.0).contains(&got[0]) && (0.0..=2.0).contains(&got[1]));
    }
}

fn hyper_oracle(m: &nqmix_core::mixers::HyperMixer, q: &[f64], s: &[f64]) -> f64 {
    let f = |v: f64| if m.monotone { v.abs() } else { v };
    let w1: Vec<f64> = affine(s, &m.hyper_w1.weight, &m.hyper_w1.bias).into_iter().map(f).collect();
    let b1 = affine(s, &m.hyper_b1.weight, &m.hyper_b1.bias);
    let w2: Vec<f64> = affine(s, &m.hyper_w2.weight, &m.hyper_w2.bias).into_iter().map(f).collect();
    let b2 = mlp_oracle(&m.hyper_b2, s)[0];
    let e = m.embed;
    let hidden: Vec<f64> = (0..e).map(|j| elu(b1[j] + (0..q.len()).map(|a| q[a] * w1[a * e + j]).sum::<f64>())).collect();
    hidden.iter().zip(&w2).map(|(h, w)| h * w).sum::<f64>() + b2
}

#[test]
fn mixers_match_their_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 2..=3 {
        for _ in 0..10 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();

            let vdn = Mixer::new(MixerKind::Vdn, n, 4, &mut rng);
            assert!((vdn.mix(&q, &s).unwrap() - q.iter().sum::<f64>()).abs() < 1e-12);

            for kind in [MixerKind::Qmix, MixerKind::NqmixM] {
                let mut mixer = Mixer::new(kind, n, 4, &mut rng);
                randomize(&mut mixer, &mut rng, 0.5);
                let Mixer::Hyper(h) = &mixer else { unreachable!() };
                let expected = hyper_oracle(h, &q, &s);
                assert!((mixer.mix(&q, &s).unwrap() - expected).abs() < 1e-10);
            }

            let mut mixer = Mixer::new(MixerKind::Nqmix, n, 4, &mut rng);
            randomize(&mut mixer, &mut rng, 0.3);
            let Mixer::Mlp(m) = &mixer else { unreachable!() };
            let mut x = q.clone();
            x.extend(&s);
            let expected = mlp_oracle(&m.net, &x)[0];
            assert!((mixer.mix(&q, &s).unwrap() - expected).abs() < 1e-10);
        }
    }
}

#[test]
fn mlp_mixer_hidden_widths() {
    // 32 · (A + 4) − A
    assert_eq!(hidden_width(3), 221);
    assert_eq!(hidden_width(2), 190);
    assert_eq!(hidden_width(1), 159);
}

#[test]
fn batched_mixing_equals_row_by_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in [MixerKind::Vdn, MixerKind::Qmix, MixerKind::NqmixM, MixerKind::Nqmix] {
        let mixer = Mixer::new(kind, 3, 2, &mut rng);
        let q = Array2::from_shape_fn((6, 3), |_| rng.random_range(-2.0..2.0));
        let s = Array2::from_shape_fn((6, 2), |_| rng.random_range(0.0..1.0));
        let batch = mixer.mix_batch(&q, &s).unwrap();
        for r in 0..6 {
            let single = mixer.mix(&q.row(r).to_vec(), &s.row(r).to_vec()).unwrap();
            assert_eq!(batch[[r, 0]], single);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qmix_slopes_are_never_negative(seed in any::<u64>(), n in 2usize..=3, sw in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixer = Mixer::new(MixerKind::Qmix, n, sw, &mut rng);
        let q = Array2::from_shape_fn((4, n), |_| rng.random_range(-5.0..5.0));
        let s = Array2::from_shape_fn((4, sw), |_| rng.random_range(0.0..1.0));
        let d = mixer.grad_wrt_agent_q(&q, &s).unwrap();
        prop_assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn vdn_slopes_are_exactly_one(seed in any::<u64>(), n in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixer = Mixer::new(MixerKind::Vdn, n, 2, &mut rng);
        let q = Array2::from_shape_fn((3, n), |_| rng.random_range(-5.0..5.0));
        let s = Array2::zeros((3, 2));
        let d = mixer.grad_wrt_agent_q(&q, &s).unwrap();
        prop_assert!(d.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn masked_probabilities_sum_to_one(logits in prop::collection::vec(-30.0f64..30.0, 2..6), bits in any::<u8>()) {
        let mut mask: Vec<bool> = (0..logits.len()).map(|i| bits >> i & 1 == 1).collect();
        mask[0] = true;
        let p = softmax_values(&logits, Some(&mask)).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pi, m) in p.iter().zip(&mask) {
            let ok = if *m { *pi >= 0.0 } else { *pi == 0.0 };
            prop_assert!(ok);
        }
    }
}
