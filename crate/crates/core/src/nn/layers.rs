use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{Parameterized, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Abs,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Abs => g.abs(x),
            Activation::Identity => x,
        }
    }
}

/// Binds parameters onto a graph either as trainable leaves or as constants.
fn bind_tensor(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t)
    } else {
        g.constant(t.value().clone())
    }
}

/// Fully-connected layer `y = x W + b` with `W: in × out`, `b: 1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform_fan_in(input, output, input, rng),
            bias: Tensor::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(input, output), bias: Tensor::zeros(1, output) }
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LinearVars {
        LinearVars { weight: bind_tensor(g, &self.weight, trainable), bias: bind_tensor(g, &self.bias, trainable) }
    }
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let xw = g.matmul(x, self.weight);
        g.add_row(xw, self.bias)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }
}

impl Parameterized for Linear {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Layer widths and per-layer activations of a feed-forward network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(shape_err("an MLP needs at least input and output widths"));
        }
        if widths.iter().any(|w| *w == 0) {
            return Err(shape_err(format!("MLP widths must be positive: {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(shape_err(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len() - 1,
                activations.len()
            )));
        }
        Ok(Self { widths, activations })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

pub struct MlpVars {
    layers: Vec<LinearVars>,
    activations: Vec<Activation>,
    input_width: usize,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let layers = spec.widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { spec, layers }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec.widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self { spec, layers }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
            activations: self.spec.activations.clone(),
            input_width: self.spec.input_width(),
        }
    }
}

impl MlpVars {
    /// Forward pass over a `batch × input_width` node.
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let (_, cols) = g.shape(input);
        if cols != self.input_width {
            return Err(shape_err(format!("MLP expects input width {}, got {cols}", self.input_width)));
        }
        let mut x = input;
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            x = layer.forward(g, x);
            x = act.apply(g, x);
        }
        Ok(x)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

impl Parameterized for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named_params().into_iter().map(move |(n, t)| (format!("layer{i}.{n}"), t)))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Convenience wrapper: binds `params` trainably and runs one forward pass.
pub fn mlp_forward(params: &Mlp, g: &mut Graph, input: Var) -> Result<(Var, MlpVars)> {
    let vars = params.bind(g, true);
    let out = vars.forward(g, input)?;
    Ok((out, vars))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input_width: usize,
    pub hidden_width: usize,
}

impl GruSpec {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new(input_width: usize, hidden_width: usize) -> Result<Self> {
        if input_width == 0 || hidden_width == 0 {
            return Err(shape_err("GRU widths must be positive"));
        }
        Ok(Self { input_width, hidden_width })
    }
}

/// Gated recurrent unit cell:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// n  = tanh(x W_n + (r ⊙ h) U_n + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gru {
    pub spec: GruSpec,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_n: Tensor,
    pub u_n: Tensor,
    pub b_n: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w_z: Var,
    u_z: Var,
    b_z: Var,
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_n: Var,
    u_n: Var,
    b_n: Var,
    spec: GruSpec,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(spec: GruSpec, rng: &mut R) -> Self {
        let (i, h) = (spec.input_width, spec.hidden_width);
        let mut w = || Tensor::uniform_fan_in(i, h, i, rng);
        let (w_z, w_r, w_n) = (w(), w(), w());
        let mut u = || Tensor::uniform_fan_in(h, h, h, rng);
        let (u_z, u_r, u_n) = (u(), u(), u());
        let b = || Tensor::zeros(1, h);
        Self { spec, w_z, u_z, b_z: b(), w_r, u_r, b_r: b(), w_n, u_n, b_n: b() }
    }

    pub fn zeros(spec: GruSpec) -> Self {
        let (i, h) = (spec.input_width, spec.hidden_width);
        let w = || Tensor::zeros(i, h);
        let u = || Tensor::zeros(h, h);
        let b = || Tensor::zeros(1, h);
        Self { spec, w_z: w(), u_z: u(), b_z: b(), w_r: w(), u_r: u(), b_r: b(), w_n: w(), u_n: u(), b_n: b() }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> GruVars {
        let mut b = |t: &Tensor| bind_tensor(g, t, trainable);
        GruVars {
            w_z: b(&self.w_z),
            u_z: b(&self.u_z),
            b_z: b(&self.b_z),
            w_r: b(&self.w_r),
            u_r: b(&self.u_r),
            b_r: b(&self.b_r),
            w_n: b(&self.w_n),
            u_n: b(&self.u_n),
            b_n: b(&self.b_n),
            spec: self.spec,
        }
    }
}

impl GruVars {
    /// One recurrent step for a batch of rows.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let (xr, xc) = g.shape(x);
        let (hr, hc) = g.shape(h);
        if xc != self.spec.input_width || hc != self.spec.hidden_width || xr != hr {
            return Err(shape_err(format!(
                "GRU expects x: _ × {} and h: _ × {} with equal rows, got {:?} and {:?}",
                self.spec.input_width,
                self.spec.hidden_width,
                (xr, xc),
                (hr, hc)
            )));
        }
        let gate = |g: &mut Graph, w: Var, u: Var, b: Var, hin: Var| {
            let xw = g.matmul(x, w);
            let hu = g.matmul(hin, u);
            let s = g.add(xw, hu);
            g.add_row(s, b)
        };
        let z_pre = gate(g, self.w_z, self.u_z, self.b_z, h);
        let z = g.sigmoid(z_pre);
        let r_pre = gate(g, self.w_r, self.u_r, self.b_r, h);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h);
        let n_pre = gate(g, self.w_n, self.u_n, self.b_n, rh);
        let n = g.tanh(n_pre);
        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        Ok(g.add(n, zd))
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_n, self.u_n, self.b_n]
    }
}

impl Parameterized for Gru {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_z".into(), &self.w_z),
            ("u_z".into(), &self.u_z),
            ("b_z".into(), &self.b_z),
            ("w_r".into(), &self.w_r),
            ("u_r".into(), &self.u_r),
            ("b_r".into(), &self.b_r),
            ("w_n".into(), &self.w_n),
            ("u_n".into(), &self.u_n),
            ("b_n".into(), &self.b_n),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_n,
            &mut self.u_n,
            &mut self.b_n,
        ]
    }
}

/// Binds `params` trainably and runs one GRU step.
pub fn gru_step(params: &Gru, g: &mut Graph, x: Var, h: Var) -> Result<(Var, GruVars)> {
    let vars = params.bind(g, true);
    let h_next = vars.step(g, x, h)?;
    Ok((h_next, vars))
}

/// Validates that every row of `mask` has at least one available entry.
pub fn validate_mask(mask: &Array2<bool>) -> Result<()> {
    for row in mask.outer_iter() {
        if !row.iter().any(|m| *m) {
            return Err(Error::EmptyMask);
        }
    }
    Ok(())
}

/// Masked, max-shifted softmax over the rows of `logits`.
pub fn softmax(g: &mut Graph, logits: Var, mask: Option<&Array2<bool>>) -> Result<Var> {
    if let Some(m) = mask {
        if m.dim() != g.shape(logits) {
            return Err(shape_err(format!("mask shape {:?} vs logits {:?}", m.dim(), g.shape(logits))));
        }
        validate_mask(m)?;
    }
    Ok(g.softmax(logits, mask))
}

/// Softmax of a plain vector without building a graph.
pub fn softmax_values(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let avail = |j: usize| mask.map_or(true, |m| m[j]);
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(shape_err("mask length differs from logits"));
        }
        if !m.iter().any(|v| *v) {
            return Err(Error::EmptyMask);
        }
    }
    let max = (0..logits.len()).filter(|j| avail(*j)).map(|j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..logits.len()).map(|j| if avail(j) { (logits[j] - max).exp() } else { 0.0 }).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}
