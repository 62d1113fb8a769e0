//! Tape-based reverse-mode differentiation over row-batched matrices.
//!
//! Every operation appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and accumulates adjoints for every node that
//! depends on a trainable leaf. Leaves created with [`Graph::constant`] never
//! receive gradients, which is how actor and critic updates are isolated.

use ndarray::{Array2, Axis, Zip};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    Elu(Var),
    Square(Var),
    Softmax(Var),
    Concat(Vec<Var>),
    RowBmv { q: Var, w: Var, k: usize },
    RowSum(Var),
    SumAll(Var),
    Reshape(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of its shape if it did not contribute.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }

    /// Writes gradients for `vars` into the matching tensors, in order.
    pub fn write_to(&self, vars: &[Var], params: &mut [&mut Tensor]) -> Result<()> {
        if vars.len() != params.len() {
            return Err(shape_err(format!(
                "{} bound variables for {} parameters",
                vars.len(),
                params.len()
            )));
        }
        for (v, p) in vars.iter().zip(params.iter_mut()) {
            p.set_grad(self.wrt(*v))?;
        }
        Ok(())
    }
}

fn check(cond: bool, what: impl FnOnce() -> String) {
    assert!(cond, "graph shape mismatch: {}", what());
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[x.0].value.mapv(f);
        let tracked = self.tracked(&[x]);
        self.push(value, op, tracked)
    }

    /// A trainable leaf initialised from a parameter tensor.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.value().clone(), Op::Leaf, true)
    }

    /// A trainable leaf from a raw array.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check(av.ncols() == bv.nrows(), || format!("matmul {:?} x {:?}", av.dim(), bv.dim()));
        let value = av.dot(bv);
        let tracked = self.tracked(&[a, b]);
        self.push(value, Op::MatMul(a, b), tracked)
    }

    /// `x + bias` with a `1 × c` bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        check(bv.nrows() == 1 && bv.ncols() == xv.ncols(), || {
            format!("add_row {:?} + {:?}", xv.dim(), bv.dim())
        });
        let value = xv + bv;
        let tracked = self.tracked(&[x, bias]);
        self.push(value, Op::AddRow(x, bias), tracked)
    }

    fn binary_same(&mut self, a: Var, b: Var, op: Op, name: &str) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check(av.dim() == bv.dim(), || format!("{name} {:?} vs {:?}", av.dim(), bv.dim()));
        let value = match op {
            Op::Add(..) => av + bv,
            Op::Sub(..) => av - bv,
            Op::Mul(..) => av * bv,
            _ => unreachable!(),
        };
        let tracked = self.tracked(&[a, b]);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, Op::Mul(a, b), "mul")
    }

    /// `x ⊙ c` with an `r × 1` column broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        let (xv, cv) = (&self.nodes[x.0].value, &self.nodes[col.0].value);
        check(cv.ncols() == 1 && cv.nrows() == xv.nrows(), || {
            format!("mul_col {:?} * {:?}", xv.dim(), cv.dim())
        });
        let value = xv * cv;
        let tracked = self.tracked(&[x, col]);
        self.push(value, Op::MulCol(x, col), tracked)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), |v| if v > 0.0 { v } else { v.exp_m1() })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Row-wise softmax. Entries where `mask` is false get exactly zero mass.
    ///
    /// Panics if a row has no available entry; callers validate masks first.
    pub fn softmax(&mut self, x: Var, mask: Option<&Array2<bool>>) -> Var {
        let xv = &self.nodes[x.0].value;
        if let Some(m) = mask {
            check(m.dim() == xv.dim(), || format!("softmax mask {:?} vs {:?}", m.dim(), xv.dim()));
        }
        let mut value = Array2::zeros(xv.dim());
        for (r, (row, mut out)) in xv.outer_iter().zip(value.outer_iter_mut()).enumerate() {
            let avail = |j: usize| mask.map_or(true, |m| m[[r, j]]);
            let max = row
                .iter()
                .enumerate()
                .filter(|(j, _)| avail(*j))
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max > f64::NEG_INFINITY, "softmax row {r} has no available entry");
            let mut total = 0.0;
            for (j, (o, v)) in out.iter_mut().zip(row.iter()).enumerate() {
                if avail(j) {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            out.mapv_inplace(|v| v / total);
        }
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Softmax(x), tracked)
    }

    /// Concatenates along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let rows = views[0].nrows();
        check(views.iter().all(|v| v.nrows() == rows), || "concat row counts differ".into());
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let tracked = self.tracked(parts);
        self.push(value, Op::Concat(parts.to_vec()), tracked)
    }

    /// Per-row vector-matrix product: `out[r, j] = Σ_i q[r, i] · w[r, i·k + j]`.
    ///
    /// Used by hypernetwork mixers where every sample has its own weights.
    pub fn row_bmv(&mut self, q: Var, w: Var, k: usize) -> Var {
        let (qv, wv) = (&self.nodes[q.0].value, &self.nodes[w.0].value);
        let n = qv.ncols();
        check(wv.nrows() == qv.nrows() && wv.ncols() == n * k, || {
            format!("row_bmv q {:?}, w {:?}, k {k}", qv.dim(), wv.dim())
        });
        let mut value = Array2::zeros((qv.nrows(), k));
        for ((qr, wr), mut out) in qv.outer_iter().zip(wv.outer_iter()).zip(value.outer_iter_mut()) {
            for i in 0..n {
                let qi = qr[i];
                for j in 0..k {
                    out[j] += qi * wr[i * k + j];
                }
            }
        }
        let tracked = self.tracked(&[q, w]);
        self.push(value, Op::RowBmv { q, w, k }, tracked)
    }

    /// Sums each row to an `r × 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let tracked = self.tracked(&[x]);
        self.push(value, Op::RowSum(x), tracked)
    }

    /// Sums every entry to a `1 × 1` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.sum();
        let tracked = self.tracked(&[x]);
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        check(xv.len() == rows * cols, || format!("reshape {:?} to ({rows}, {cols})", xv.dim()));
        let flat: Vec<f64> = xv.iter().copied().collect();
        let value = Array2::from_shape_vec((rows, cols), flat).expect("length checked");
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Reshape(x), tracked)
    }

    /// Row-wise dot product of two same-shape matrices, as an `r × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.row_sum(p)
    }

    /// Errors if any recorded forward value is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("forward value of node {i} ({:?})", op_name(&n.op))));
            }
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.dim() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                out.value.dim()
            )));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        let shapes = self.nodes[..=output.0].iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].tracked {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.nodes[b.0].tracked {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                acc(*a, g * val(*b));
                acc(*b, g * val(*a));
            }
            Op::MulCol(x, c) => {
                acc(*x, g * val(*c));
                acc(*c, (g * val(*x)).sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Affine(x, k) => acc(*x, g * *k),
            Op::Sigmoid(x) => acc(*x, Zip::from(g).and(y).map_collect(|g, y| g * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, Zip::from(g).and(y).map_collect(|g, y| g * (1.0 - y * y))),
            Op::Relu(x) => {
                acc(*x, Zip::from(g).and(val(*x)).map_collect(|g, x| if *x > 0.0 { *g } else { 0.0 }))
            }
            Op::Abs(x) => acc(
                *x,
                Zip::from(g).and(val(*x)).map_collect(|g, x| {
                    if *x > 0.0 {
                        *g
                    } else if *x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Elu(x) => acc(
                *x,
                Zip::from(g)
                    .and(val(*x))
                    .and(y)
                    .map_collect(|g, x, y| if *x > 0.0 { *g } else { g * (y + 1.0) }),
            ),
            Op::Square(x) => acc(*x, Zip::from(g).and(val(*x)).map_collect(|g, x| 2.0 * g * x)),
            Op::Softmax(x) => {
                let dot = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*x, y * &(g - &dot));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(*p).ncols();
                    acc(*p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::RowBmv { q, w, k } => {
                let (qv, wv) = (val(*q), val(*w));
                let n = qv.ncols();
                let mut gq = Array2::zeros(qv.dim());
                let mut gw = Array2::zeros(wv.dim());
                for r in 0..qv.nrows() {
                    for i in 0..n {
                        let mut s = 0.0;
                        for j in 0..*k {
                            s += g[[r, j]] * wv[[r, i * k + j]];
                            gw[[r, i * k + j]] = g[[r, j]] * qv[[r, i]];
                        }
                        gq[[r, i]] = s;
                    }
                }
                acc(*q, gq);
                acc(*w, gw);
            }
            Op::RowSum(x) => {
                let cols = val(*x).ncols();
                let expanded = g.broadcast((g.nrows(), cols)).expect("column broadcast").to_owned();
                acc(*x, expanded);
            }
            Op::SumAll(x) => acc(*x, Array2::from_elem(val(*x).dim(), g[[0, 0]])),
            Op::Reshape(x) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                acc(*x, Array2::from_shape_vec(val(*x).dim(), flat).expect("same length"));
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::AddRow(..) => "add_row",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::MulCol(..) => "mul_col",
        Op::Affine(..) => "affine",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Abs(_) => "abs",
        Op::Elu(_) => "elu",
        Op::Square(_) => "square",
        Op::Softmax(_) => "softmax",
        Op::Concat(_) => "concat",
        Op::RowBmv { .. } => "row_bmv",
        Op::RowSum(_) => "row_sum",
        Op::SumAll(_) => "sum",
        Op::Reshape(_) => "reshape",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_leaf(g: &mut Graph, x: f64) -> Var {
        g.input(array![[x]])
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 3.0);
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x)[[0, 0]], 6.0);
    }

    #[test]
    fn relu_inactive_unit_has_zero_gradient() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, -1.0);
        let y = g.relu(x);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x)[[0, 0]], 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.input(array![[1.0, 2.0]]);
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn non_contributing_leaf_gets_zero() {
        let mut g = Graph::new();
        let x = scalar_leaf(&mut g, 2.0);
        let unused = g.input(array![[1.0, 1.0]]);
        let y = g.square(x);
        let grads = g.backward(y).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused), array![[0.0, 0.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[2.0]]);
        let x = scalar_leaf(&mut g, 3.0);
        let y = g.mul(c, x);
        let grads = g.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(x)[[0, 0]], 2.0);
    }

    #[test]
    fn nan_forward_is_reported() {
        let mut g = Graph::new();
        let x = g.input(array![[f64::NAN]]);
        let y = g.square(x);
        assert!(matches!(g.backward(y), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_of_sum_is_sum_of_backwards() {
        let mut g = Graph::new();
        let x = g.input(array![[0.3, -0.7]]);
        let a = g.tanh(x);
        let sa = g.sum(a);
        let b = g.square(x);
        let sb = g.sum(b);
        let both = g.add(sa, sb);
        let ga = g.backward(sa).unwrap().wrt(x);
        let gb = g.backward(sb).unwrap().wrt(x);
        let gab = g.backward(both).unwrap().wrt(x);
        for j in 0..2 {
            assert!((gab[[0, j]] - ga[[0, j]] - gb[[0, j]]).abs() < 1e-15);
        }
    }

    #[test]
    fn row_bmv_matches_per_row_matrix_product() {
        let mut g = Graph::new();
        let q = g.input(array![[1.0, 2.0], [0.5, -1.0]]);
        // Row 0 weights as a 2x3 matrix [[1,2,3],[4,5,6]]; row 1 all ones.
        let w = g.input(array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]]);
        let y = g.row_bmv(q, w, 3);
        assert_eq!(g.value(y), &array![[9.0, 12.0, 15.0], [-0.5, -0.5, -0.5]]);
    }
}
