//! Reverse-mode differentiation over small dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar output with
//! respect to every node that depends on a parameter leaf.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a . b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + 1 b` with `b` a single row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    /// Constant square `a` applied to each consecutive block of rows of `x`.
    BlockMatMul(Var, Var),
    GatherRows(Var, Vec<usize>),
    MaeLoss(Var, Array2<f64>),
    MseLoss(Var, Array2<f64>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let v = self.value(a) + &self.value(row).row(0);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 - x);
        let ng = self.ng(a);
        self.push(v, Op::OneMinus(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Identity => a,
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, from: usize, to: usize) -> Var {
        let v = self.value(a).slice(s![.., from..to]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, from, to), ng)
    }

    pub fn slice_rows(&mut self, a: Var, from: usize, to: usize) -> Var {
        let v = self.value(a).slice(s![from..to, ..]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceRows(a, from, to), ng)
    }

    /// `a` times every `k`-row block of `x`, with `a` a constant `k x k`
    /// matrix. Applies one graph operator to a batch of stacked graphs.
    pub fn block_matmul(&mut self, a: Var, x: Var) -> Var {
        assert!(!self.ng(a), "block_matmul treats its left operand as a constant");
        let (av, xv) = (self.value(a), self.value(x));
        let k = av.nrows();
        assert!(k > 0 && av.ncols() == k && xv.nrows() % k == 0, "block_matmul shape");
        let mut v = Array2::zeros(xv.dim());
        for b in 0..xv.nrows() / k {
            let rows = s![b * k..(b + 1) * k, ..];
            v.slice_mut(rows).assign(&av.dot(&xv.slice(rows)));
        }
        let ng = self.ng(x);
        self.push(v, Op::BlockMatMul(a, x), ng)
    }

    /// Row `r` of the result is row `idx[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let av = self.value(a);
        let v = av.select(Axis(0), &idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    /// Mean absolute error against a constant target, as a 1x1 node.
    pub fn mae_loss(&mut self, pred: Var, target: Array2<f64>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "mae_loss shape");
        let loss = (p - &target).mapv(f64::abs).mean().expect("non-empty");
        let ng = self.ng(pred);
        self.push(Array2::from_elem((1, 1), loss), Op::MaeLoss(pred, target), ng)
    }

    pub fn mse_loss(&mut self, pred: Var, target: Array2<f64>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "mse_loss shape");
        let loss = (p - &target).mapv(|e| e * e).mean().expect("non-empty");
        let ng = self.ng(pred);
        self.push(Array2::from_elem((1, 1), loss), Op::MseLoss(pred, target), ng)
    }

    /// Gradients of the 1x1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Array2::ones((1, 1)));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let acc = |v: Var, d: Array2<f64>, grads: &mut Vec<Option<Array2<f64>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(&self.value(*b).t()), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).t().dot(&g), &mut grads);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(self.value(*b)), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, g.t().dot(self.value(*a)), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.clone(), &mut grads);
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)), &mut grads);
                    acc(*a, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g, &mut grads);
                    acc(*a, g.clone(), &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, &g * self.value(*b), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, &g * self.value(*a), &mut grads);
                    }
                }
                Op::OneMinus(a) => acc(*a, -&g, &mut grads),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(*a, &g * &y.mapv(|s| s * (1.0 - s)), &mut grads);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(*a, &g * &y.mapv(|t| 1.0 - t * t), &mut grads);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g.clone();
                    d.zip_mut_with(x, |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*a, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(*p, g.slice(s![.., at..at + w]).to_owned(), &mut grads);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(*p, g.slice(s![at..at + h, ..]).to_owned(), &mut grads);
                        at += h;
                    }
                }
                Op::SliceCols(a, from, to) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *from..*to]).assign(&g);
                    acc(*a, d, &mut grads);
                }
                Op::SliceRows(a, from, to) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*from..*to, ..]).assign(&g);
                    acc(*a, d, &mut grads);
                }
                Op::BlockMatMul(a, x) => {
                    let av = self.value(*a);
                    let k = av.nrows();
                    let mut d = Array2::zeros(g.dim());
                    for b in 0..g.nrows() / k {
                        let rows = s![b * k..(b + 1) * k, ..];
                        d.slice_mut(rows).assign(&av.t().dot(&g.slice(rows)));
                    }
                    acc(*x, d, &mut grads);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = d.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(*a, d, &mut grads);
                }
                Op::MaeLoss(p, target) => {
                    let scale = g[[0, 0]] / target.len() as f64;
                    let mut d = self.value(*p) - target;
                    d.mapv_inplace(|e| scale * sign(e));
                    acc(*p, d, &mut grads);
                }
                Op::MseLoss(p, target) => {
                    let scale = 2.0 * g[[0, 0]] / target.len() as f64;
                    let d = (self.value(*p) - target) * scale;
                    acc(*p, d, &mut grads);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Subgradient of |e|, zero at the kink.
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or zeros of `shape` if `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}
