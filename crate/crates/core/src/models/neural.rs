//! Graph forecasters expressed on the [`Tape`]. Every parameter shape is
//! independent of the node count, so one parameter set serves any graph size.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// GRU hidden width (gcrnn) or channel count (stconv).
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Temporal kernel of the first stconv block.
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
}

fn default_hidden() -> usize {
    32
}

fn default_kernel() -> usize {
    3
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            hidden: default_hidden(),
            kernel_size: default_kernel(),
        }
    }
}

/// Feature count and window lengths a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d: usize,
    pub t1: usize,
    pub t2: usize,
}

impl ModelDims {
    pub fn out_cols(&self) -> usize {
        self.d * self.t2
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Array2<f64>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

fn stconv_kernel(dims: &ModelDims, hyper: &Hyperparameters) -> usize {
    hyper.kernel_size.clamp(1, dims.t1)
}

pub fn init_params<R: Rng>(arch: Architecture, dims: &ModelDims, hyper: &Hyperparameters, rng: &mut R) -> ParamSet {
    let (d, h, out) = (dims.d, hyper.hidden, dims.out_cols());
    let mut p = ParamSet::default();
    match arch {
        Architecture::Gcrnn => {
            p.push("gru.gates.weight", glorot(rng, d + h, 2 * h));
            p.push("gru.gates.bias", Array2::from_elem((1, 2 * h), 1.0));
            p.push("gru.candidate.weight", glorot(rng, d + h, h));
            p.push("gru.candidate.bias", Array2::zeros((1, h)));
            p.push("readout.weight", glorot(rng, h, out));
            p.push("readout.bias", Array2::zeros((1, out)));
        }
        Architecture::Stconv => {
            let k = stconv_kernel(dims, hyper);
            let rest = dims.t1 - k + 1;
            p.push("temporal1.weight", glorot(rng, d * k, 2 * h));
            p.push("temporal1.bias", Array2::zeros((1, 2 * h)));
            p.push("spatial.weight", glorot(rng, h, h));
            p.push("spatial.bias", Array2::zeros((1, h)));
            p.push("temporal2.weight", glorot(rng, h * rest, 2 * h));
            p.push("temporal2.bias", Array2::zeros((1, 2 * h)));
            p.push("readout.weight", glorot(rng, h, out));
            p.push("readout.bias", Array2::zeros((1, out)));
        }
        Architecture::Persistence | Architecture::HistoricalAverage => {}
    }
    p
}

/// Runs a graph architecture. `xs` holds `t1` matrices of shape `BN x d`,
/// a batch of `B` graphs stacked row-wise, and `a_hat` the constant `N x N`
/// normalized adjacency. Returns `BN x (d * t2)` with column `f * t2 + h`
/// for feature `f`, horizon `h`.
pub fn forward(tape: &mut Tape, arch: Architecture, dims: &ModelDims, hyper: &Hyperparameters, p: &[Var], xs: &[Var], a_hat: Var) -> Var {
    assert_eq!(xs.len(), dims.t1, "history length");
    match arch {
        Architecture::Gcrnn => gcrnn(tape, hyper, p, xs, a_hat),
        Architecture::Stconv => stconv(tape, dims, hyper, p, xs, a_hat),
        _ => panic!("{arch:?} has no tape forward"),
    }
}

/// GRU with graph-convolved gates, TGCN style.
fn gcrnn(tape: &mut Tape, hyper: &Hyperparameters, p: &[Var], xs: &[Var], a_hat: Var) -> Var {
    let h_dim = hyper.hidden;
    let n = tape.value(xs[0]).nrows();
    let mut h = tape.constant(Array2::zeros((n, h_dim)));
    for &x in xs {
        let xh = tape.concat_cols(&[x, h]);
        let agg = tape.block_matmul(a_hat, xh);
        let g = tape.matmul(agg, p[0]);
        let g = tape.add_row(g, p[1]);
        let g = tape.sigmoid(g);
        let r = tape.slice_cols(g, 0, h_dim);
        let u = tape.slice_cols(g, h_dim, 2 * h_dim);
        let rh = tape.mul(r, h);
        let xrh = tape.concat_cols(&[x, rh]);
        let agg = tape.block_matmul(a_hat, xrh);
        let c = tape.matmul(agg, p[2]);
        let c = tape.add_row(c, p[3]);
        let c = tape.tanh(c);
        let keep = tape.mul(u, h);
        let one_minus_u = tape.one_minus(u);
        let fresh = tape.mul(one_minus_u, c);
        h = tape.add(keep, fresh);
    }
    let y = tape.matmul(h, p[4]);
    tape.add_row(y, p[5])
}

/// Gated linear unit over a `2C`-wide pre-activation.
fn glu(tape: &mut Tape, z: Var, c: usize) -> Var {
    let lin = tape.slice_cols(z, 0, c);
    let gate = tape.slice_cols(z, c, 2 * c);
    let gate = tape.sigmoid(gate);
    tape.mul(lin, gate)
}

/// Temporal GLU convolution, graph convolution, temporal GLU convolution
/// collapsing the remaining steps, linear readout. STGCN style.
fn stconv(tape: &mut Tape, dims: &ModelDims, hyper: &Hyperparameters, p: &[Var], xs: &[Var], a_hat: Var) -> Var {
    let c = hyper.hidden;
    let k = stconv_kernel(dims, hyper);
    let steps = dims.t1 - k + 1;
    let mut spatial = Vec::with_capacity(steps);
    for tau in 0..steps {
        let win = tape.concat_cols(&xs[tau..tau + k]);
        let z = tape.matmul(win, p[0]);
        let z = tape.add_row(z, p[1]);
        let z = glu(tape, z, c);
        let agg = tape.block_matmul(a_hat, z);
        let s = tape.matmul(agg, p[2]);
        let s = tape.add_row(s, p[3]);
        spatial.push(tape.relu(s));
    }
    let all = tape.concat_cols(&spatial);
    let z = tape.matmul(all, p[4]);
    let z = tape.add_row(z, p[5]);
    let z = glu(tape, z, c);
    let y = tape.matmul(z, p[6]);
    tape.add_row(y, p[7])
}
