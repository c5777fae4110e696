//! Auxiliary context nodes: a learned projection turns a reduced context
//! vector into a `d x t1` feature block, which is appended to the history
//! tensor as an extra node. City-scope nodes connect to every original node;
//! node-scope nodes connect to a single target node.

use ndarray::{concatenate, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::ContextScope;
use crate::error::{Error, Result};
use crate::flow::check_adjacency;
use crate::models::tape::{Activation, Tape, Var};

/// `t1` layers `σ(W_i c + b_i)`, each mapping `d_c'` to `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionStack {
    /// `t1` matrices of shape `[d x d_c']`.
    pub weights: Vec<Array2<f64>>,
    /// `t1` vectors of length `d`.
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl ProjectionStack {
    pub fn new(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>, activation: Activation) -> Result<Self> {
        let stack = ProjectionStack {
            weights,
            biases,
            activation,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn zeros(t1: usize, d: usize, context_dim: usize, activation: Activation) -> Self {
        ProjectionStack {
            weights: vec![Array2::zeros((d, context_dim)); t1],
            biases: vec![Array1::zeros(d); t1],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(t1: usize, d: usize, context_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (d + context_dim) as f64).sqrt();
        ProjectionStack {
            weights: (0..t1)
                .map(|_| Array2::from_shape_fn((d, context_dim), |_| rng.random_range(-limit..limit)))
                .collect(),
            biases: vec![Array1::zeros(d); t1],
            activation,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::InvalidInput(format!(
                "projection stack needs t1 >= 1 matched layers, got {} weights and {} biases",
                self.weights.len(),
                self.biases.len()
            )));
        }
        let shape = self.weights[0].dim();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if w.dim() != shape || b.len() != shape.0 {
                return Err(Error::shape(shape, (w.dim(), b.len())));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite projection parameter".into()));
            }
        }
        Ok(())
    }

    pub fn t1(&self) -> usize {
        self.weights.len()
    }

    /// Output feature count `d`.
    pub fn out_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Input context dimension `d_c'`.
    pub fn context_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    /// Parameters as matrices: `W_0^T, b_0, W_1^T, b_1, ...` with biases as rows.
    pub fn to_params(&self) -> Vec<Array2<f64>> {
        let mut out = Vec::with_capacity(2 * self.t1());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.t().to_owned());
            out.push(b.clone().insert_axis(Axis(0)));
        }
        out
    }

    pub fn load_params(&mut self, params: &[Array2<f64>]) {
        assert_eq!(params.len(), 2 * self.t1());
        for (i, pair) in params.chunks(2).enumerate() {
            self.weights[i] = pair[0].t().to_owned();
            self.biases[i] = pair[1].row(0).to_owned();
        }
    }

    /// Tape version of [`project_context`]: one `1 x d` row per history step,
    /// given the vars produced from [`ProjectionStack::to_params`].
    pub fn tape_rows(&self, tape: &mut Tape, params: &[Var], context: Var) -> Vec<Var> {
        params
            .chunks(2)
            .map(|pair| {
                let z = tape.matmul(context, pair[0]);
                let z = tape.add_row(z, pair[1]);
                tape.activate(z, self.activation)
            })
            .collect()
    }
}

/// Feature block `[d x t1]` whose column `i` is `σ(W_i c + b_i)`.
pub fn project_context(c: ArrayView1<f64>, stack: &ProjectionStack) -> Result<Array2<f64>> {
    stack.validate()?;
    if c.len() != stack.context_dim() {
        return Err(Error::shape(stack.context_dim(), c.len()));
    }
    let mut block = Array2::zeros((stack.out_dim(), stack.t1()));
    for (i, (w, b)) in stack.weights.iter().zip(&stack.biases).enumerate() {
        let col = (w.dot(&c) + b).mapv(|v| stack.activation.apply(v));
        block.column_mut(i).assign(&col);
    }
    Ok(block)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxNodeSpec {
    pub scope: ContextScope,
    /// Required for node scope.
    pub target_grid: Option<usize>,
    pub projection: ProjectionStack,
    pub context_vector: Array1<f64>,
}

impl AuxNodeSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match (self.scope, self.target_grid) {
            (ContextScope::Node, None) => Err(Error::InvalidInput("node-scope aux node needs a target grid".into())),
            (ContextScope::Node, Some(g)) if g >= n => Err(Error::OutOfRange(format!("aux target grid {g} outside {n} nodes"))),
            _ => Ok(()),
        }
    }
}

/// Appends `blocks` (each `[d x t1]`) as extra nodes after the `n` originals.
pub fn augment_features(x: ArrayView3<f64>, blocks: &[Array2<f64>]) -> Result<Array3<f64>> {
    let (_, d, t1) = x.dim();
    let mut parts = vec![x];
    for b in blocks {
        if b.dim() != (d, t1) {
            return Err(Error::shape((d, t1), b.dim()));
        }
        parts.push(b.view().insert_axis(Axis(0)));
    }
    Ok(concatenate(Axis(0), &parts).expect("shapes checked"))
}

/// Links an auxiliary node to the original nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuxLink {
    /// Connected to every original node.
    All,
    /// A single edge to one original node.
    Single(usize),
}

impl AuxLink {
    pub fn of(spec: &AuxNodeSpec) -> AuxLink {
        match (spec.scope, spec.target_grid) {
            (ContextScope::Node, Some(g)) => AuxLink::Single(g),
            _ => AuxLink::All,
        }
    }
}

/// `(n+k) x (n+k)` adjacency: original block unchanged, no aux-aux edges,
/// no self-loops.
pub fn augment_adjacency_links(a: ArrayView2<f64>, links: &[AuxLink]) -> Result<Array2<f64>> {
    check_adjacency(&a.to_owned())?;
    let n = a.nrows();
    let k = links.len();
    let mut out = Array2::zeros((n + k, n + k));
    out.slice_mut(ndarray::s![..n, ..n]).assign(&a);
    for (j, link) in links.iter().enumerate() {
        let aux = n + j;
        match *link {
            AuxLink::All => {
                for v in 0..n {
                    out[[aux, v]] = 1.0;
                    out[[v, aux]] = 1.0;
                }
            }
            AuxLink::Single(g) => {
                if g >= n {
                    return Err(Error::OutOfRange(format!("aux target grid {g} outside {n} nodes")));
                }
                out[[aux, g]] = 1.0;
                out[[g, aux]] = 1.0;
            }
        }
    }
    Ok(out)
}

pub fn augment_adjacency(a: ArrayView2<f64>, specs: &[AuxNodeSpec]) -> Result<Array2<f64>> {
    for s in specs {
        s.validate(a.nrows())?;
    }
    let links: Vec<AuxLink> = specs.iter().map(AuxLink::of).collect();
    augment_adjacency_links(a, &links)
}

/// History/target pair on the enlarged graph. `y` covers the original nodes only.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub x_e: Array3<f64>,
    pub a_e: Array2<f64>,
    pub y: Array3<f64>,
    pub aux_indices: Vec<usize>,
}

/// Builds `(X_e, A_e)` for one sample. Specs are taken in the given order;
/// callers put city-scope nodes first.
pub fn augment_sample(x: ArrayView3<f64>, y: ArrayView3<f64>, a: ArrayView2<f64>, specs: &[AuxNodeSpec]) -> Result<AugmentedSample> {
    let n = x.dim().0;
    if a.dim() != (n, n) {
        return Err(Error::shape((n, n), a.dim()));
    }
    if y.dim().0 != n {
        return Err(Error::shape(n, y.dim().0));
    }
    let blocks = specs
        .iter()
        .map(|s| project_context(s.context_vector.view(), &s.projection))
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentedSample {
        x_e: augment_features(x, &blocks)?,
        a_e: augment_adjacency(a, specs)?,
        y: y.to_owned(),
        aux_indices: (n..n + specs.len()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_stack_tanh_is_zero_block() {
        let s = ProjectionStack::zeros(6, 2, 4, Activation::Tanh);
        let block = project_context(Array1::from(vec![1.0, -2.0, 3.0, 0.5]).view(), &s).unwrap();
        assert_eq!(block, Array2::<f64>::zeros((2, 6)));
    }

    #[test]
    fn hand_arithmetic_identity() {
        let s = ProjectionStack::new(
            vec![Array2::from_elem((1, 1), 2.0), Array2::from_elem((1, 1), -1.0)],
            vec![Array1::zeros(1), Array1::zeros(1)],
            Activation::Identity,
        )
        .unwrap();
        let block = project_context(Array1::from(vec![3.0]).view(), &s).unwrap();
        assert_eq!(block, Array2::from_shape_vec((1, 2), vec![6.0, -3.0]).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        let s = ProjectionStack::zeros(2, 2, 3, Activation::Tanh);
        assert!(project_context(Array1::zeros(4).view(), &s).is_err());
        assert!(ProjectionStack::new(vec![Array2::zeros((2, 3))], vec![], Activation::Tanh).is_err());
    }

    #[test]
    fn tape_rows_match_pure_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = ProjectionStack::init(3, 2, 5, Activation::Tanh, &mut rng);
        let mut s = s;
        for b in s.biases.iter_mut() {
            b.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        let c = Array1::from_shape_fn(5, |_| rng.random_range(-1.0..1.0));
        let block = project_context(c.view(), &s).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = s.to_params().into_iter().map(|p| tape.param(p)).collect();
        let cv = tape.constant(c.clone().insert_axis(Axis(0)));
        let rows = s.tape_rows(&mut tape, &vars, cv);
        for (t, r) in rows.iter().enumerate() {
            for f in 0..2 {
                assert!((tape.value(*r)[[0, f]] - block[[f, t]]).abs() < 1e-15);
            }
        }
        let mut back = ProjectionStack::zeros(3, 2, 5, Activation::Tanh);
        back.load_params(&s.to_params());
        assert_eq!(back, s);
    }

    #[test]
    fn features_append_in_order() {
        let x = Array3::from_shape_fn((2, 2, 3), |(i, j, k)| (i * 10 + j * 3 + k) as f64);
        assert_eq!(augment_features(x.view(), &[]).unwrap(), x);
        let b1 = Array2::from_elem((2, 3), 7.0);
        let b2 = Array2::from_elem((2, 3), 9.0);
        let xe = augment_features(x.view(), &[b1.clone(), b2]).unwrap();
        assert_eq!(xe.dim(), (4, 2, 3));
        assert_eq!(xe.index_axis(Axis(0), 2), b1);
        assert_eq!(xe[[3, 0, 0]], 9.0);
        assert!(augment_features(x.view(), &[Array2::zeros((2, 2))]).is_err());
    }

    #[test]
    fn city_node_all_ones_row() {
        let a = Array2::zeros((2, 2));
        let ae = augment_adjacency_links(a.view(), &[AuxLink::All]).unwrap();
        assert_eq!(ae.row(2).to_vec(), vec![1.0, 1.0, 0.0]);
        assert_eq!(ae.column(2).to_vec(), vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn node_aux_single_edge() {
        let a = Array2::zeros((3, 3));
        let ae = augment_adjacency_links(a.view(), &[AuxLink::Single(0)]).unwrap();
        assert_eq!(ae.sum(), 2.0);
        assert_eq!((ae[[3, 0]], ae[[0, 3]]), (1.0, 1.0));
        assert!(augment_adjacency_links(a.view(), &[AuxLink::Single(3)]).is_err());
    }

    #[test]
    fn sample_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 4;
        let x = Array3::from_shape_fn((n, 2, 6), |_| rng.random_range(0.0..5.0));
        let y = Array3::from_shape_fn((n, 2, 1), |_| rng.random_range(0.0..5.0));
        let mut a = Array2::zeros((n, n));
        a[[0, 1]] = 1.0;
        a[[1, 0]] = 1.0;
        let spec = |scope, target| AuxNodeSpec {
            scope,
            target_grid: target,
            projection: ProjectionStack::init(6, 2, 3, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(3)),
            context_vector: Array1::from(vec![0.1, 0.2, 0.3]),
        };
        let specs = [spec(ContextScope::City, None), spec(ContextScope::Node, Some(2))];
        let s = augment_sample(x.view(), y.view(), a.view(), &specs).unwrap();
        assert_eq!(s.aux_indices, vec![4, 5]);
        assert_eq!(s.x_e.slice(ndarray::s![..n, .., ..]), x);
        assert_eq!(s.a_e.slice(ndarray::s![..n, ..n]), a);
        assert_eq!(s.y, y);
        assert_eq!(s.a_e.row(4).sum(), n as f64);
        assert_eq!(s.a_e.row(5).sum(), 1.0);
        let bad = [spec(ContextScope::Node, None)];
        assert!(augment_sample(x.view(), y.view(), a.view(), &bad).is_err());
    }
}
