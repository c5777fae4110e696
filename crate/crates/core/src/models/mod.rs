//! Forecasters `f_t: (X, A) -> Y`. All graph operations are polymorphic in
//! the node count, so the same parameters run on augmented graphs.

pub mod gradcheck;
pub mod graph;
pub mod neural;
pub mod tape;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowSeries;
pub use graph::{graph_propagate, normalized_adjacency};
pub use neural::{Hyperparameters, ModelDims, ParamSet};
use tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Persistence,
    HistoricalAverage,
    Gcrnn,
    Stconv,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Persistence,
        Architecture::HistoricalAverage,
        Architecture::Gcrnn,
        Architecture::Stconv,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::Persistence => "persistence",
            Architecture::HistoricalAverage => "historical_average",
            Architecture::Gcrnn => "gcrnn",
            Architecture::Stconv => "stconv",
        }
    }

    /// Whether the model has trainable parameters.
    pub fn is_neural(self) -> bool {
        matches!(self, Architecture::Gcrnn | Architecture::Stconv)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(d: usize) -> Self {
        NormStats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Statistics over every grid and hour of `series`. A constant feature
    /// gets std 1 so normalization stays finite.
    pub fn fit(series: &FlowSeries) -> Self {
        let v = series.values();
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for f in 0..series.n_features() {
            let slab = v.index_axis(Axis(1), f);
            let m = slab.mean().unwrap_or(0.0);
            let var = slab.mapv(|x| (x - m) * (x - m)).mean().unwrap_or(0.0);
            mean.push(m);
            std.push(if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 });
        }
        NormStats { mean, std }
    }

    pub fn normalize(&self, f: usize, v: f64) -> f64 {
        (v - self.mean[f]) / self.std[f]
    }

    pub fn denormalize(&self, f: usize, z: f64) -> f64 {
        z * self.std[f] + self.mean[f]
    }
}

/// Mean flow per hour-of-week slot, grid and feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalTable {
    pub n: usize,
    pub d: usize,
    /// `[168][n][d]`, flattened.
    pub means: Vec<f64>,
}

pub const HOURS_PER_WEEK: usize = 168;

pub fn hour_of_week(t: DateTime<Utc>) -> usize {
    t.weekday().num_days_from_monday() as usize * 24 + t.hour() as usize
}

impl HistoricalTable {
    /// Slots never observed fall back to the grid's overall mean.
    pub fn fit(series: &FlowSeries) -> Self {
        let (n, d) = (series.n_grids(), series.n_features());
        let mut sums = vec![0.0; HOURS_PER_WEEK * n * d];
        let mut counts = vec![0usize; HOURS_PER_WEEK];
        let v = series.values();
        for h in 0..series.n_hours() {
            let slot = hour_of_week(series.time_at(h));
            counts[slot] += 1;
            for g in 0..n {
                for f in 0..d {
                    sums[(slot * n + g) * d + f] += v[[g, f, h]];
                }
            }
        }
        let overall = v.mean_axis(Axis(2)).expect("series has hours");
        let mut means = sums;
        for (slot, &count) in counts.iter().enumerate() {
            for g in 0..n {
                for f in 0..d {
                    let i = (slot * n + g) * d + f;
                    means[i] = if count > 0 { means[i] / count as f64 } else { overall[[g, f]] };
                }
            }
        }
        HistoricalTable { n, d, means }
    }

    pub fn get(&self, slot: usize, g: usize, f: usize) -> f64 {
        self.means[(slot * self.n + g) * self.d + f]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub architecture: Architecture,
    pub hyperparameters: Hyperparameters,
    pub dims: ModelDims,
    pub params: ParamSet,
    pub norm: NormStats,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<HistoricalTable>,
}

impl Forecaster {
    /// Fresh model with seeded initial parameters and identity normalization.
    pub fn new(architecture: Architecture, hyperparameters: Hyperparameters, dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.d == 0 || dims.t1 == 0 || dims.t2 == 0 {
            return Err(Error::InvalidInput(format!("model dims must be positive: {dims:?}")));
        }
        if architecture.is_neural() && hyperparameters.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = neural::init_params(architecture, &dims, &hyperparameters, &mut rng);
        Ok(Forecaster {
            architecture,
            hyperparameters,
            dims,
            params,
            norm: NormStats::identity(dims.d),
            seed,
            history: None,
        })
    }

    /// Builds the model graph on `tape`. `p` are vars for `self.params`,
    /// `xs` the normalized `N x d` history slices.
    pub fn tape_forward(&self, tape: &mut Tape, p: &[Var], xs: &[Var], a_hat: Var) -> Var {
        neural::forward(tape, self.architecture, &self.dims, &self.hyperparameters, p, xs, a_hat)
    }

    /// Predicts `[N x d x t2]` from `x: [N x d x t1]`. The last `n_aux` rows
    /// are auxiliary nodes: they are fed unnormalized and their output rows
    /// carry no meaning. `anchor` is the time of the first predicted hour.
    pub fn forward(&self, x: ArrayView3<f64>, a: ArrayView2<f64>, n_aux: usize, anchor: DateTime<Utc>) -> Result<Array3<f64>> {
        let (big_n, d, t1) = x.dim();
        if d != self.dims.d || t1 != self.dims.t1 {
            return Err(Error::shape((big_n, self.dims.d, self.dims.t1), x.dim()));
        }
        if a.dim() != (big_n, big_n) {
            return Err(Error::shape((big_n, big_n), a.dim()));
        }
        if n_aux > big_n {
            return Err(Error::OutOfRange(format!("{n_aux} aux nodes among {big_n}")));
        }
        if x.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in model input".into()));
        }
        let n = big_n - n_aux;
        let t2 = self.dims.t2;
        let out = match self.architecture {
            Architecture::Persistence => {
                let last = x.index_axis(Axis(2), t1 - 1);
                Array3::from_shape_fn((big_n, d, t2), |(g, f, _)| last[[g, f]])
            }
            Architecture::HistoricalAverage => {
                let table = self
                    .history
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("historical average model is not fitted".into()))?;
                if table.n != n {
                    return Err(Error::shape(table.n, n));
                }
                Array3::from_shape_fn((big_n, d, t2), |(g, f, h)| {
                    if g < n {
                        table.get(hour_of_week(anchor + Duration::hours(h as i64)), g, f)
                    } else {
                        0.0
                    }
                })
            }
            Architecture::Gcrnn | Architecture::Stconv => {
                let a_hat = normalized_adjacency(a)?;
                let mut tape = Tape::new();
                let p: Vec<Var> = self.params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
                let xs: Vec<Var> = self.history_slices(x, n).into_iter().map(|m| tape.constant(m)).collect();
                let a_var = tape.constant(a_hat);
                let y = self.tape_forward(&mut tape, &p, &xs, a_var);
                self.unflatten(tape.value(y))
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model produced non-finite output".into()));
        }
        Ok(out)
    }

    /// Splits `[N x d x t1]` into `t1` matrices `N x d`, z-scoring the first
    /// `n` rows.
    pub fn history_slices(&self, x: ArrayView3<f64>, n: usize) -> Vec<Array2<f64>> {
        let (big_n, d, t1) = x.dim();
        (0..t1)
            .map(|t| {
                Array2::from_shape_fn((big_n, d), |(g, f)| {
                    let v = x[[g, f, t]];
                    if g < n {
                        self.norm.normalize(f, v)
                    } else {
                        v
                    }
                })
            })
            .collect()
    }

    /// Target `[n x d x t2]` as the normalized `n x (d * t2)` matrix the tape predicts.
    pub fn flatten_target(&self, y: ArrayView3<f64>) -> Array2<f64> {
        let (n, d, t2) = y.dim();
        Array2::from_shape_fn((n, d * t2), |(g, c)| {
            let f = c / t2;
            self.norm.normalize(f, y[[g, f, c % t2]])
        })
    }

    /// Inverse of [`Forecaster::flatten_target`], back to raw scale.
    pub fn unflatten(&self, z: &Array2<f64>) -> Array3<f64> {
        let t2 = self.dims.t2;
        Array3::from_shape_fn((z.nrows(), self.dims.d, t2), |(g, f, h)| {
            self.norm.denormalize(f, z[[g, f * t2 + h]])
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
