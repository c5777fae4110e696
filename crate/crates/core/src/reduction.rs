//! PCA over context embeddings, keeping the fewest components that explain a
//! target share of the variance.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VARIANCE_TARGET: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PcaFile", try_from = "PcaFile")]
pub struct PcaModel {
    mean: Array1<f64>,
    /// `[dim x d_c]`, orthonormal rows, descending variance.
    components: Array2<f64>,
    explained_variance: Array1<f64>,
    explained_variance_ratio: Array1<f64>,
    total_variance: f64,
}

/// Fits PCA on the rows of `embeddings` with `1/(m-1)` covariance.
///
/// The retained dimension is the smallest `k` whose cumulative explained
/// variance ratio reaches `variance_target`. Eigenvalues below a numerical
/// rank threshold count as zero. Each component's largest-magnitude
/// coordinate is made positive.
pub fn fit_pca(embeddings: ArrayView2<f64>, variance_target: f64) -> Result<PcaModel> {
    let (m, d) = embeddings.dim();
    if m < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least 2 rows, got {m}")));
    }
    if d == 0 {
        return Err(Error::InvalidInput("PCA needs at least 1 column".into()));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance target must be in (0, 1], got {variance_target}"
        )));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite embedding entry".into()));
    }

    let mean = embeddings.mean_axis(Axis(0)).expect("m >= 2");
    let centered = &embeddings - &mean;
    let cov = centered.t().dot(&centered) / (m as f64 - 1.0);
    let cov = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    let tol = lambda_max * (m.max(d) as f64) * f64::EPSILON * 16.0;
    let values: Vec<f64> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvalues[i];
            if v > tol {
                v
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = values.iter().sum();

    let component = |col: usize| -> Array1<f64> {
        let mut v = Array1::from_iter(eig.eigenvectors.column(col).iter().copied());
        fix_sign(&mut v);
        v
    };

    if total <= 0.0 {
        log::warn!("PCA input has zero variance; keeping a single zero-variance component");
        let mut basis = Array2::zeros((1, d));
        basis[[0, 0]] = 1.0;
        return Ok(PcaModel {
            mean,
            components: basis,
            explained_variance: Array1::zeros(1),
            explained_variance_ratio: Array1::zeros(1),
            total_variance: 0.0,
        });
    }

    let mut keep = 0;
    let mut cumulative = 0.0;
    for &v in &values {
        if v <= 0.0 {
            break;
        }
        keep += 1;
        cumulative += v;
        if cumulative / total >= variance_target {
            break;
        }
    }

    let mut components = Array2::zeros((keep, d));
    for (row, &col) in order.iter().take(keep).enumerate() {
        components.row_mut(row).assign(&component(col));
    }
    let explained_variance = Array1::from_iter(values[..keep].iter().copied());
    let explained_variance_ratio = explained_variance.mapv(|v| v / total);
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        total_variance: total,
    })
}

/// Flips `v` so that its largest-magnitude coordinate (first on ties) is positive.
pub fn fix_sign(v: &mut Array1<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.mapv_inplace(|x| -x);
    }
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Retained dimension.
    pub fn dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &Array1<f64> {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> &Array1<f64> {
        &self.explained_variance_ratio
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// `components . (v - mean)`
    pub fn transform(&self, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), v.len()));
        }
        Ok(self.components.dot(&(&v - &self.mean)))
    }

    /// Row-wise [`PcaModel::transform`].
    pub fn transform_rows(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), rows.ncols()));
        }
        Ok((&rows - &self.mean).dot(&self.components.t()))
    }

    /// Least-squares reconstruction from reduced coordinates.
    pub fn inverse_transform(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.dim() {
            return Err(Error::shape(self.dim(), z.len()));
        }
        Ok(self.components.t().dot(&z) + &self.mean)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&PcaFile::from(self))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PcaFile = serde_json::from_str(&text)?;
        PcaModel::try_from(file)
    }
}

/// Persisted form `{mean, components, ratios, dim, ...}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaFile {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub ratios: Vec<f64>,
    pub dim: usize,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl From<PcaModel> for PcaFile {
    fn from(m: PcaModel) -> Self {
        PcaFile::from(&m)
    }
}

impl From<&PcaModel> for PcaFile {
    fn from(m: &PcaModel) -> Self {
        PcaFile {
            mean: m.mean.to_vec(),
            components: m.components.outer_iter().map(|r| r.to_vec()).collect(),
            ratios: m.explained_variance_ratio.to_vec(),
            dim: m.dim(),
            explained_variance: m.explained_variance.to_vec(),
            total_variance: m.total_variance,
        }
    }
}

impl TryFrom<PcaFile> for PcaModel {
    type Error = Error;

    fn try_from(f: PcaFile) -> Result<Self> {
        let d = f.mean.len();
        if f.components.len() != f.dim || f.ratios.len() != f.dim || f.explained_variance.len() != f.dim {
            return Err(Error::InvalidInput("PCA file: inconsistent dim".into()));
        }
        if f.components.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("PCA file: component length differs from mean".into()));
        }
        let flat: Vec<f64> = f.components.into_iter().flatten().collect();
        Ok(PcaModel {
            mean: Array1::from(f.mean),
            components: Array2::from_shape_vec((f.dim, d), flat).expect("checked shape"),
            explained_variance: Array1::from(f.explained_variance),
            explained_variance_ratio: Array1::from(f.ratios),
            total_variance: f.total_variance,
        })
    }
}
