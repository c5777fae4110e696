use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
pub fn normalized_adjacency(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::shape((n, n), (n, m)));
    }
    for i in 0..n {
        for j in 0..n {
            let v = a[[i, j]];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("adjacency entry ({i}, {j}) = {v}")));
            }
            if v != a[[j, i]] {
                return Err(Error::InvalidInput(format!("adjacency asymmetric at ({i}, {j})")));
            }
        }
    }
    let mut a_hat = a.to_owned();
    for i in 0..n {
        a_hat[[i, i]] += 1.0;
    }
    let inv_sqrt: Array1<f64> = a_hat.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            a_hat[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(a_hat)
}

/// One graph convolution `Â h W`.
pub fn graph_propagate(h: ArrayView2<f64>, a: ArrayView2<f64>, w: ArrayView2<f64>) -> Result<Array2<f64>> {
    if h.nrows() != a.nrows() {
        return Err(Error::shape(a.nrows(), h.nrows()));
    }
    if h.ncols() != w.nrows() {
        return Err(Error::shape(h.ncols(), w.nrows()));
    }
    Ok(normalized_adjacency(a)?.dot(&h).dot(&w))
}
