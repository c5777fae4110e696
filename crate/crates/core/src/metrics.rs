//! Error metrics averaged over every (node, feature, horizon) entry.

use ndarray::{ArrayView3, Axis};

use crate::error::{Error, Result};

/// Mean absolute error, optionally restricted to the nodes in `mask`.
pub fn mae(y_true: ArrayView3<f64>, y_pred: ArrayView3<f64>, mask: Option<&[usize]>) -> Result<f64> {
    let (sum, count) = accumulate(y_true, y_pred, mask, |e| e.abs())?;
    Ok(sum / count as f64)
}

/// Root mean squared error, optionally restricted to the nodes in `mask`.
pub fn rmse(y_true: ArrayView3<f64>, y_pred: ArrayView3<f64>, mask: Option<&[usize]>) -> Result<f64> {
    let (sum, count) = accumulate(y_true, y_pred, mask, |e| e * e)?;
    Ok((sum / count as f64).sqrt())
}

/// Running sums for MAE/RMSE over many samples, so that the pooled value
/// equals the metric over the concatenated tensors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    abs_sum: f64,
    sq_sum: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn add(&mut self, y_true: ArrayView3<f64>, y_pred: ArrayView3<f64>, mask: Option<&[usize]>) -> Result<()> {
        let (a, n) = accumulate(y_true, y_pred, mask, |e| e.abs())?;
        let (s, _) = accumulate(y_true, y_pred, mask, |e| e * e)?;
        self.abs_sum += a;
        self.sq_sum += s;
        self.count += n;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mae(&self) -> Option<f64> {
        (self.count > 0).then(|| self.abs_sum / self.count as f64)
    }

    pub fn rmse(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sq_sum / self.count as f64).sqrt())
    }
}

fn accumulate(y_true: ArrayView3<f64>, y_pred: ArrayView3<f64>, mask: Option<&[usize]>, f: impl Fn(f64) -> f64) -> Result<(f64, usize)> {
    if y_true.dim() != y_pred.dim() {
        return Err(Error::shape(y_true.dim(), y_pred.dim()));
    }
    let n = y_true.dim().0;
    let per_node = y_true.dim().1 * y_true.dim().2;
    let node_err = |g: usize| -> f64 {
        y_true
            .index_axis(Axis(0), g)
            .iter()
            .zip(y_pred.index_axis(Axis(0), g).iter())
            .map(|(t, p)| f(p - t))
            .sum()
    };
    let (sum, nodes) = match mask {
        None => ((0..n).map(node_err).sum(), n),
        Some(m) => {
            if let Some(bad) = m.iter().find(|&&g| g >= n) {
                return Err(Error::OutOfRange(format!("mask node {bad} outside {n} nodes")));
            }
            (m.iter().map(|&g| node_err(g)).sum(), m.len())
        }
    };
    let count = nodes * per_node;
    if count == 0 {
        return Err(Error::InvalidInput("metric over zero entries".into()));
    }
    Ok((sum, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Array3<f64> {
        Array3::from_shape_vec((v.len(), 1, 1), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_pair() {
        let (a, b) = (t(&[1.0, 2.0]), t(&[1.0, 4.0]));
        assert_eq!(mae(a.view(), b.view(), None).unwrap(), 1.0);
        assert_eq!(rmse(a.view(), b.view(), None).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn identical_tensors_are_zero() {
        let a = t(&[3.0, 0.5, 9.0]);
        assert_eq!(mae(a.view(), a.view(), None).unwrap(), 0.0);
        assert_eq!(rmse(a.view(), a.view(), None).unwrap(), 0.0);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Array3<f64> = Array3::from_shape_fn((3, 2, 1), |_| rng.random_range(0.0..10.0));
        let b: Array3<f64> = Array3::from_shape_fn((3, 2, 1), |_| rng.random_range(0.0..10.0));
        let (mut abs, mut sq) = (0.0, 0.0);
        for i in 0..3 {
            for j in 0..2 {
                let e = a[[i, j, 0]] - b[[i, j, 0]];
                abs += e.abs();
                sq += e * e;
            }
        }
        assert!((mae(a.view(), b.view(), None).unwrap() - abs / 6.0).abs() < 1e-12);
        assert!((rmse(a.view(), b.view(), None).unwrap() - (sq / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_epsilon() {
        let a = t(&[1.0, 5.0, 2.0, 7.0]);
        let b = a.mapv(|v| v + 0.25);
        assert!((mae(a.view(), b.view(), None).unwrap() - 0.25).abs() < 1e-15);
        assert!((rmse(a.view(), b.view(), None).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn full_mask_equals_unmasked() {
        let a = t(&[1.0, 5.0, 2.0]);
        let b = t(&[0.0, 4.0, 4.0]);
        let all = [0, 1, 2];
        assert_eq!(mae(a.view(), b.view(), Some(&all)).unwrap(), mae(a.view(), b.view(), None).unwrap());
        assert_eq!(mae(a.view(), b.view(), Some(&[2])).unwrap(), 2.0);
    }

    #[test]
    fn shape_and_mask_errors() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0, 2.0, 3.0]);
        assert!(matches!(mae(a.view(), b.view(), None), Err(Error::ShapeMismatch { .. })));
        assert!(rmse(a.view(), a.view(), Some(&[5])).is_err());
    }

    #[test]
    fn accumulator_pools_samples() {
        let (a1, b1) = (t(&[1.0, 2.0]), t(&[2.0, 2.0]));
        let (a2, b2) = (t(&[0.0, 0.0]), t(&[0.0, 3.0]));
        let mut acc = ErrorAccumulator::default();
        acc.add(a1.view(), b1.view(), None).unwrap();
        acc.add(a2.view(), b2.view(), None).unwrap();
        assert_eq!(acc.mae(), Some(1.0));
        assert_eq!(acc.rmse(), Some((10.0f64 / 4.0).sqrt()));
        assert_eq!(ErrorAccumulator::default().mae(), None);
    }
}
