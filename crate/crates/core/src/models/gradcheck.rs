//! Central finite-difference checks of tape gradients.

use ndarray::Array2;
use rand::Rng;

/// One checked scalar parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: usize,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Picks `per_tensor` distinct entries from every tensor (fewer when a tensor
/// is smaller), in tensor order.
pub fn sample_entries<R: Rng>(shapes: &[(usize, usize)], per_tensor: usize, rng: &mut R) -> Vec<(usize, (usize, usize))> {
    let mut picks = Vec::new();
    for (ti, &(r, c)) in shapes.iter().enumerate() {
        let total = r * c;
        let chosen = rand::seq::index::sample(rng, total, per_tensor.min(total));
        let mut flat: Vec<usize> = chosen.into_iter().collect();
        flat.sort_unstable();
        picks.extend(flat.into_iter().map(|k| (ti, (k / c, k % c))));
    }
    picks
}

/// Compares `analytic` gradients with `(L(p + h) - L(p - h)) / 2h` at each pick.
pub fn check<F>(params: &[Array2<f64>], analytic: &[Array2<f64>], picks: &[(usize, (usize, usize))], h: f64, loss: F) -> Vec<GradCheckEntry>
where
    F: Fn(&[Array2<f64>]) -> f64,
{
    let mut work = params.to_vec();
    picks
        .iter()
        .map(|&(ti, idx)| {
            let orig = work[ti][idx];
            work[ti][idx] = orig + h;
            let up = loss(&work);
            work[ti][idx] = orig - h;
            let down = loss(&work);
            work[ti][idx] = orig;
            GradCheckEntry {
                tensor: ti,
                index: idx,
                analytic: analytic[ti][idx],
                numeric: (up - down) / (2.0 * h),
            }
        })
        .collect()
}
