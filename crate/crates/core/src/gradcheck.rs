//! Finite-difference gradient verification, always in f64.

use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F>(x: &Tensor<f64>, step: f64, mut f: F) -> Tensor<f64>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    let mut g = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut hi = x.clone();
        hi.data_mut()[i] += step;
        let mut lo = x.clone();
        lo.data_mut()[i] -= step;
        g.data_mut()[i] = (f(&hi) - f(&lo)) / (2.0 * step);
    }
    g
}

/// Worst relative disagreement between two gradients. Each element pair is
/// compared as `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero
/// entries from dominating through roundoff.
pub fn max_rel_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let denom = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_quadratic() {
        let mut x = Tensor::<f64>::zeros(&[1, 3]);
        x.data_mut().copy_from_slice(&[1.0, -2.0, 0.5]);
        let g = finite_diff_gradient(&x, 1e-5, |v| {
            v.data().iter().map(|&u| u * u).sum::<f64>()
        });
        for (gv, xv) in g.data().iter().zip(x.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-8);
        }
    }

    #[test]
    fn rel_error_floor_guards_zeros() {
        let a = Tensor::<f64>::zeros(&[2]);
        let mut n = Tensor::<f64>::zeros(&[2]);
        n.data_mut()[0] = 1e-9;
        assert!(max_rel_error(&a, &n, 1e-6) < 1e-2);
    }
}
