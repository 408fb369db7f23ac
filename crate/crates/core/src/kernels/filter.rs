//! Separable line filters: windowed box sums, finite differences and
//! Gaussian smoothing. All operate per channel along spatial axes.

use crate::error::{Error, Result};
use crate::tensor::{cast, Scalar, Tensor};

/// Applies `f(line_in, line_out)` along tensor axis `axis`, where both slices
/// are densely packed copies of the strided line. `out_extent` is the line
/// length produced by `f`.
fn map_lines<E: Scalar, F>(x: &Tensor<E>, axis: usize, out_extent: usize, mut f: F) -> Tensor<E>
where
    F: FnMut(&[E], &mut [E]),
{
    let shape = x.shape();
    let e = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = out_extent;
    let mut out = Tensor::zeros(&out_shape);
    let mut line_in = vec![E::zero(); e];
    let mut line_out = vec![E::zero(); out_extent];
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base_in = o * e * inner + i;
            for (t, slot) in line_in.iter_mut().enumerate() {
                *slot = xd[base_in + t * inner];
            }
            f(&line_in, &mut line_out);
            let base_out = o * out_extent * inner + i;
            for (t, &v) in line_out.iter().enumerate() {
                od[base_out + t * inner] = v;
            }
        }
    }
    out
}

/// Windowed sum with an odd window and zero padding, separably along every
/// spatial axis. The operator is self-adjoint (the window is symmetric), so
/// the same routine backpropagates box sums.
pub fn box_sum<E: Scalar>(x: &Tensor<E>, window: usize) -> Result<Tensor<E>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "box window must be odd and positive, got {window}"
        )));
    }
    if window == 1 {
        return Ok(x.clone());
    }
    let h = window / 2;
    let rank = x.shape().len() - 1;
    let mut cur = x.clone();
    for a in 0..rank {
        let e = cur.shape()[1 + a];
        cur = map_lines(&cur, 1 + a, e, |li, lo| {
            // prefix sums, then each window is a difference of two prefixes
            let mut run = E::zero();
            let mut prefix = vec![E::zero(); e + 1];
            for (t, &v) in li.iter().enumerate() {
                run = run + v;
                prefix[t + 1] = run;
            }
            for (t, slot) in lo.iter_mut().enumerate() {
                let a0 = t.saturating_sub(h);
                let a1 = (t + h + 1).min(e);
                *slot = prefix[a1] - prefix[a0];
            }
        });
    }
    Ok(cur)
}

/// Forward difference along one spatial axis; the extent shrinks by one.
pub fn shift_diff<E: Scalar>(x: &Tensor<E>, spatial_axis: usize) -> Result<Tensor<E>> {
    let axis = 1 + spatial_axis;
    let e = x.shape()[axis];
    if e < 2 {
        return Err(Error::Config(format!(
            "shift_diff needs extent >= 2 on axis {spatial_axis}, got {e}"
        )));
    }
    Ok(map_lines(x, axis, e - 1, |li, lo| {
        for t in 0..e - 1 {
            lo[t] = li[t + 1] - li[t];
        }
    }))
}

/// Adjoint of `shift_diff`: scatters `g` back onto the original extent.
pub fn shift_diff_adjoint<E: Scalar>(g: &Tensor<E>, spatial_axis: usize) -> Tensor<E> {
    let axis = 1 + spatial_axis;
    let e = g.shape()[axis] + 1;
    map_lines(g, axis, e, |li, lo| {
        for slot in lo.iter_mut() {
            *slot = E::zero();
        }
        for (t, &gv) in li.iter().enumerate() {
            lo[t + 1] = lo[t + 1] + gv;
            lo[t] = lo[t] - gv;
        }
    })
}

/// Central difference along one spatial axis, one-sided at the two borders.
/// The extent is preserved; it must be at least 2.
pub fn central_diff<E: Scalar>(x: &Tensor<E>, spatial_axis: usize) -> Result<Tensor<E>> {
    let axis = 1 + spatial_axis;
    let e = x.shape()[axis];
    if e < 2 {
        return Err(Error::Config(format!(
            "central_diff needs extent >= 2 on axis {spatial_axis}, got {e}"
        )));
    }
    let half = cast::<E>(0.5);
    Ok(map_lines(x, axis, e, |li, lo| {
        lo[0] = li[1] - li[0];
        for t in 1..e - 1 {
            lo[t] = (li[t + 1] - li[t - 1]) * half;
        }
        lo[e - 1] = li[e - 1] - li[e - 2];
    }))
}

/// Adjoint of `central_diff`.
pub fn central_diff_adjoint<E: Scalar>(g: &Tensor<E>, spatial_axis: usize) -> Tensor<E> {
    let axis = 1 + spatial_axis;
    let e = g.shape()[axis];
    let half = cast::<E>(0.5);
    map_lines(g, axis, e, |li, lo| {
        for slot in lo.iter_mut() {
            *slot = E::zero();
        }
        lo[1] = lo[1] + li[0];
        lo[0] = lo[0] - li[0];
        for t in 1..e - 1 {
            lo[t + 1] = lo[t + 1] + li[t] * half;
            lo[t - 1] = lo[t - 1] - li[t] * half;
        }
        lo[e - 1] = lo[e - 1] + li[e - 1];
        lo[e - 2] = lo[e - 2] - li[e - 1];
    })
}

/// Separable Gaussian smoothing with a truncated kernel (radius `ceil(3*sigma)`),
/// zero padding, kernel normalised to unit sum.
pub fn gaussian_blur<E: Scalar>(x: &Tensor<E>, sigma: f64) -> Result<Tensor<E>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut taps = Vec::with_capacity(2 * radius + 1);
    let mut total = 0.0f64;
    for t in -(radius as isize)..=radius as isize {
        let w = (-((t * t) as f64) / (2.0 * sigma * sigma)).exp();
        taps.push(w);
        total += w;
    }
    let taps: Vec<E> = taps.into_iter().map(|w| cast::<E>(w / total)).collect();
    let rank = x.shape().len() - 1;
    let mut cur = x.clone();
    for a in 0..rank {
        let e = cur.shape()[1 + a];
        cur = map_lines(&cur, 1 + a, e, |li, lo| {
            for (t, slot) in lo.iter_mut().enumerate() {
                let mut s = E::zero();
                for (j, &w) in taps.iter().enumerate() {
                    let src = t as isize + j as isize - radius as isize;
                    if src >= 0 && (src as usize) < e {
                        s = s + w * li[src as usize];
                    }
                }
                *slot = s;
            }
        });
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        let mut out = Tensor::zeros(shape);
        out.data_mut().copy_from_slice(data);
        out
    }

    #[test]
    fn box_sum_window3_1d() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let s = box_sum(&x, 3).unwrap();
        assert_eq!(s.data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn box_sum_window1_is_identity() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = box_sum(&x, 1).unwrap();
        assert_eq!(s.data(), x.data());
    }

    #[test]
    fn box_sum_2d_window3_counts_neighbourhood() {
        // constant ones: result counts in-bounds window voxels
        let x = t(&[1, 3, 3], &[1.0; 9]);
        let s = box_sum(&x, 3).unwrap();
        assert_eq!(
            s.data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn box_sum_is_self_adjoint() {
        let x = t(&[1, 5], &[0.3, -1.0, 2.0, 0.7, 1.1]);
        let y = t(&[1, 5], &[1.0, 0.2, -0.4, 2.0, 0.5]);
        let bx = box_sum(&x, 3).unwrap();
        let by = box_sum(&y, 3).unwrap();
        let lhs: f64 = bx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(by.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn shift_diff_and_adjoint() {
        let x = t(&[1, 4], &[1.0, 4.0, 9.0, 16.0]);
        let d = shift_diff(&x, 0).unwrap();
        assert_eq!(d.shape(), &[1, 3]);
        assert_eq!(d.data(), &[3.0, 5.0, 7.0]);
        let g = t(&[1, 3], &[1.0, 10.0, 100.0]);
        let a = shift_diff_adjoint(&g, 0);
        assert_eq!(a.data(), &[-1.0, -9.0, -90.0, 100.0]);
    }

    #[test]
    fn central_diff_values() {
        let x = t(&[1, 4], &[0.0, 1.0, 4.0, 9.0]);
        let d = central_diff(&x, 0).unwrap();
        assert_eq!(d.data(), &[1.0, 2.0, 4.0, 5.0]);
    }

    #[test]
    fn central_diff_of_identity_ramp_is_one() {
        let x = t(&[1, 5], &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let d = central_diff(&x, 0).unwrap();
        assert_eq!(d.data(), &[1.0; 5]);
    }

    #[test]
    fn central_diff_adjoint_matches_transpose() {
        // <D x, y> == <x, D^T y>
        let x = t(&[1, 5], &[0.2, -0.7, 1.5, 0.1, 2.2]);
        let y = t(&[1, 5], &[1.0, 0.5, -0.25, 2.0, -1.0]);
        let dx = central_diff(&x, 0).unwrap();
        let dty = central_diff_adjoint(&y, 0);
        let lhs: f64 = dx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn central_diff_second_axis() {
        let x = t(&[1, 2, 3], &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let d = central_diff(&x, 1).unwrap();
        assert_eq!(d.data(), &[1.0; 6]);
        let d0 = central_diff(&x, 0).unwrap();
        assert_eq!(d0.data(), &[10.0; 6]);
    }

    #[test]
    fn gaussian_preserves_constant_interior() {
        let x = t(&[1, 21], &[2.0; 21]);
        let s = gaussian_blur(&x, 1.0).unwrap();
        // center far from boundary: kernel sums to 1
        assert!((s.data()[10] - 2.0).abs() < 1e-12);
        // boundary loses mass to zero padding
        assert!(s.data()[0] < 2.0);
    }

    #[test]
    fn gaussian_is_symmetric() {
        let mut x = Tensor::<f64>::zeros(&[1, 11]);
        x.data_mut()[5] = 1.0;
        let s = gaussian_blur(&x, 1.5).unwrap();
        for k in 0..5 {
            assert!((s.data()[5 - k] - s.data()[5 + k]).abs() < 1e-12);
        }
        assert!(s.data()[5] > s.data()[4]);
    }
}
