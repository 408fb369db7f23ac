//! Shifted/strided slab primitives shared by the convolution kernels.
//!
//! Every convolution variant in this crate (3^r "same" convolution, stride-2
//! contraction, 2^r stride-2 fractional convolution) and its adjoints reduce to
//! three access patterns between a coarse grid `T` and a fine grid `S` related
//! by `s = stride * t + delta` per axis:
//!
//! * gather:  `out[t] += w * inp[stride*t + delta]`
//! * scatter: `out[stride*t + delta] += w * g[t]`
//! * dot:     `sum_t a[t] * b[stride*t + delta]`
//!
//! With `stride == 1` the gather degenerates to a plain shifted accumulate.
//! The inner (last) axis is processed as a contiguous or constant-stride slice
//! so the hot loops vectorize. Iteration order is fixed, so results are
//! bit-deterministic.

use crate::tensor::{strides, Scalar};

/// Valid range of `t` along one axis so that `stride*t + delta` lies in `[0, s)`.
#[inline]
fn t_range(t_extent: usize, s_extent: usize, delta: isize, stride: usize) -> (usize, usize) {
    let k = stride as isize;
    let lo = (-delta).div_euclid(k).max(0) + if (-delta).rem_euclid(k) != 0 && -delta > 0 {
        // ceil division for the positive remainder case
        1
    } else {
        0
    };
    let hi = (s_extent as isize - 1 - delta).div_euclid(k) + 1;
    let lo = lo.max(0) as usize;
    let hi = hi.clamp(0, t_extent as isize) as usize;
    (lo, hi.max(lo))
}

/// Odometer over the outer axes of the valid region; calls `f(base_t, base_s)`
/// with flat offsets of the first inner-axis element for each outer position.
fn for_each_line(
    tshape: &[usize],
    sshape: &[usize],
    delta: &[isize],
    stride: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let r = tshape.len();
    debug_assert_eq!(sshape.len(), r);
    let mut lo = vec![0usize; r];
    let mut hi = vec![0usize; r];
    for a in 0..r {
        let (l, h) = t_range(tshape[a], sshape[a], delta[a], stride);
        if l >= h {
            return;
        }
        lo[a] = l;
        hi[a] = h;
    }
    let t_strides = strides(tshape);
    let s_strides = strides(sshape);
    let inner = r - 1;
    let line_len = hi[inner] - lo[inner];
    let mut idx = lo[..inner].to_vec();
    loop {
        let mut base_t = lo[inner];
        let mut base_s = (stride * lo[inner]) as isize + delta[inner];
        for a in 0..inner {
            base_t += idx[a] * t_strides[a];
            base_s += (stride * idx[a]) as isize * s_strides[a] as isize
                + delta[a] * s_strides[a] as isize;
        }
        f(base_t, base_s as usize, line_len);
        // advance odometer over outer axes
        let mut a = inner;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < hi[a] {
                break;
            }
            idx[a] = lo[a];
        }
    }
}

/// `out[t] += w * inp[stride*t + delta]` over the valid region.
pub fn gather_axpy<E: Scalar>(
    out: &mut [E],
    tshape: &[usize],
    inp: &[E],
    sshape: &[usize],
    delta: &[isize],
    stride: usize,
    w: E,
) {
    for_each_line(tshape, sshape, delta, stride, |bt, bs, len| {
        if stride == 1 {
            let o = &mut out[bt..bt + len];
            let i = &inp[bs..bs + len];
            for (ov, iv) in o.iter_mut().zip(i) {
                *ov = *ov + w * *iv;
            }
        } else {
            let o = &mut out[bt..bt + len];
            let i = inp[bs..].iter().step_by(stride);
            for (ov, iv) in o.iter_mut().zip(i) {
                *ov = *ov + w * *iv;
            }
        }
    });
}

/// `out[stride*t + delta] += w * g[t]` over the valid region.
pub fn scatter_axpy<E: Scalar>(
    out: &mut [E],
    sshape: &[usize],
    g: &[E],
    tshape: &[usize],
    delta: &[isize],
    stride: usize,
    w: E,
) {
    for_each_line(tshape, sshape, delta, stride, |bt, bs, len| {
        let gsl = &g[bt..bt + len];
        if stride == 1 {
            let o = &mut out[bs..bs + len];
            for (ov, gv) in o.iter_mut().zip(gsl) {
                *ov = *ov + w * *gv;
            }
        } else {
            let o = out[bs..].iter_mut().step_by(stride);
            for (ov, gv) in o.zip(gsl) {
                *ov = *ov + w * *gv;
            }
        }
    });
}

/// `sum_t a[t] * b[stride*t + delta]` over the valid region.
pub fn strided_dot<E: Scalar>(
    a: &[E],
    tshape: &[usize],
    b: &[E],
    sshape: &[usize],
    delta: &[isize],
    stride: usize,
) -> E {
    let mut acc = E::zero();
    for_each_line(tshape, sshape, delta, stride, |bt, bs, len| {
        let asl = &a[bt..bt + len];
        if stride == 1 {
            let bsl = &b[bs..bs + len];
            for (av, bv) in asl.iter().zip(bsl) {
                acc = acc + *av * *bv;
            }
        } else {
            let bit = b[bs..].iter().step_by(stride);
            for (av, bv) in asl.iter().zip(bit) {
                acc = acc + *av * *bv;
            }
        }
    });
    acc
}
