//! Rank-generic convolutions in channel-first layout.
//!
//! Three variants cover the whole network:
//! * `conv3`: kernel 3^r, zero padding 1, stride 1, shape preserving
//! * `conv3` with stride 2: kernel 3^r, padding 1, halves every spatial extent
//! * `frac2`: fractional (transposed) convolution, kernel 2^r, stride 2,
//!   doubles every spatial extent
//!
//! Weight layouts: `conv3` uses `[c_out, c_in, 3, .., 3]`, `frac2` uses
//! `[c_in, c_out, 2, .., 2]`. Kernel taps are enumerated row-major, so the
//! flat tap index maps to per-axis offsets the same way tensor indices do.

use super::slab::{gather_axpy, scatter_axpy, strided_dot};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-axis offsets of kernel tap `k` for a `ksize^rank` kernel, minus `center`.
fn tap_delta(k: usize, rank: usize, ksize: usize, center: isize) -> Vec<isize> {
    let mut d = vec![0isize; rank];
    let mut rem = k;
    for a in (0..rank).rev() {
        d[a] = (rem % ksize) as isize - center;
        rem /= ksize;
    }
    d
}

fn check_conv3_shapes<E: Scalar>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
) -> Result<(usize, usize, usize)> {
    let rank = input.shape().len() - 1;
    let c_in = input.shape()[0];
    if weight.shape().len() != rank + 2 {
        return Err(Error::shape_mismatch(
            "conv3 weight",
            &[0, c_in],
            weight.shape(),
        ));
    }
    let c_out = weight.shape()[0];
    let want: Vec<usize> = [c_out, c_in]
        .iter()
        .copied()
        .chain(std::iter::repeat(3).take(rank))
        .collect();
    if weight.shape() != want.as_slice() {
        return Err(Error::shape_mismatch("conv3 weight", &want, weight.shape()));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape_mismatch("conv3 bias", &[c_out], bias.shape()));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Config(format!("conv3 stride must be 1 or 2, got {stride}")));
    }
    if stride == 2 {
        for (axis, &e) in input.spatial().iter().enumerate() {
            if e % 2 != 0 {
                return Err(Error::NotDivisible {
                    context: "conv3 stride-2 input".into(),
                    axis,
                    extent: e,
                    divisor: 2,
                });
            }
        }
    }
    Ok((rank, c_in, c_out))
}

/// 3^r convolution, zero padding 1, stride 1 or 2.
pub fn conv3_forward<E: Scalar>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
) -> Result<Tensor<E>> {
    let (rank, c_in, c_out) = check_conv3_shapes(input, weight, bias, stride)?;
    let sshape = input.spatial().to_vec();
    let tshape: Vec<usize> = sshape.iter().map(|&e| e / stride).collect();
    let mut out_shape = vec![c_out];
    out_shape.extend_from_slice(&tshape);
    let mut out = Tensor::zeros(&out_shape);
    let taps = 3usize.pow(rank as u32);
    for co in 0..c_out {
        let b = bias.data()[co];
        out.channel_mut(co).fill(b);
    }
    for co in 0..c_out {
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * taps;
            let in_ch = input.channel(ci);
            let out_ch = out.channel_mut(co);
            for k in 0..taps {
                let w = weight.data()[wbase + k];
                if w == E::zero() {
                    continue;
                }
                let d = tap_delta(k, rank, 3, 1);
                gather_axpy(out_ch, &tshape, &in_ch, &sshape, &d, stride, w);
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv3_forward`. `g_input` is skipped when `need_input` is
/// false (the network input is a constant pyramid, not a parameter).
pub fn conv3_backward<E: Scalar>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    g_out: &Tensor<E>,
    stride: usize,
    need_input: bool,
) -> Result<(Option<Tensor<E>>, Tensor<E>, Tensor<E>)> {
    let rank = input.shape().len() - 1;
    let c_in = input.shape()[0];
    let c_out = weight.shape()[0];
    let taps = 3usize.pow(rank as u32);
    let sshape = input.spatial().to_vec();
    let tshape = g_out.spatial().to_vec();
    let mut g_weight = Tensor::zeros(weight.shape());
    let mut g_bias = Tensor::zeros(&[c_out]);
    for co in 0..c_out {
        let g_ch = g_out.channel(co);
        let mut s = E::zero();
        for &g in g_ch {
            s = s + g;
        }
        g_bias.data_mut()[co] = s;
    }
    let mut g_input = if need_input {
        Some(Tensor::<E>::zeros(input.shape()))
    } else {
        None
    };
    for co in 0..c_out {
        let g_ch = g_out.channel(co);
        for ci in 0..c_in {
            let wbase = (co * c_in + ci) * taps;
            let in_ch = input.channel(ci);
            for k in 0..taps {
                let d = tap_delta(k, rank, 3, 1);
                g_weight.data_mut()[wbase + k] = g_weight.data_mut()[wbase + k]
                    + strided_dot(g_ch, &tshape, in_ch, &sshape, &d, stride);
            }
        }
        if let Some(gi) = g_input.as_mut() {
            for ci in 0..c_in {
                let wbase = (co * c_in + ci) * taps;
                let gi_ch = gi.channel_mut(ci);
                for k in 0..taps {
                    let w = weight.data()[wbase + k];
                    if w == E::zero() {
                        continue;
                    }
                    let d = tap_delta(k, rank, 3, 1);
                    scatter_axpy(gi_ch, &sshape, g_ch, &tshape, &d, stride, w);
                }
            }
        }
    }
    Ok((g_input, g_weight, g_bias))
}

fn check_frac2_shapes<E: Scalar>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<(usize, usize, usize)> {
    let rank = input.shape().len() - 1;
    let c_in = input.shape()[0];
    if weight.shape().len() != rank + 2 || weight.shape()[0] != c_in {
        return Err(Error::shape_mismatch(
            "frac2 weight",
            &[c_in, 0],
            weight.shape(),
        ));
    }
    let c_out = weight.shape()[1];
    let want: Vec<usize> = [c_in, c_out]
        .iter()
        .copied()
        .chain(std::iter::repeat(2).take(rank))
        .collect();
    if weight.shape() != want.as_slice() {
        return Err(Error::shape_mismatch("frac2 weight", &want, weight.shape()));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape_mismatch("frac2 bias", &[c_out], bias.shape()));
    }
    Ok((rank, c_in, c_out))
}

/// Fractional (transposed) convolution, kernel 2^r, stride 2: every input
/// voxel paints a 2^r output tile, doubling each spatial extent exactly.
pub fn frac2_forward<E: Scalar>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (rank, c_in, c_out) = check_frac2_shapes(input, weight, bias)?;
    let tshape = input.spatial().to_vec();
    let sshape: Vec<usize> = tshape.iter().map(|&e| e * 2).collect();
    let mut out_shape = vec![c_out];
    out_shape.extend_from_slice(&sshape);
    let mut out = Tensor::zeros(&out_shape);
    let taps = 1usize << rank;
    for co in 0..c_out {
        let b = bias.data()[co];
        out.channel_mut(co).fill(b);
    }
    for ci in 0..c_in {
        let in_ch = input.channel(ci);
        for co in 0..c_out {
            let wbase = (ci * c_out + co) * taps;
            let out_ch = out.channel_mut(co);
            for k in 0..taps {
                let w = weight.data()[wbase + k];
                if w == E::zero() {
                    continue;
                }
                let d = tap_delta(k, rank, 2, 0);
                scatter_axpy(out_ch, &sshape, in_ch, &tshape, &d, 2, w);
            }
        }
    }
    Ok(out)
}

/// Gradients of `frac2_forward`.
pub fn frac2_backward<E: Scalar>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    g_out: &Tensor<E>,
    need_input: bool,
) -> Result<(Option<Tensor<E>>, Tensor<E>, Tensor<E>)> {
    let rank = input.shape().len() - 1;
    let c_in = input.shape()[0];
    let c_out = weight.shape()[1];
    let taps = 1usize << rank;
    let tshape = input.spatial().to_vec();
    let sshape = g_out.spatial().to_vec();
    let mut g_weight = Tensor::zeros(weight.shape());
    let mut g_bias = Tensor::zeros(&[c_out]);
    for co in 0..c_out {
        let mut s = E::zero();
        for &g in g_out.channel(co) {
            s = s + g;
        }
        g_bias.data_mut()[co] = s;
    }
    let mut g_input = if need_input {
        Some(Tensor::<E>::zeros(input.shape()))
    } else {
        None
    };
    for ci in 0..c_in {
        let in_ch = input.channel(ci);
        for co in 0..c_out {
            let wbase = (ci * c_out + co) * taps;
            let g_ch = g_out.channel(co);
            for k in 0..taps {
                let d = tap_delta(k, rank, 2, 0);
                g_weight.data_mut()[wbase + k] = g_weight.data_mut()[wbase + k]
                    + strided_dot(in_ch, &tshape, g_ch, &sshape, &d, 2);
            }
            if let Some(gi) = g_input.as_mut() {
                let gi_ch = gi.channel_mut(ci);
                for k in 0..taps {
                    let w = weight.data()[wbase + k];
                    if w == E::zero() {
                        continue;
                    }
                    let d = tap_delta(k, rank, 2, 0);
                    gather_axpy(gi_ch, &tshape, g_ch, &sshape, &d, 2, w);
                }
            }
        }
    }
    Ok((g_input, g_weight, g_bias))
}
