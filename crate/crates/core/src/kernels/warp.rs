//! Pull-warp resampling: `out[c, x] = image[c, x + u(x)]` with multilinear
//! interpolation and clamp-to-border sampling.
//!
//! Displacements are in voxel units, one channel per spatial axis in axis
//! order. Sample coordinates are clamped to `[0, e-1]`; the base corner is
//! `min(floor(c), e-2)` so the interpolation cell always lies inside the
//! volume. Where the raw coordinate was clamped, the derivative with respect
//! to the displacement is zero (the sample no longer moves with it).
//!
//! A zero displacement reproduces the input bit for bit: the fractional parts
//! are exactly 0, so the weight of the base corner is exactly 1 and every
//! other corner weight multiplies to exactly 0.

use crate::error::{Error, Result};
use crate::tensor::{cast, strides, Scalar, Tensor};

fn check_warp_shapes<E: Scalar>(image: &Tensor<E>, disp: &Tensor<E>) -> Result<usize> {
    let rank = image.spatial().len();
    if disp.channels() != rank || disp.spatial() != image.spatial() {
        let mut want = vec![rank];
        want.extend_from_slice(image.spatial());
        return Err(Error::shape_mismatch("warp displacement", &want, disp.shape()));
    }
    Ok(rank)
}

struct SamplePoint {
    /// flat offset of the base corner within a channel
    base: usize,
    /// fractional coordinate per axis
    frac: [f64; 3],
    /// per-axis flat stride within a channel
    step: [usize; 3],
    /// false where the raw coordinate fell outside [0, e-1] or the axis is degenerate
    active: [bool; 3],
}

fn sample_point<E: Scalar>(
    disp: &Tensor<E>,
    spatial: &[usize],
    st: &[usize],
    idx: &[usize],
    flat: usize,
) -> SamplePoint {
    let rank = spatial.len();
    let mut p = SamplePoint {
        base: 0,
        frac: [0.0; 3],
        step: [0; 3],
        active: [false; 3],
    };
    for a in 0..rank {
        let e = spatial[a];
        let raw = idx[a] as f64 + disp.channel(a)[flat].to_f64().unwrap_or(f64::NAN);
        let hi = (e - 1) as f64;
        let c = raw.clamp(0.0, hi);
        let (i0, f, active) = if e == 1 {
            (0usize, 0.0, false)
        } else {
            let i0 = (c.floor() as usize).min(e - 2);
            (i0, c - i0 as f64, raw >= 0.0 && raw <= hi)
        };
        p.base += i0 * st[a];
        p.frac[a] = f;
        p.step[a] = st[a];
        p.active[a] = active;
    }
    p
}

/// Resample every channel of `image` at `x + disp(x)`.
pub fn warp_forward<E: Scalar>(image: &Tensor<E>, disp: &Tensor<E>) -> Result<Tensor<E>> {
    let rank = check_warp_shapes(image, disp)?;
    let spatial = image.spatial().to_vec();
    let st = strides(&spatial);
    let channels = image.channels();
    let n = image.channel_len();
    let corners = 1usize << rank;
    let mut out = Tensor::zeros(image.shape());
    let mut idx = vec![0usize; rank];
    for flat in 0..n {
        let p = sample_point(disp, &spatial, &st, &idx, flat);
        if p.frac[..rank].iter().all(|&f| f == 0.0 || f == 1.0) {
            // one corner carries weight exactly 1: copy, preserving bits
            let mut off = p.base;
            for a in 0..rank {
                if p.frac[a] == 1.0 {
                    off += p.step[a];
                }
            }
            for c in 0..channels {
                out.channel_mut(c)[flat] = image.channel(c)[off];
            }
        } else {
            for corner in 0..corners {
                let mut w = 1.0f64;
                let mut off = p.base;
                for a in 0..rank {
                    if corner >> (rank - 1 - a) & 1 == 1 {
                        w *= p.frac[a];
                        off += p.step[a];
                    } else {
                        w *= 1.0 - p.frac[a];
                    }
                }
                if w == 0.0 {
                    continue;
                }
                let we = cast::<E>(w);
                for c in 0..channels {
                    let o = &mut out.channel_mut(c)[flat];
                    *o = *o + we * image.channel(c)[off];
                }
            }
        }
        let mut a = rank;
        loop {
            if a == 0 {
                break;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < spatial[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(out)
}

/// Gradients of `warp_forward` with respect to the image and the displacement.
pub fn warp_backward<E: Scalar>(
    image: &Tensor<E>,
    disp: &Tensor<E>,
    g_out: &Tensor<E>,
    need_image: bool,
    need_disp: bool,
) -> Result<(Option<Tensor<E>>, Option<Tensor<E>>)> {
    let rank = check_warp_shapes(image, disp)?;
    let spatial = image.spatial().to_vec();
    let st = strides(&spatial);
    let channels = image.channels();
    let n = image.channel_len();
    let corners = 1usize << rank;
    let mut g_image = need_image.then(|| Tensor::<E>::zeros(image.shape()));
    let mut g_disp = need_disp.then(|| Tensor::<E>::zeros(disp.shape()));
    let mut idx = vec![0usize; rank];
    for flat in 0..n {
        let p = sample_point(disp, &spatial, &st, &idx, flat);
        for corner in 0..corners {
            let mut w = 1.0f64;
            let mut off = p.base;
            for a in 0..rank {
                if corner >> (rank - 1 - a) & 1 == 1 {
                    w *= p.frac[a];
                    off += p.step[a];
                } else {
                    w *= 1.0 - p.frac[a];
                }
            }
            if let Some(gi) = g_image.as_mut() {
                if w != 0.0 {
                    let we = cast::<E>(w);
                    for c in 0..channels {
                        let slot = &mut gi.channel_mut(c)[off];
                        *slot = *slot + we * g_out.channel(c)[flat];
                    }
                }
            }
            if let Some(gd) = g_disp.as_mut() {
                for a in 0..rank {
                    if !p.active[a] {
                        continue;
                    }
                    // d(weight)/d(frac_a): product of the other factors, signed
                    let mut dw = 1.0f64;
                    for b in 0..rank {
                        if b == a {
                            continue;
                        }
                        if corner >> (rank - 1 - b) & 1 == 1 {
                            dw *= p.frac[b];
                        } else {
                            dw *= 1.0 - p.frac[b];
                        }
                    }
                    if corner >> (rank - 1 - a) & 1 == 0 {
                        dw = -dw;
                    }
                    if dw == 0.0 {
                        continue;
                    }
                    let dwe = cast::<E>(dw);
                    let mut acc = E::zero();
                    for c in 0..channels {
                        acc = acc + g_out.channel(c)[flat] * image.channel(c)[off];
                    }
                    let slot = &mut gd.channel_mut(a)[flat];
                    *slot = *slot + dwe * acc;
                }
            }
        }
        let mut a = rank;
        loop {
            if a == 0 {
                break;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < spatial[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok((g_image, g_disp))
}

/// Warp an integer label map with nearest-neighbour sampling: each output
/// voxel copies the label at `round(clamp(x + u(x)))`, rounding half up.
pub fn warp_labels_nearest<E: Scalar>(labels: &[u16], disp: &Tensor<E>) -> Result<Vec<u16>> {
    let spatial = disp.spatial().to_vec();
    let n: usize = spatial.iter().product();
    if labels.len() != n {
        return Err(Error::shape_mismatch("label map", &[n], &[labels.len()]));
    }
    let rank = spatial.len();
    let st = strides(&spatial);
    let mut out = vec![0u16; n];
    let mut idx = vec![0usize; rank];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut src = 0usize;
        for a in 0..rank {
            let e = spatial[a];
            let raw = idx[a] as f64 + disp.channel(a)[flat].to_f64().unwrap_or(0.0);
            let c = raw.clamp(0.0, (e - 1) as f64);
            let i = (c + 0.5).floor() as usize;
            src += i.min(e - 1) * st[a];
        }
        *slot = labels[src];
        let mut a = rank;
        loop {
            if a == 0 {
                break;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < spatial[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(out)
}
