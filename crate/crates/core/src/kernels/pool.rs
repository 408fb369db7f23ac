//! Non-overlapping min/avg/max pooling with window == stride.
//!
//! Windows tile the input exactly (extents must divide by the window), so
//! every input voxel belongs to one window. For min and max the forward pass
//! records which voxel won; ties go to the first window element in row-major
//! order, and the backward pass routes the whole gradient there. Average
//! pooling spreads the gradient uniformly.

use crate::error::{Error, Result};
use crate::tensor::{strides, Scalar, Tensor};

/// Pooling reduction applied per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolMode {
    Min,
    Avg,
    Max,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Min => "min",
            PoolMode::Avg => "avg",
            PoolMode::Max => "max",
        }
    }
}

impl std::str::FromStr for PoolMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(PoolMode::Min),
            "avg" => Ok(PoolMode::Avg),
            "max" => Ok(PoolMode::Max),
            other => Err(Error::Config(format!(
                "unknown pool mode {other:?}, expected min|avg|max"
            ))),
        }
    }
}

/// Flat in-channel offsets of the window voxels for output position zero,
/// in row-major window order.
fn window_offsets(spatial: &[usize], window: usize) -> Vec<usize> {
    let st = strides(spatial);
    let rank = spatial.len();
    let count = window.pow(rank as u32);
    let mut offs = Vec::with_capacity(count);
    let mut idx = vec![0usize; rank];
    loop {
        offs.push(idx.iter().zip(&st).map(|(i, s)| i * s).sum());
        let mut a = rank;
        loop {
            if a == 0 {
                return offs;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < window {
                break;
            }
            idx[a] = 0;
        }
    }
}

fn check_window<E: Scalar>(input: &Tensor<E>, window: usize) -> Result<()> {
    if window == 0 {
        return Err(Error::Config("pool window must be positive".into()));
    }
    for (axis, &e) in input.spatial().iter().enumerate() {
        if e % window != 0 {
            return Err(Error::NotDivisible {
                context: "pool input".into(),
                axis,
                extent: e,
                divisor: window,
            });
        }
    }
    Ok(())
}

/// Pool each channel with a `window^rank` window and equal stride.
/// For min/max the returned vector holds, per output voxel, the in-channel
/// flat index of the winning input voxel; it is empty for avg.
pub fn pool_forward<E: Scalar>(
    input: &Tensor<E>,
    mode: PoolMode,
    window: usize,
) -> Result<(Tensor<E>, Vec<u32>)> {
    check_window(input, window)?;
    let spatial = input.spatial().to_vec();
    let channels = input.channels();
    let out_spatial: Vec<usize> = spatial.iter().map(|&e| e / window).collect();
    let mut out_shape = vec![channels];
    out_shape.extend_from_slice(&out_spatial);
    let mut out = Tensor::zeros(&out_shape);
    let offs = window_offsets(&spatial, window);
    let in_st = strides(&spatial);
    let rank = spatial.len();
    let out_len: usize = out_spatial.iter().product();
    let inv = crate::tensor::cast::<E>(1.0 / offs.len() as f64);
    let mut winners = if mode == PoolMode::Avg {
        Vec::new()
    } else {
        vec![0u32; channels * out_len]
    };
    for c in 0..channels {
        let in_ch = input.channel(c);
        let out_ch = out.channel_mut(c);
        let mut oidx = vec![0usize; rank];
        for q in 0..out_len {
            let base: usize = oidx
                .iter()
                .zip(&in_st)
                .map(|(i, s)| i * window * s)
                .sum();
            match mode {
                PoolMode::Avg => {
                    let mut s = E::zero();
                    for &o in &offs {
                        s = s + in_ch[base + o];
                    }
                    out_ch[q] = s * inv;
                }
                PoolMode::Max => {
                    let mut best = in_ch[base + offs[0]];
                    let mut arg = base + offs[0];
                    for &o in &offs[1..] {
                        let v = in_ch[base + o];
                        if v > best {
                            best = v;
                            arg = base + o;
                        }
                    }
                    out_ch[q] = best;
                    winners[c * out_len + q] = arg as u32;
                }
                PoolMode::Min => {
                    let mut best = in_ch[base + offs[0]];
                    let mut arg = base + offs[0];
                    for &o in &offs[1..] {
                        let v = in_ch[base + o];
                        if v < best {
                            best = v;
                            arg = base + o;
                        }
                    }
                    out_ch[q] = best;
                    winners[c * out_len + q] = arg as u32;
                }
            }
            let mut a = rank;
            loop {
                if a == 0 {
                    break;
                }
                a -= 1;
                oidx[a] += 1;
                if oidx[a] < out_spatial[a] {
                    break;
                }
                oidx[a] = 0;
            }
        }
    }
    Ok((out, winners))
}

/// Gradient of `pool_forward` with respect to the input.
pub fn pool_backward<E: Scalar>(
    input_shape: &[usize],
    mode: PoolMode,
    window: usize,
    winners: &[u32],
    g_out: &Tensor<E>,
) -> Tensor<E> {
    let mut g_in = Tensor::zeros(input_shape);
    let spatial = &input_shape[1..];
    let channels = input_shape[0];
    let out_len = g_out.channel_len();
    match mode {
        PoolMode::Avg => {
            let offs = window_offsets(spatial, window);
            let in_st = strides(spatial);
            let rank = spatial.len();
            let out_spatial = g_out.spatial().to_vec();
            let inv = crate::tensor::cast::<E>(1.0 / offs.len() as f64);
            for c in 0..channels {
                let g_ch = g_out.channel(c);
                let gi_ch = g_in.channel_mut(c);
                let mut oidx = vec![0usize; rank];
                for q in 0..out_len {
                    let base: usize = oidx
                        .iter()
                        .zip(&in_st)
                        .map(|(i, s)| i * window * s)
                        .sum();
                    let g = g_ch[q] * inv;
                    for &o in &offs {
                        gi_ch[base + o] = gi_ch[base + o] + g;
                    }
                    let mut a = rank;
                    loop {
                        if a == 0 {
                            break;
                        }
                        a -= 1;
                        oidx[a] += 1;
                        if oidx[a] < out_spatial[a] {
                            break;
                        }
                        oidx[a] = 0;
                    }
                }
            }
        }
        PoolMode::Min | PoolMode::Max => {
            for c in 0..channels {
                let g_ch = g_out.channel(c);
                let gi_ch = g_in.channel_mut(c);
                for q in 0..out_len {
                    let w = winners[c * out_len + q] as usize;
                    gi_ch[w] = gi_ch[w] + g_ch[q];
                }
            }
        }
    }
    g_in
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
    fn pool_2x2_window_values() {
        // single window [1,2;3,4]: max 4, min 1, avg 2.5
        let input = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (mx, _) = pool_forward(&input, PoolMode::Max, 2).unwrap();
        let (mn, _) = pool_forward(&input, PoolMode::Min, 2).unwrap();
        let (av, _) = pool_forward(&input, PoolMode::Avg, 2).unwrap();
        assert_eq!(mx.data(), &[4.0]);
        assert_eq!(mn.data(), &[1.0]);
        assert_eq!(av.data(), &[2.5]);
    }

    #[test]
    fn pool_tie_takes_first_row_major() {
        let input = t(&[1, 2, 2], &[7.0, 7.0, 7.0, 7.0]);
        let (_, win) = pool_forward(&input, PoolMode::Max, 2).unwrap();
        assert_eq!(win, vec![0]);
        let (_, win) = pool_forward(&input, PoolMode::Min, 2).unwrap();
        assert_eq!(win, vec![0]);
    }

    #[test]
    fn pool_shapes_and_layout() {
        // 4x4 input, window 2: four windows in row-major output order
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let input = t(&[1, 4, 4], &data);
        let (mx, win) = pool_forward(&input, PoolMode::Max, 2).unwrap();
        assert_eq!(mx.shape(), &[1, 2, 2]);
        assert_eq!(mx.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(win, vec![5, 7, 13, 15]);
    }

    #[test]
    fn pool_window4_multichannel() {
        let mut data = vec![0.0f64; 2 * 16];
        data[3] = 9.0; // channel 0
        data[16] = -5.0; // channel 1
        let input = t(&[2, 4, 4], &data);
        let (mx, _) = pool_forward(&input, PoolMode::Max, 4).unwrap();
        assert_eq!(mx.shape(), &[2, 1, 1]);
        assert_eq!(mx.data(), &[9.0, 0.0]);
        let (mn, _) = pool_forward(&input, PoolMode::Min, 4).unwrap();
        assert_eq!(mn.data(), &[0.0, -5.0]);
    }

    #[test]
    fn pool_rejects_non_divisible() {
        let input = t(&[1, 3, 4], &[0.0; 12]);
        assert!(pool_forward(&input, PoolMode::Max, 2).is_err());
    }

    #[test]
    fn pool_backward_routes_gradients() {
        let input = t(&[1, 2, 2], &[1.0, 9.0, 3.0, 4.0]);
        let (_, win) = pool_forward(&input, PoolMode::Max, 2).unwrap();
        let g_out = t(&[1, 1, 1], &[2.0]);
        let gi = pool_backward(&[1, 2, 2], PoolMode::Max, 2, &win, &g_out);
        assert_eq!(gi.data(), &[0.0, 2.0, 0.0, 0.0]);
        let gi = pool_backward(&[1, 2, 2], PoolMode::Avg, 2, &[], &g_out);
        assert_eq!(gi.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn pool_3d_window2() {
        let data: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let input = t(&[1, 2, 2, 2], &data);
        let (mx, win) = pool_forward(&input, PoolMode::Max, 2).unwrap();
        assert_eq!(mx.shape(), &[1, 1, 1, 1]);
        assert_eq!(mx.data(), &[7.0]);
        assert_eq!(win, vec![7]);
    }
}
