//! Parameter-free multi-scale pooling features that stand in for a learnable
//! encoder: the two input images are pooled with min, avg and max at windows
//! 2, 4 and 8, giving feature maps at 1/2, 1/4 and 1/8 resolution.

use crate::error::{Error, Result};
use crate::kernels::{pool_forward, PoolMode};
use crate::tensor::{Scalar, Tensor};

/// All pooling modes in the fixed channel order used throughout.
pub const ALL_MODES: [PoolMode; 3] = [PoolMode::Min, PoolMode::Avg, PoolMode::Max];

/// All pyramid windows, coarse levels listed fine to coarse.
pub const ALL_WINDOWS: [usize; 3] = [2, 4, 8];

/// Pooled feature stack per resolution level. With every mode enabled each
/// level holds six channels ordered `[min_M, min_F, avg_M, avg_F, max_M,
/// max_F]`; with a subset of modes the absent pairs are dropped, keeping the
/// relative order. Levels or the original pair that were not requested are
/// `None`, and the decoder skips their concatenation.
#[derive(Debug, Clone)]
pub struct PoolingPyramid<E: Scalar> {
    /// window 2 features at 1/2 resolution
    pub level_half: Option<Tensor<E>>,
    /// window 4 features at 1/4 resolution
    pub level_quarter: Option<Tensor<E>>,
    /// window 8 features at 1/8 resolution
    pub level_eighth: Option<Tensor<E>>,
    /// the untouched 2-channel input pair
    pub original: Option<Tensor<E>>,
}

impl<E: Scalar> PoolingPyramid<E> {
    pub fn level(&self, window: usize) -> Option<&Tensor<E>> {
        match window {
            2 => self.level_half.as_ref(),
            4 => self.level_quarter.as_ref(),
            8 => self.level_eighth.as_ref(),
            _ => None,
        }
    }
}

fn pool_level<E: Scalar>(
    pair: &Tensor<E>,
    modes: &[PoolMode],
    window: usize,
) -> Result<Tensor<E>> {
    let spatial: Vec<usize> = pair.spatial().iter().map(|&e| e / window).collect();
    let mut shape = vec![2 * modes.len()];
    shape.extend_from_slice(&spatial);
    let mut out = Tensor::zeros(&shape);
    for (mi, &mode) in modes.iter().enumerate() {
        let (pooled, _) = pool_forward(pair, mode, window)?;
        for image in 0..2 {
            out.channel_mut(2 * mi + image)
                .copy_from_slice(pooled.channel(image));
        }
    }
    Ok(out)
}

/// Normalised, deduplicated mode list in the fixed channel order.
fn normalize_modes(modes: &[PoolMode]) -> Result<Vec<PoolMode>> {
    let out: Vec<PoolMode> = ALL_MODES
        .iter()
        .copied()
        .filter(|m| modes.contains(m))
        .collect();
    if out.is_empty() {
        return Err(Error::Config("at least one pooling mode required".into()));
    }
    Ok(out)
}

/// Build the pooling feature pyramid of a 2-channel moving/fixed pair.
/// `windows` selects the levels (by pooling window, from {2,4,8}); `modes`
/// selects the reductions. Every spatial extent must divide by 8 so all
/// levels stay aligned with the decoder, whichever subset is enabled.
pub fn build_pyramid<E: Scalar>(
    pair: &Tensor<E>,
    modes: &[PoolMode],
    windows: &[usize],
    include_original: bool,
) -> Result<PoolingPyramid<E>> {
    if pair.channels() != 2 {
        return Err(Error::shape_mismatch("pyramid input pair", &[2], &[pair.channels()]));
    }
    for (axis, &e) in pair.spatial().iter().enumerate() {
        if e % 8 != 0 {
            return Err(Error::NotDivisible {
                context: "pyramid input".into(),
                axis,
                extent: e,
                divisor: 8,
            });
        }
    }
    for &w in windows {
        if !ALL_WINDOWS.contains(&w) {
            return Err(Error::Config(format!(
                "pyramid window must be one of 2,4,8, got {w}"
            )));
        }
    }
    let modes = normalize_modes(modes)?;
    let mut levels = [None, None, None];
    for (i, &w) in ALL_WINDOWS.iter().enumerate() {
        if windows.contains(&w) {
            levels[i] = Some(pool_level(pair, &modes, w)?);
        }
    }
    let [half, quarter, eighth] = levels;
    Ok(PoolingPyramid {
        level_half: half,
        level_quarter: quarter,
        level_eighth: eighth,
        original: include_original.then(|| pair.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full<E: Scalar>(pair: &Tensor<E>) -> PoolingPyramid<E> {
        build_pyramid(pair, &ALL_MODES, &ALL_WINDOWS, true).unwrap()
    }

    #[test]
    fn constant_pair_stays_constant_at_all_levels() {
        let pair = Tensor::full(&[2, 8, 8], 0.75f64);
        let p = full(&pair);
        for level in [&p.level_half, &p.level_quarter, &p.level_eighth] {
            let t = level.as_ref().unwrap();
            assert_eq!(t.channels(), 6);
            for &v in t.data() {
                assert_eq!(v, 0.75);
            }
        }
    }

    #[test]
    fn level_shapes_for_8x8_input() {
        let pair = Tensor::<f32>::zeros(&[2, 8, 8]);
        let p = full(&pair);
        assert_eq!(p.level_half.as_ref().unwrap().shape(), &[6, 4, 4]);
        assert_eq!(p.level_quarter.as_ref().unwrap().shape(), &[6, 2, 2]);
        assert_eq!(p.level_eighth.as_ref().unwrap().shape(), &[6, 1, 1]);
        assert_eq!(p.original.as_ref().unwrap().shape(), &[2, 8, 8]);
    }

    #[test]
    fn channel_order_on_8x8() {
        let mut pair = Tensor::<f64>::zeros(&[2, 8, 8]);
        for (i, v) in pair.channel_mut(0).iter_mut().enumerate() {
            *v = i as f64;
        }
        for (i, v) in pair.channel_mut(1).iter_mut().enumerate() {
            *v = 1000.0 + i as f64;
        }
        let p = full(&pair);
        let h = p.level_half.unwrap();
        // first window of moving channel: values {0,1,8,9}
        assert_eq!(h.channel(0)[0], 0.0); // min_M
        assert_eq!(h.channel(1)[0], 1000.0); // min_F
        assert_eq!(h.channel(2)[0], 4.5); // avg_M
        assert_eq!(h.channel(3)[0], 1004.5); // avg_F
        assert_eq!(h.channel(4)[0], 9.0); // max_M
        assert_eq!(h.channel(5)[0], 1009.0); // max_F
    }

    #[test]
    fn quarter_level_equals_repooling_half_level() {
        let mut pair = Tensor::<f64>::zeros(&[2, 16, 16]);
        for (i, v) in pair.data_mut().iter_mut().enumerate() {
            *v = ((i as f64 * 0.7311).sin() * 10.0).round() / 10.0;
        }
        let p = full(&pair);
        let half = p.level_half.unwrap();
        let quarter = p.level_quarter.unwrap();
        for (mi, &mode) in ALL_MODES.iter().enumerate() {
            for image in 0..2 {
                let c = 2 * mi + image;
                let mut single = Tensor::<f64>::zeros(&[1, 8, 8]);
                single.data_mut().copy_from_slice(half.channel(c));
                let (re, _) = pool_forward(&single, mode, 2).unwrap();
                if mode == PoolMode::Avg {
                    // same value as reals; summation order differs in floats
                    for (a, b) in re.data().iter().zip(quarter.channel(c)) {
                        assert!((a - b).abs() < 1e-12, "avg image {image}");
                    }
                } else {
                    assert_eq!(re.data(), quarter.channel(c), "mode {mode:?} image {image}");
                }
            }
        }
    }

    #[test]
    fn swapping_images_swaps_per_image_channels() {
        let mut pair = Tensor::<f64>::zeros(&[2, 8, 8]);
        for (i, v) in pair.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 1.37).cos();
        }
        let mut swapped = Tensor::<f64>::zeros(&[2, 8, 8]);
        let moving = pair.channel(0).to_vec();
        let fixed = pair.channel(1).to_vec();
        swapped.channel_mut(0).copy_from_slice(&fixed);
        swapped.channel_mut(1).copy_from_slice(&moving);
        let p = full(&pair);
        let q = full(&swapped);
        for (a, b) in [
            (&p.level_half, &q.level_half),
            (&p.level_quarter, &q.level_quarter),
            (&p.level_eighth, &q.level_eighth),
        ] {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            for mi in 0..3 {
                assert_eq!(a.channel(2 * mi), b.channel(2 * mi + 1));
                assert_eq!(a.channel(2 * mi + 1), b.channel(2 * mi));
            }
        }
    }

    #[test]
    fn disabled_levels_are_absent() {
        let pair = Tensor::<f32>::zeros(&[2, 16, 16]);
        let p = build_pyramid(&pair, &[PoolMode::Max], &[8], false).unwrap();
        assert!(p.level_half.is_none());
        assert!(p.level_quarter.is_none());
        assert!(p.original.is_none());
        let e = p.level_eighth.unwrap();
        assert_eq!(e.shape(), &[2, 2, 2]);
    }

    #[test]
    fn element_count_with_everything_enabled() {
        // 6 * (1/4 + 1/16 + 1/64) * |S| in 2d
        let pair = Tensor::<f32>::zeros(&[2, 16, 24]);
        let s: usize = 16 * 24;
        let p = full(&pair);
        let total = p.level_half.as_ref().unwrap().len()
            + p.level_quarter.as_ref().unwrap().len()
            + p.level_eighth.as_ref().unwrap().len();
        assert_eq!(total, 6 * (s / 4 + s / 16 + s / 64));
    }

    #[test]
    fn rejects_extent_not_divisible_by_8() {
        let pair = Tensor::<f32>::zeros(&[2, 12, 8]);
        assert!(build_pyramid(&pair, &ALL_MODES, &ALL_WINDOWS, false).is_err());
    }

    #[test]
    fn mode_order_is_canonical_regardless_of_request_order() {
        let mut pair = Tensor::<f64>::zeros(&[2, 8, 8]);
        for (i, v) in pair.data_mut().iter_mut().enumerate() {
            *v = (i % 13) as f64;
        }
        let a = build_pyramid(&pair, &[PoolMode::Max, PoolMode::Min], &[2], false).unwrap();
        let b = build_pyramid(&pair, &[PoolMode::Min, PoolMode::Max], &[2], false).unwrap();
        let (a, b) = (a.level_half.unwrap(), b.level_half.unwrap());
        assert_eq!(a.shape(), &[4, 4, 4]);
        assert_eq!(a.data(), b.data());
    }
}
