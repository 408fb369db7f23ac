//! The main registration network: a four-block convolutional decoder that
//! maps the pooling pyramid to a dense full-resolution field. There is no
//! learnable encoder; the pyramid supplies all multi-scale features.
//!
//! Block widths are [4C, 3C, 2C, C] coarse to fine. Block 1 convolves the
//! 1/8-resolution features; each later block upsamples with a fractional
//! convolution, concatenates the matching pyramid level (block 4: the
//! original pair), and convolves. Every layer is followed by LeakyReLU(0.01)
//! except the final output convolution, which applies SoftSign and a
//! per-axis scale converting the (-1,1) output to voxel units.

use crate::error::{Error, Result};
use crate::kernels::PoolMode;
use crate::params::{init_from_table, LayerKind, LayerSpec, ParameterSet};
use crate::pyramid::{build_pyramid, PoolingPyramid, ALL_MODES, ALL_WINDOWS};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Decoder hyperparameters plus the pyramid switches the decoder's layer
/// widths depend on.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// spatial rank: 2 or 3
    pub rank: usize,
    /// width multiplier C
    pub channels: usize,
    /// convolutions per block (1 matches the four-block description; the
    /// profiler makes deeper variants auditable)
    pub convs_per_block: usize,
    /// predict a stationary velocity field and exponentiate it
    pub diffeomorphic: bool,
    /// per-axis factors from SoftSign units to voxels; `None` resolves to
    /// (extent-1)/2 per axis at forward time, giving full-image reach
    pub displacement_scale: Option<Vec<f64>>,
    pub pool_modes: Vec<PoolMode>,
    /// enabled pyramid levels by pooling window; must contain 8
    pub pool_windows: Vec<usize>,
    pub include_original: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rank: 2,
            channels: 8,
            convs_per_block: 1,
            diffeomorphic: false,
            displacement_scale: None,
            pool_modes: ALL_MODES.to_vec(),
            pool_windows: ALL_WINDOWS.to_vec(),
            include_original: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::Config(format!("rank must be 2 or 3, got {}", self.rank)));
        }
        if self.channels == 0 {
            return Err(Error::Config("channel multiplier must be positive".into()));
        }
        if self.convs_per_block == 0 {
            return Err(Error::Config("convs_per_block must be positive".into()));
        }
        if self.pool_modes.is_empty() {
            return Err(Error::Config("at least one pooling mode required".into()));
        }
        for &w in &self.pool_windows {
            if !ALL_WINDOWS.contains(&w) {
                return Err(Error::Config(format!("invalid pooling window {w}")));
            }
        }
        if !self.pool_windows.contains(&8) {
            return Err(Error::Config(
                "the window-8 pyramid level feeds block 1 and cannot be disabled".into(),
            ));
        }
        if let Some(scale) = &self.displacement_scale {
            if scale.len() != self.rank {
                return Err(Error::shape_mismatch(
                    "displacement_scale",
                    &[self.rank],
                    &[scale.len()],
                ));
            }
            if scale.iter().any(|&s| !(s > 0.0)) {
                return Err(Error::Config("displacement_scale must be positive".into()));
            }
        }
        Ok(())
    }

    /// Channels contributed by one pyramid level (0 when disabled).
    fn feat_channels(&self, window: usize) -> usize {
        if self.pool_windows.contains(&window) {
            2 * ALL_MODES
                .iter()
                .filter(|m| self.pool_modes.contains(m))
                .count()
        } else {
            0
        }
    }

    fn scale_for(&self, spatial: &[usize]) -> Vec<f64> {
        match &self.displacement_scale {
            Some(s) => s.clone(),
            None => spatial.iter().map(|&e| (e as f64 - 1.0) / 2.0).collect(),
        }
    }
}

/// Decoder-only registration network.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub cfg: ModelConfig,
}

/// A parameter's tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct TapedLayer {
    pub name: String,
    pub weight: NodeId,
    pub bias: NodeId,
    pub trainable: bool,
}

impl DecoderNet {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DecoderNet { cfg })
    }

    /// The layer table: one row per learnable layer in forward order.
    pub fn layer_table(&self) -> Vec<LayerSpec> {
        let cfg = &self.cfg;
        let rank = cfg.rank as u32;
        let c = cfg.channels;
        let widths = [4 * c, 3 * c, 2 * c, c];
        // pyramid channels concatenated at each block input
        let extra = [
            cfg.feat_channels(8),
            cfg.feat_channels(4),
            cfg.feat_channels(2),
            if cfg.include_original { 2 } else { 0 },
        ];
        let dens: [usize; 4] = [
            8usize.pow(rank),
            4usize.pow(rank),
            2usize.pow(rank),
            1,
        ];
        let mut table = Vec::new();
        for block in 0..4 {
            let width = widths[block];
            if block > 0 {
                table.push(LayerSpec {
                    name: format!("decoder/block{}/up", block + 1),
                    kind: LayerKind::Frac2,
                    c_in: widths[block - 1],
                    c_out: width,
                    near_zero_init: false,
                    scale_denominator: dens[block - 1],
                });
            }
            for i in 0..cfg.convs_per_block {
                let c_in = if i == 0 {
                    if block == 0 {
                        extra[0]
                    } else {
                        width + extra[block]
                    }
                } else {
                    width
                };
                table.push(LayerSpec {
                    name: format!("decoder/block{}/conv{}", block + 1, i + 1),
                    kind: LayerKind::Conv3 { stride: 1 },
                    c_in,
                    c_out: width,
                    near_zero_init: false,
                    scale_denominator: dens[block],
                });
            }
        }
        table.push(LayerSpec {
            name: "output/conv".into(),
            kind: LayerKind::Conv3 { stride: 1 },
            c_in: c,
            c_out: cfg.rank,
            near_zero_init: true,
            scale_denominator: 1,
        });
        table
    }

    pub fn init_parameters<E: Scalar>(&self, seed: u64) -> Result<ParameterSet<E>> {
        init_from_table(&self.layer_table(), self.cfg.rank, seed)
    }

    pub fn count_parameters(&self) -> u64 {
        self.layer_table()
            .iter()
            .map(|l| l.parameter_count(self.cfg.rank))
            .sum()
    }

    pub fn count_mult_adds(&self, spatial: &[usize]) -> Result<u64> {
        if spatial.len() != self.cfg.rank {
            return Err(Error::shape_mismatch(
                "mult-adds spatial rank",
                &[self.cfg.rank],
                &[spatial.len()],
            ));
        }
        for (axis, &e) in spatial.iter().enumerate() {
            if e % 8 != 0 {
                return Err(Error::NotDivisible {
                    context: "mult-adds extents".into(),
                    axis,
                    extent: e,
                    divisor: 8,
                });
            }
        }
        Ok(self
            .layer_table()
            .iter()
            .map(|l| l.mult_adds(self.cfg.rank, spatial))
            .sum())
    }

    pub fn build_pyramid<E: Scalar>(&self, pair: &Tensor<E>) -> Result<PoolingPyramid<E>> {
        build_pyramid(
            pair,
            &self.cfg.pool_modes,
            &self.cfg.pool_windows,
            self.cfg.include_original,
        )
    }

    /// Record the forward pass on the tape. Returns the predicted field node
    /// (displacement, or velocity when diffeomorphic) and the tape handles of
    /// every parameter. The pyramid enters the tape as constants.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ParameterSet<E>,
        pair: &Tensor<E>,
    ) -> Result<(NodeId, Vec<TapedLayer>)> {
        let pyramid = self.build_pyramid(pair)?;
        let spatial = pair.spatial().to_vec();
        let table = self.layer_table();
        if params.len() != table.len() {
            return Err(Error::Config(format!(
                "parameter set has {} layers, model expects {}",
                params.len(),
                table.len()
            )));
        }
        let mut taped = Vec::with_capacity(table.len());
        let mut lookup = |tape: &mut Tape<E>, name: &str| -> Result<(NodeId, NodeId)> {
            let entry = params
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))?;
            let (w, b) = if entry.trainable {
                (tape.param(entry.weight.clone()), tape.param(entry.bias.clone()))
            } else {
                (
                    tape.constant(entry.weight.clone()),
                    tape.constant(entry.bias.clone()),
                )
            };
            taped.push(TapedLayer {
                name: name.to_string(),
                weight: w,
                bias: b,
                trainable: entry.trainable,
            });
            Ok((w, b))
        };

        let level = |window: usize| -> Result<&Tensor<E>> {
            pyramid.level(window).ok_or_else(|| {
                Error::Config(format!("pyramid level for window {window} is absent"))
            })
        };

        let cfg = &self.cfg;
        let n = cfg.convs_per_block;
        let eighth = tape.constant(level(8)?.clone());
        let mut x = eighth;
        for i in 0..n {
            let (w, b) = lookup(tape, &format!("decoder/block1/conv{}", i + 1))?;
            x = tape.conv3(x, w, b, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
        }
        for block in 2..=4usize {
            let (w, b) = lookup(tape, &format!("decoder/block{block}/up"))?;
            x = tape.frac2(x, w, b)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
            let concat_src: Option<Tensor<E>> = match block {
                2 => pyramid.level(4).cloned(),
                3 => pyramid.level(2).cloned(),
                _ => pyramid.original.clone(),
            };
            if let Some(feat) = concat_src {
                let f = tape.constant(feat);
                x = tape.concat(&[x, f])?;
            }
            for i in 0..n {
                let (w, b) = lookup(tape, &format!("decoder/block{block}/conv{}", i + 1))?;
                x = tape.conv3(x, w, b, 1)?;
                x = tape.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        let (w, b) = lookup(tape, "output/conv")?;
        x = tape.conv3(x, w, b, 1)?;
        x = tape.soft_sign(x);
        let field = tape.scale_channels(x, &cfg.scale_for(&spatial))?;
        Ok((field, taped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_2d(c: usize) -> ModelConfig {
        ModelConfig {
            channels: c,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn parameter_count_closed_form_2d() {
        // independently recomputed: per-layer weight+bias sums for C=4
        // b1 conv 6->16: 880; b2 up 780 conv 18->12: 1956; b3 up 392 conv
        // 14->8: 1016; b4 up 132 conv 6->4: 220; output 4->2: 74
        let net = DecoderNet::new(cfg_2d(4)).unwrap();
        assert_eq!(net.count_parameters(), 5450);
        // closed form 206 C^2 + 538 C + 2 for the full 2d pyramid, depth 1
        for c in [4u64, 6, 8, 12, 16] {
            let net = DecoderNet::new(cfg_2d(c as usize)).unwrap();
            assert_eq!(net.count_parameters(), 206 * c * c + 538 * c + 2, "C={c}");
        }
    }

    #[test]
    fn parameter_count_matches_parameter_set() {
        for rank in [2usize, 3] {
            for c in [4usize, 6, 8, 12, 16] {
                let net = DecoderNet::new(ModelConfig {
                    rank,
                    channels: c,
                    ..ModelConfig::default()
                })
                .unwrap();
                let params: ParameterSet<f32> = net.init_parameters(11).unwrap();
                assert_eq!(net.count_parameters(), params.scalar_count());
            }
        }
    }

    #[test]
    fn mult_adds_block1_and_total_2d_c4() {
        let net = DecoderNet::new(cfg_2d(4)).unwrap();
        let table = net.layer_table();
        let block1 = table
            .iter()
            .find(|l| l.name == "decoder/block1/conv1")
            .unwrap();
        // feature map 8x8, 16 output channels, 6 input channels, 3x3 kernel
        assert_eq!(block1.mult_adds(2, &[64, 64]), 8 * 8 * 16 * 6 * 9);
        assert_eq!(net.count_mult_adds(&[64, 64]).unwrap(), 3_043_328);
        // doubling each extent in 2d quadruples the count
        assert_eq!(net.count_mult_adds(&[128, 128]).unwrap(), 4 * 3_043_328);
    }

    #[test]
    fn forward_shape_and_softsign_range() {
        let net = DecoderNet::new(cfg_2d(4)).unwrap();
        let params: ParameterSet<f32> = net.init_parameters(5).unwrap();
        let mut pair = Tensor::<f32>::zeros(&[2, 16, 16]);
        for (i, v) in pair.data_mut().iter_mut().enumerate() {
            *v = ((i % 17) as f32) / 17.0;
        }
        let mut tape = Tape::new();
        let (field, taped) = net.forward(&mut tape, &params, &pair).unwrap();
        let f = tape.value(field);
        assert_eq!(f.shape(), &[2, 16, 16]);
        assert_eq!(taped.len(), net.layer_table().len());
        let scale = 7.5f32; // (16-1)/2
        for &v in f.data() {
            assert!(v.abs() < scale);
        }
    }

    #[test]
    fn initial_field_is_near_zero() {
        let net = DecoderNet::new(cfg_2d(8)).unwrap();
        let params: ParameterSet<f32> = net.init_parameters(123).unwrap();
        let mut pair = Tensor::<f32>::zeros(&[2, 32, 32]);
        for (i, v) in pair.data_mut().iter_mut().enumerate() {
            *v = ((i * 31 % 97) as f32) / 97.0;
        }
        let mut tape = Tape::new();
        let (field, _) = net.forward(&mut tape, &params, &pair).unwrap();
        assert!(tape.value(field).max_abs() < 0.01);
    }

    #[test]
    fn zero_parameters_give_zero_field() {
        let net = DecoderNet::new(cfg_2d(4)).unwrap();
        let mut params: ParameterSet<f32> = net.init_parameters(1).unwrap();
        for e in params.entries_mut() {
            for v in e.weight.data_mut() {
                *v = 0.0;
            }
            for v in e.bias.data_mut() {
                *v = 0.0;
            }
        }
        let mut pair = Tensor::<f32>::zeros(&[2, 16, 16]);
        pair.data_mut()[3] = 0.5;
        let mut tape = Tape::new();
        let (field, _) = net.forward(&mut tape, &params, &pair).unwrap();
        assert!(tape.value(field).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ablated_levels_shrink_conv_inputs_and_still_run() {
        let cfg = ModelConfig {
            channels: 4,
            pool_windows: vec![8],
            include_original: false,
            ..ModelConfig::default()
        };
        let net = DecoderNet::new(cfg).unwrap();
        let table = net.layer_table();
        let b2 = table
            .iter()
            .find(|l| l.name == "decoder/block2/conv1")
            .unwrap();
        assert_eq!(b2.c_in, 12); // 3C with no concatenated features
        let b4 = table
            .iter()
            .find(|l| l.name == "decoder/block4/conv1")
            .unwrap();
        assert_eq!(b4.c_in, 4);
        let params: ParameterSet<f32> = net.init_parameters(9).unwrap();
        let pair = Tensor::<f32>::full(&[2, 16, 16], 0.25);
        let mut tape = Tape::new();
        let (field, _) = net.forward(&mut tape, &params, &pair).unwrap();
        assert_eq!(tape.value(field).shape(), &[2, 16, 16]);
    }

    #[test]
    fn window8_level_is_mandatory() {
        let cfg = ModelConfig {
            pool_windows: vec![2, 4],
            ..ModelConfig::default()
        };
        assert!(DecoderNet::new(cfg).is_err());
    }

    #[test]
    fn convs_per_block_2_adds_conv2_layers() {
        let net = DecoderNet::new(ModelConfig {
            channels: 4,
            convs_per_block: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        let table = net.layer_table();
        let names: Vec<&str> = table.iter().map(|l| l.name.as_str()).collect();
        assert!(names.contains(&"decoder/block1/conv2"));
        assert!(names.contains(&"decoder/block4/conv2"));
        // closed form 476 C^2 + 548 C + 2 at depth 2 in 2d
        assert_eq!(net.count_parameters(), 476 * 16 + 548 * 4 + 2);
    }

    #[test]
    fn custom_displacement_scale_bounds_output() {
        let cfg = ModelConfig {
            channels: 4,
            displacement_scale: Some(vec![2.0, 3.0]),
            ..ModelConfig::default()
        };
        let net = DecoderNet::new(cfg).unwrap();
        let params: ParameterSet<f32> = net.init_parameters(2).unwrap();
        let mut pair = Tensor::<f32>::zeros(&[2, 16, 16]);
        for (i, v) in pair.data_mut().iter_mut().enumerate() {
            *v = (i as f32 * 0.013).sin().abs();
        }
        let mut tape = Tape::new();
        let (field, _) = net.forward(&mut tape, &params, &pair).unwrap();
        let f = tape.value(field);
        for &v in f.channel(0) {
            assert!(v.abs() < 2.0);
        }
        for &v in f.channel(1) {
            assert!(v.abs() < 3.0);
        }
    }

    #[test]
    fn three_d_parameter_closed_form() {
        // 3d full pyramid, depth 1: 538 C^2 + 1609 C + 3
        for c in [4u64, 8] {
            let net = DecoderNet::new(ModelConfig {
                rank: 3,
                channels: c as usize,
                ..ModelConfig::default()
            })
            .unwrap();
            assert_eq!(net.count_parameters(), 538 * c * c + 1609 * c + 3, "C={c}");
        }
    }
}
