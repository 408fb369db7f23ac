//! A small symmetric encoder-decoder registration network. It exists only to
//! demonstrate that freezing its encoder hurts far less than freezing its
//! decoder; it makes no claim of matching any published architecture's size.
//!
//! Contracting path: stride-2 convolutions. Expanding path: fractional
//! convolutions with skip concatenation from the matching encoder level,
//! ending in a near-zero-initialised linear convolution to `rank` channels.

use crate::decoder::{TapedLayer, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::params::{init_from_table, LayerKind, LayerSpec, ParameterSet};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// spatial rank: 2 or 3
    pub rank: usize,
    /// widths of the stride-2 encoder convolutions
    pub encoder_widths: Vec<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            rank: 2,
            encoder_widths: vec![16, 32, 32, 32],
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::Config(format!("rank must be 2 or 3, got {}", self.rank)));
        }
        if self.encoder_widths.is_empty() {
            return Err(Error::Config("encoder needs at least one level".into()));
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }

    fn divisor(&self) -> usize {
        1 << self.encoder_widths.len()
    }

    /// Decoder widths mirror the encoder coarse to fine.
    fn decoder_widths(&self) -> Vec<usize> {
        self.encoder_widths.iter().rev().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderDecoderNet {
    pub cfg: BaselineConfig,
}

impl EncoderDecoderNet {
    pub fn new(cfg: BaselineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EncoderDecoderNet { cfg })
    }

    pub fn layer_table(&self) -> Vec<LayerSpec> {
        let rank = self.cfg.rank as u32;
        let enc = &self.cfg.encoder_widths;
        let dec = self.cfg.decoder_widths();
        let levels = enc.len();
        let mut table = Vec::new();
        let mut c_prev = 2usize;
        for (i, &w) in enc.iter().enumerate() {
            table.push(LayerSpec {
                name: format!("encoder/conv{}", i + 1),
                kind: LayerKind::Conv3 { stride: 2 },
                c_in: c_prev,
                c_out: w,
                near_zero_init: false,
                scale_denominator: 2usize.pow((i as u32 + 1) * rank),
            });
            c_prev = w;
        }
        for (i, &w) in dec.iter().enumerate() {
            let depth = levels - i; // current scale before upsampling: 1/2^depth
            table.push(LayerSpec {
                name: format!("decoder/up{}", i + 1),
                kind: LayerKind::Frac2,
                c_in: c_prev,
                c_out: w,
                near_zero_init: false,
                scale_denominator: 2usize.pow(depth as u32 * rank),
            });
            // skip features: encoder level below, or the raw pair at full scale
            let skip = if i + 1 < levels { enc[levels - 2 - i] } else { 2 };
            table.push(LayerSpec {
                name: format!("decoder/conv{}", i + 1),
                kind: LayerKind::Conv3 { stride: 1 },
                c_in: w + skip,
                c_out: w,
                near_zero_init: false,
                scale_denominator: 2usize.pow((depth as u32 - 1) * rank),
            });
            c_prev = w;
        }
        table.push(LayerSpec {
            name: "output/conv".into(),
            kind: LayerKind::Conv3 { stride: 1 },
            c_in: c_prev,
            c_out: self.cfg.rank,
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

    /// Forward pass producing a raw displacement field in voxel units.
    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ParameterSet<E>,
        pair: &Tensor<E>,
    ) -> Result<(NodeId, Vec<TapedLayer>)> {
        if pair.channels() != 2 {
            return Err(Error::shape_mismatch("baseline input", &[2], &[pair.channels()]));
        }
        let div = self.cfg.divisor();
        for (axis, &e) in pair.spatial().iter().enumerate() {
            if e % div != 0 {
                return Err(Error::NotDivisible {
                    context: "baseline input".into(),
                    axis,
                    extent: e,
                    divisor: div,
                });
            }
        }
        let mut taped = Vec::new();
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

        let levels = self.cfg.encoder_widths.len();
        let input = tape.constant(pair.clone());
        let mut x = input;
        let mut skips = Vec::with_capacity(levels);
        for i in 0..levels {
            skips.push(x);
            let (w, b) = lookup(tape, &format!("encoder/conv{}", i + 1))?;
            x = tape.conv3(x, w, b, 2)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
        }
        for i in 0..levels {
            let (w, b) = lookup(tape, &format!("decoder/up{}", i + 1))?;
            x = tape.frac2(x, w, b)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
            let skip = skips[levels - 1 - i];
            x = tape.concat(&[x, skip])?;
            let (w, b) = lookup(tape, &format!("decoder/conv{}", i + 1))?;
            x = tape.conv3(x, w, b, 1)?;
            x = tape.leaky_relu(x, LEAKY_SLOPE);
        }
        let (w, b) = lookup(tape, "output/conv")?;
        let field = tape.conv3(x, w, b, 1)?;
        Ok((field, taped))
    }
}
