//! Uniform handle over the two architectures so training and evaluation can
//! stay agnostic about which one they drive.

use std::path::Path;

use crate::baseline::EncoderDecoderNet;
use crate::decoder::{DecoderNet, TapedLayer};
use crate::error::Result;
use crate::io::{load_checkpoint, save_baseline_checkpoint, save_decoder_checkpoint, Checkpoint};
use crate::params::ParameterSet;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

pub enum Network {
    Decoder(DecoderNet),
    Baseline(EncoderDecoderNet),
}

impl Network {
    pub fn rank(&self) -> usize {
        match self {
            Network::Decoder(n) => n.cfg.rank,
            Network::Baseline(n) => n.cfg.rank,
        }
    }

    /// Whether the predicted field is a stationary velocity to exponentiate.
    pub fn diffeomorphic(&self) -> bool {
        match self {
            Network::Decoder(n) => n.cfg.diffeomorphic,
            Network::Baseline(_) => false,
        }
    }

    pub fn init_parameters<E: Scalar>(&self, seed: u64) -> Result<ParameterSet<E>> {
        match self {
            Network::Decoder(n) => n.init_parameters(seed),
            Network::Baseline(n) => n.init_parameters(seed),
        }
    }

    pub fn forward<E: Scalar>(
        &self,
        tape: &mut Tape<E>,
        params: &ParameterSet<E>,
        pair: &Tensor<E>,
    ) -> Result<(NodeId, Vec<TapedLayer>)> {
        match self {
            Network::Decoder(n) => n.forward(tape, params, pair),
            Network::Baseline(n) => n.forward(tape, params, pair),
        }
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, params: &ParameterSet<f32>) -> Result<()> {
        match self {
            Network::Decoder(n) => save_decoder_checkpoint(path, &n.cfg, params),
            Network::Baseline(n) => save_baseline_checkpoint(path, &n.cfg, params),
        }
    }

    pub fn load_from_checkpoint(path: impl AsRef<Path>) -> Result<(Network, ParameterSet<f32>)> {
        match load_checkpoint(path)? {
            Checkpoint::Decoder(cfg, params) => Ok((Network::Decoder(DecoderNet::new(cfg)?), params)),
            Checkpoint::Baseline(cfg, params) => {
                Ok((Network::Baseline(EncoderDecoderNet::new(cfg)?), params))
            }
        }
    }
}
