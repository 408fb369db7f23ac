//! Registration networks built from pooling pyramids and a learned decoder,
//! together with the training, evaluation and synthetic data machinery the
//! command line tools sit on.

pub mod adam;
pub mod baseline;
pub mod dataset;
pub mod decoder;
pub mod deform;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod params;
pub mod pyramid;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use kernels::PoolMode;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{Scalar, Tensor};
