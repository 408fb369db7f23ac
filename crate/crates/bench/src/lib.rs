//! Shared fixtures for the criterion benches.

use poolreg_core::synth::{generate_sample, SynthConfig};
use poolreg_core::dataset::RegistrationSample;
use poolreg_core::Tensor;

pub fn sample_64(seed: u64) -> RegistrationSample {
    let cfg = SynthConfig::default();
    generate_sample(&cfg, seed).expect("synthetic sample")
}

/// Deterministic dense field, amplitude in voxels.
pub fn field_64(amplitude: f32) -> Tensor<f32> {
    let mut t = Tensor::<f32>::zeros(&[2, 64, 64]);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = amplitude * ((i as f32) * 0.037).sin();
    }
    t
}
