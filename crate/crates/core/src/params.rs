//! Named, ordered parameter storage shared by both network architectures,
//! plus the layer-table description that initialisation, parameter counting
//! and mult-adds profiling all derive from.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{cast, Scalar, Tensor};

/// One learnable layer: a weight tensor and a bias vector under a stable name.
#[derive(Debug, Clone)]
pub struct ParamEntry<E: Scalar> {
    pub name: String,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
    pub trainable: bool,
}

/// Ordered collection of layers. Order is the forward-pass order, fixed at
/// construction, which keeps every downstream iteration deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet<E: Scalar> {
    entries: Vec<ParamEntry<E>>,
}

impl<E: Scalar> ParameterSet<E> {
    pub fn new() -> Self {
        ParameterSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: &str, weight: Tensor<E>, bias: Tensor<E>) -> Result<()> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push(ParamEntry {
            name: name.to_string(),
            weight,
            bias,
            trainable: true,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry<E>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<E>] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<E>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<E>> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over all weights and biases.
    pub fn scalar_count(&self) -> u64 {
        self.entries
            .iter()
            .map(|e| (e.weight.len() + e.bias.len()) as u64)
            .sum()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    /// Set the trainable flag on every layer whose name starts with `prefix`.
    /// Errors if no layer matches, which catches freeze modes that do not
    /// apply to the model at hand.
    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) -> Result<usize> {
        let mut hits = 0usize;
        for e in &mut self.entries {
            if e.name.starts_with(prefix) {
                e.trainable = trainable;
                hits += 1;
            }
        }
        if hits == 0 {
            return Err(Error::Config(format!(
                "no layer matches prefix {prefix:?} in this model"
            )));
        }
        Ok(hits)
    }

    pub fn convert<F: Scalar>(&self) -> ParameterSet<F> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    weight: e.weight.convert::<F>(),
                    bias: e.bias.convert::<F>(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

/// Kind of learnable layer in a layer table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// 3^rank convolution, padding 1, given stride
    Conv3 { stride: usize },
    /// 2^rank fractional convolution, stride 2
    Frac2,
}

/// One row of a model's layer table, the single source of truth for weight
/// shapes, parameter counts and mult-adds.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    /// layer initialised near zero so the initial predicted field vanishes
    pub near_zero_init: bool,
    /// denominator applied to the full-resolution element count to get this
    /// layer's output (Conv3) or input (Frac2) element count
    pub scale_denominator: usize,
}

impl LayerSpec {
    pub fn weight_shape(&self, rank: usize) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv3 { .. } => {
                let mut s = vec![self.c_out, self.c_in];
                s.extend(std::iter::repeat(3).take(rank));
                s
            }
            LayerKind::Frac2 => {
                let mut s = vec![self.c_in, self.c_out];
                s.extend(std::iter::repeat(2).take(rank));
                s
            }
        }
    }

    pub fn kernel_volume(&self, rank: usize) -> u64 {
        match self.kind {
            LayerKind::Conv3 { .. } => 3u64.pow(rank as u32),
            LayerKind::Frac2 => 2u64.pow(rank as u32),
        }
    }

    pub fn parameter_count(&self, rank: usize) -> u64 {
        self.c_in as u64 * self.c_out as u64 * self.kernel_volume(rank) + self.c_out as u64
    }

    /// Multiply-accumulate count for one forward pass over a volume with the
    /// given full-resolution spatial extents. Counted as output elements x
    /// input channels x kernel volume for convolutions and input elements x
    /// output channels x kernel volume for fractional convolutions; with
    /// elements including their channel axis both reduce to the same product.
    /// `scale_denominator` holds the operative scale: output scale for Conv3,
    /// input scale for Frac2.
    pub fn mult_adds(&self, rank: usize, spatial: &[usize]) -> u64 {
        let full: u64 = spatial.iter().map(|&e| e as u64).product();
        let elements = full / self.scale_denominator as u64;
        elements * self.c_in as u64 * self.c_out as u64 * self.kernel_volume(rank)
    }

    pub fn fan_in(&self, rank: usize) -> usize {
        self.c_in * self.kernel_volume(rank) as usize
    }
}

/// Initialise parameters for a layer table: hidden layers uniform in
/// ±sqrt(1/fan_in) (weights and biases), near-zero layers with weights from
/// N(0, 1e-5) and zero bias. Deterministic in the seed; draw order follows
/// the table order element by element.
pub fn init_from_table<E: Scalar>(
    table: &[LayerSpec],
    rank: usize,
    seed: u64,
) -> Result<ParameterSet<E>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1e-5).expect("valid stddev");
    let mut params = ParameterSet::new();
    for layer in table {
        let wshape = layer.weight_shape(rank);
        let mut weight = Tensor::<E>::zeros(&wshape);
        let mut bias = Tensor::<E>::zeros(&[layer.c_out]);
        if layer.near_zero_init {
            for v in weight.data_mut() {
                *v = cast::<E>(normal.sample(&mut rng));
            }
        } else {
            let bound = (1.0 / layer.fan_in(rank) as f64).sqrt();
            for v in weight.data_mut() {
                *v = cast::<E>(rng.gen_range(-bound..bound));
            }
            for v in bias.data_mut() {
                *v = cast::<E>(rng.gen_range(-bound..bound));
            }
        }
        params.push(&layer.name, weight, bias)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Vec<LayerSpec> {
        vec![
            LayerSpec {
                name: "decoder/conv1".into(),
                kind: LayerKind::Conv3 { stride: 1 },
                c_in: 6,
                c_out: 16,
                near_zero_init: false,
                scale_denominator: 64,
            },
            LayerSpec {
                name: "output/conv".into(),
                kind: LayerKind::Conv3 { stride: 1 },
                c_in: 16,
                c_out: 2,
                near_zero_init: true,
                scale_denominator: 1,
            },
        ]
    }

    #[test]
    fn same_seed_same_bits() {
        let a: ParameterSet<f32> = init_from_table(&table(), 2, 7).unwrap();
        let b: ParameterSet<f32> = init_from_table(&table(), 2, 7).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.name, y.name);
            for (u, v) in x.weight.data().iter().zip(y.weight.data()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
            for (u, v) in x.bias.data().iter().zip(y.bias.data()) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
        let c: ParameterSet<f32> = init_from_table(&table(), 2, 8).unwrap();
        assert_ne!(
            a.entries()[0].weight.data(),
            c.entries()[0].weight.data()
        );
    }

    #[test]
    fn near_zero_layer_is_tiny_with_zero_bias() {
        let p: ParameterSet<f64> = init_from_table(&table(), 2, 3).unwrap();
        let out = p.get("output/conv").unwrap();
        for &v in out.weight.data() {
            assert!(v.abs() < 1e-3);
        }
        assert!(out.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn hidden_layer_within_fan_in_bound() {
        let p: ParameterSet<f64> = init_from_table(&table(), 2, 3).unwrap();
        let hidden = p.get("decoder/conv1").unwrap();
        let bound = (1.0f64 / (6.0 * 9.0)).sqrt();
        for &v in hidden.weight.data() {
            assert!(v.abs() <= bound);
        }
        assert!(hidden.weight.data().iter().any(|&v| v.abs() > bound * 0.01));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::<f32>::new();
        p.push("a", Tensor::zeros(&[1]), Tensor::zeros(&[1])).unwrap();
        assert!(p.push("a", Tensor::zeros(&[1]), Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn trainable_flags_default_true_and_prefix_freeze() {
        let mut p: ParameterSet<f32> = init_from_table(&table(), 2, 1).unwrap();
        assert!(p.entries().iter().all(|e| e.trainable));
        let hits = p.set_trainable_by_prefix("decoder/", false).unwrap();
        assert_eq!(hits, 1);
        assert!(!p.get("decoder/conv1").unwrap().trainable);
        assert!(p.get("output/conv").unwrap().trainable);
        assert!(p.set_trainable_by_prefix("encoder/", false).is_err());
    }

    #[test]
    fn scalar_count_matches_layer_formula() {
        let p: ParameterSet<f32> = init_from_table(&table(), 2, 1).unwrap();
        let expect: u64 = table().iter().map(|l| l.parameter_count(2)).sum();
        assert_eq!(p.scalar_count(), expect);
        assert_eq!(expect, (6 * 16 * 9 + 16) + (16 * 2 * 9 + 2));
    }
}
