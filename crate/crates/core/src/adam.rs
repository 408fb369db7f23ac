//! Adam optimizer over a named parameter set. Moment buffers are keyed by
//! parameter-set index, so layer order must stay fixed across steps (it does:
//! the set is append-only). Frozen layers are skipped entirely: values and
//! moments stay untouched and the shared step counter still advances once per
//! call, matching a training loop that never put them in the optimizer.

use crate::decoder::TapedLayer;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tape::Gradients;
use crate::tensor::{cast, Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<E: Scalar> {
    m_weight: Tensor<E>,
    v_weight: Tensor<E>,
    m_bias: Tensor<E>,
    v_bias: Tensor<E>,
}

#[derive(Debug)]
pub struct Adam<E: Scalar> {
    cfg: AdamConfig,
    step: u64,
    slots: Vec<Option<Moments<E>>>,
}

impl<E: Scalar> Adam<E> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            slots: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients of a backward pass. `layers` maps tape
    /// nodes to parameter names; gradients are moved out of `grads`. A missing
    /// gradient on a trainable layer counts as zero (the moments still decay).
    pub fn step(
        &mut self,
        params: &mut ParameterSet<E>,
        grads: &mut Gradients<E>,
        layers: &[TapedLayer],
    ) -> Result<()> {
        if self.slots.len() < params.len() {
            self.slots.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);

        for layer in layers {
            if !layer.trainable {
                continue;
            }
            let idx = params
                .index_of(&layer.name)
                .ok_or_else(|| Error::Config(format!("no parameter named '{}'", layer.name)))?;
            let g_weight = grads.take(layer.weight);
            let g_bias = grads.take(layer.bias);
            for g in [&g_weight, &g_bias].into_iter().flatten() {
                if !g.all_finite() {
                    return Err(Error::NonFiniteGradient {
                        layer: layer.name.clone(),
                    });
                }
            }
            let entry = &mut params.entries_mut()[idx];
            let moments = self.slots[idx].get_or_insert_with(|| Moments {
                m_weight: Tensor::zeros(entry.weight.shape()),
                v_weight: Tensor::zeros(entry.weight.shape()),
                m_bias: Tensor::zeros(entry.bias.shape()),
                v_bias: Tensor::zeros(entry.bias.shape()),
            });
            update_tensor(
                &mut entry.weight,
                &mut moments.m_weight,
                &mut moments.v_weight,
                g_weight.as_ref(),
                &self.cfg,
                bc1,
                bc2,
            );
            update_tensor(
                &mut entry.bias,
                &mut moments.m_bias,
                &mut moments.v_bias,
                g_bias.as_ref(),
                &self.cfg,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

fn update_tensor<E: Scalar>(
    theta: &mut Tensor<E>,
    m: &mut Tensor<E>,
    v: &mut Tensor<E>,
    grad: Option<&Tensor<E>>,
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    let b1 = cast::<E>(cfg.beta1);
    let b2 = cast::<E>(cfg.beta2);
    let c1 = cast::<E>(1.0 - cfg.beta1);
    let c2 = cast::<E>(1.0 - cfg.beta2);
    let lr = cast::<E>(cfg.lr);
    let eps = cast::<E>(cfg.epsilon);
    let ibc1 = cast::<E>(1.0 / bc1);
    let ibc2 = cast::<E>(1.0 / bc2);
    let n = theta.len();
    for i in 0..n {
        let g = grad.map_or(E::zero(), |g| g.data()[i]);
        let mi = b1 * m.data()[i] + c1 * g;
        let vi = b2 * v.data()[i] + c2 * g * g;
        m.data_mut()[i] = mi;
        v.data_mut()[i] = vi;
        let m_hat = mi * ibc1;
        let v_hat = vi * ibc2;
        let cur = theta.data()[i];
        theta.data_mut()[i] = cur - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{NodeId, Tape};

    fn one_layer_set(value: f64, trainable: bool) -> ParameterSet<f64> {
        let mut set = ParameterSet::new();
        set.push(
            "output/conv",
            Tensor::full(&[1], value),
            Tensor::full(&[1], 0.0),
        )
        .unwrap();
        set.entries_mut()[0].trainable = trainable;
        set
    }

    fn grads_for(values: &[(NodeId, Tensor<f64>)]) -> Gradients<f64> {
        let max = values.iter().map(|(n, _)| n.index()).max().unwrap_or(0);
        let mut slots = vec![None; max + 1];
        for (n, t) in values {
            slots[n.index()] = Some(t.clone());
        }
        Gradients::from_slots(slots)
    }

    fn taped(name: &str, weight: NodeId, bias: NodeId, trainable: bool) -> TapedLayer {
        TapedLayer {
            name: name.to_string(),
            weight,
            bias,
            trainable,
        }
    }

    fn node_ids() -> (NodeId, NodeId) {
        let mut t = Tape::<f64>::new();
        let w = t.param(Tensor::full(&[1], 0.0));
        let b = t.param(Tensor::full(&[1], 0.0));
        (w, b)
    }

    #[test]
    fn first_step_is_almost_lr() {
        let mut set = one_layer_set(1.0, true);
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg);
        let (w, b) = node_ids();
        let layers = [taped("output/conv", w, b, true)];
        let mut grads = grads_for(&[
            (w, Tensor::full(&[1], 1.0)),
            (b, Tensor::full(&[1], 0.0)),
        ]);
        opt.step(&mut set, &mut grads, &layers).unwrap();
        let expected = 1.0 - cfg.lr * 1.0 / (1.0 + cfg.epsilon);
        assert_eq!(set.get("output/conv").unwrap().weight.data()[0], expected);
        // zero bias gradient: m = v = 0, update exactly 0
        assert_eq!(set.get("output/conv").unwrap().bias.data()[0], 0.0);
    }

    #[test]
    fn constant_gradient_keeps_unit_normalized_steps() {
        let mut set = one_layer_set(0.0, true);
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg);
        let (w, b) = node_ids();
        let layers = [taped("output/conv", w, b, true)];
        let mut theta = 0.0;
        for _ in 0..3 {
            let mut grads = grads_for(&[
                (w, Tensor::full(&[1], 2.0)),
                (b, Tensor::full(&[1], 0.0)),
            ]);
            opt.step(&mut set, &mut grads, &layers).unwrap();
            let next = set.get("output/conv").unwrap().weight.data()[0];
            // with a constant gradient, m_hat = g and v_hat = g^2 at every
            // step, so each update is lr * g / (|g| + eps)
            let delta = theta - next;
            assert!((delta - cfg.lr * 2.0 / (2.0 + cfg.epsilon)).abs() < 1e-12);
            theta = next;
        }
        assert_eq!(opt.steps_taken(), 3);
    }

    #[test]
    fn frozen_layers_are_untouched() {
        let mut set = one_layer_set(0.75, false);
        let mut opt = Adam::new(AdamConfig::default());
        let (w, b) = node_ids();
        let layers = [taped("output/conv", w, b, false)];
        let mut grads = grads_for(&[
            (w, Tensor::full(&[1], 5.0)),
            (b, Tensor::full(&[1], 5.0)),
        ]);
        opt.step(&mut set, &mut grads, &layers).unwrap();
        assert_eq!(set.get("output/conv").unwrap().weight.data()[0], 0.75);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut set = one_layer_set(0.0, true);
        let mut opt = Adam::new(AdamConfig::default());
        let (w, b) = node_ids();
        let layers = [taped("output/conv", w, b, true)];
        let mut grads = grads_for(&[
            (w, Tensor::full(&[1], f64::NAN)),
            (b, Tensor::full(&[1], 0.0)),
        ]);
        let err = opt.step(&mut set, &mut grads, &layers).unwrap_err();
        match err {
            Error::NonFiniteGradient { layer } => assert_eq!(layer, "output/conv"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_gradient_decays_moments() {
        let mut set = one_layer_set(0.0, true);
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg);
        let (w, b) = node_ids();
        let layers = [taped("output/conv", w, b, true)];
        let mut grads = grads_for(&[
            (w, Tensor::full(&[1], 1.0)),
            (b, Tensor::full(&[1], 0.0)),
        ]);
        opt.step(&mut set, &mut grads, &layers).unwrap();
        let after_one = set.get("output/conv").unwrap().weight.data()[0];
        let mut empty = grads_for(&[]);
        opt.step(&mut set, &mut empty, &layers).unwrap();
        let after_two = set.get("output/conv").unwrap().weight.data()[0];
        // m decayed but nonzero: the parameter keeps drifting, more slowly
        assert!(after_two < after_one);
        assert!((after_one - after_two).abs() < cfg.lr);
    }
}
