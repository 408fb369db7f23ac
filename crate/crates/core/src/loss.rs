//! Training objectives: MSE, windowed squared normalized cross-correlation,
//! the first-order diffusion regularizer, and their weighted composition.
//!
//! NCC windows are clipped at image borders: each voxel-centered window uses
//! only the in-bounds samples and its own sample count, so intensity-affine
//! invariance holds at every voxel, not just in the interior.

use crate::deform::{exponentiate_node, EXP_STEPS};
use crate::error::{Error, Result};
use crate::kernels::box_sum;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    Mse,
    NccLocal,
    NccGlobal,
}

impl Similarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Similarity::Mse => "mse",
            Similarity::NccLocal => "ncc",
            Similarity::NccGlobal => "ncc-global",
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Similarity::Mse),
            "ncc" => Ok(Similarity::NccLocal),
            "ncc-global" => Ok(Similarity::NccGlobal),
            other => Err(Error::Config(format!(
                "unknown similarity '{other}' (expected mse, ncc, or ncc-global)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub similarity: Similarity,
    pub lambda: f64,
    pub ncc_window: usize,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            similarity: Similarity::Mse,
            lambda: 0.01,
            ncc_window: 9,
            epsilon: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.ncc_window == 0 || self.ncc_window % 2 == 0 {
            return Err(Error::Config(format!(
                "ncc_window must be odd and positive, got {}",
                self.ncc_window
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// The scalar nodes produced by `total_loss_node`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: NodeId,
    pub similarity: NodeId,
    pub regularizer: NodeId,
}

/// Mean squared difference.
pub fn mse_node<E: Scalar>(tape: &mut Tape<E>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean_all(sq))
}

/// Per-voxel squared correlation map `r`. Every voxel gets
/// `r = (Σ(a−ā)(b−b̄))² / (Σ(a−ā)² · Σ(b−b̄)² + eps)` over its clipped window,
/// computed as `Σab − ΣaΣb/n` with `n` the in-bounds sample count.
pub fn ncc_map_node<E: Scalar>(
    tape: &mut Tape<E>,
    a: NodeId,
    b: NodeId,
    window: usize,
    eps: f64,
) -> Result<NodeId> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "ncc window must be odd and positive, got {window}"
        )));
    }
    let shape = tape.value(a).shape().to_vec();
    let counts = box_sum(&Tensor::<E>::full(&shape, E::one()), window)?;
    let counts = tape.constant(counts);

    let ab = tape.mul(a, b)?;
    let aa = tape.mul(a, a)?;
    let bb = tape.mul(b, b)?;
    let sa = tape.box_sum(a, window)?;
    let sb = tape.box_sum(b, window)?;
    let sab = tape.box_sum(ab, window)?;
    let saa = tape.box_sum(aa, window)?;
    let sbb = tape.box_sum(bb, window)?;

    let sasb = tape.mul(sa, sb)?;
    let sasb_n = tape.div(sasb, counts)?;
    let cross = tape.sub(sab, sasb_n)?;

    let sasa = tape.mul(sa, sa)?;
    let sasa_n = tape.div(sasa, counts)?;
    let var_a = tape.sub(saa, sasa_n)?;

    let sbsb = tape.mul(sb, sb)?;
    let sbsb_n = tape.div(sbsb, counts)?;
    let var_b = tape.sub(sbb, sbsb_n)?;

    let num = tape.mul(cross, cross)?;
    let var_ab = tape.mul(var_a, var_b)?;
    let den = tape.add_const(var_ab, eps);
    tape.div(num, den)
}

/// Mean of the `r` map: the similarity value in `[0, 1]`.
pub fn ncc_value_node<E: Scalar>(
    tape: &mut Tape<E>,
    a: NodeId,
    b: NodeId,
    window: usize,
    eps: f64,
) -> Result<NodeId> {
    let map = ncc_map_node(tape, a, b, window, eps)?;
    Ok(tape.mean_all(map))
}

/// `1 − ncc`, the term minimized during training.
pub fn ncc_loss_node<E: Scalar>(
    tape: &mut Tape<E>,
    a: NodeId,
    b: NodeId,
    window: usize,
    eps: f64,
) -> Result<NodeId> {
    let v = ncc_value_node(tape, a, b, window, eps)?;
    let neg = tape.scale(v, -1.0);
    Ok(tape.add_const(neg, 1.0))
}

/// Single-window squared correlation over the whole tensor, as `1 − r`.
pub fn ncc_global_loss_node<E: Scalar>(
    tape: &mut Tape<E>,
    a: NodeId,
    b: NodeId,
    eps: f64,
) -> Result<NodeId> {
    let ma = tape.mean_all(a);
    let mb = tape.mean_all(b);
    let ac = tape.broadcast_sub(a, ma)?;
    let bc = tape.broadcast_sub(b, mb)?;
    let cross_map = tape.mul(ac, bc)?;
    let cross = tape.sum_all(cross_map);
    let aa = tape.mul(ac, ac)?;
    let bb = tape.mul(bc, bc)?;
    let va = tape.sum_all(aa);
    let vb = tape.sum_all(bb);
    let num = tape.mul(cross, cross)?;
    let vab = tape.mul(va, vb)?;
    let den = tape.add_const(vab, eps);
    let r = tape.div(num, den)?;
    let neg = tape.scale(r, -1.0);
    Ok(tape.add_const(neg, 1.0))
}

/// Mean of squared forward differences, pooled over every axis, channel, and
/// voxel (voxel-unit spacing).
pub fn diffusion_node<E: Scalar>(tape: &mut Tape<E>, u: NodeId) -> Result<NodeId> {
    let spatial = tape.value(u).spatial().to_vec();
    let len = tape.value(u).len();
    for (axis, &e) in spatial.iter().enumerate() {
        if e < 2 {
            return Err(Error::Config(format!(
                "diffusion needs extent >= 2, axis {axis} has {e}"
            )));
        }
    }
    let mut acc: Option<NodeId> = None;
    let mut total_count = 0usize;
    for (axis, &e) in spatial.iter().enumerate() {
        let d = tape.shift_diff(u, axis)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum_all(sq);
        total_count += len / e * (e - 1);
        acc = Some(match acc {
            None => s,
            Some(p) => tape.add(p, s)?,
        });
    }
    Ok(tape.scale(acc.expect("rank >= 1"), 1.0 / total_count as f64))
}

/// Builds the full objective on the tape. `field` is a displacement when
/// `diffeomorphic` is false and a stationary velocity when true; in the
/// diffeomorphic case the moving image is warped by the exponentiated field
/// while the regularizer still acts on the velocity itself.
pub fn total_loss_node<E: Scalar>(
    tape: &mut Tape<E>,
    moving: NodeId,
    fixed: NodeId,
    field: NodeId,
    diffeomorphic: bool,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let disp = if diffeomorphic {
        exponentiate_node(tape, field, EXP_STEPS)?
    } else {
        field
    };
    let warped = tape.warp(moving, disp)?;
    let similarity = match cfg.similarity {
        Similarity::Mse => mse_node(tape, warped, fixed)?,
        Similarity::NccLocal => ncc_loss_node(tape, warped, fixed, cfg.ncc_window, cfg.epsilon)?,
        Similarity::NccGlobal => ncc_global_loss_node(tape, warped, fixed, cfg.epsilon)?,
    };
    let regularizer = diffusion_node(tape, field)?;
    let weighted = tape.scale(regularizer, cfg.lambda);
    let total = tape.add(similarity, weighted)?;
    Ok(LossTerms {
        total,
        similarity,
        regularizer,
    })
}

/// Pure mean squared difference.
pub fn mse<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Result<E> {
    let mut tape = Tape::new();
    let an = tape.constant(a.clone());
    let bn = tape.constant(b.clone());
    let m = mse_node(&mut tape, an, bn)?;
    Ok(tape.value(m).data()[0])
}

/// Pure windowed squared NCC similarity in `[0, 1]`.
pub fn ncc<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, window: usize, eps: f64) -> Result<E> {
    let mut tape = Tape::new();
    let an = tape.constant(a.clone());
    let bn = tape.constant(b.clone());
    let v = ncc_value_node(&mut tape, an, bn, window, eps)?;
    Ok(tape.value(v).data()[0])
}

/// Pure diffusion regularizer.
pub fn diffusion_reg<E: Scalar>(u: &Tensor<E>) -> Result<E> {
    let mut tape = Tape::new();
    let un = tape.constant(u.clone());
    let d = diffusion_node(&mut tape, un)?;
    Ok(tape.value(d).data()[0])
}
