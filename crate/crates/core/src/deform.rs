//! Deformation-field algebra: identity grids, displacement composition,
//! scaling-and-squaring exponentiation of stationary velocity fields, and
//! Jacobian-determinant folding analysis.
//!
//! Conventions: a displacement field `u` has one channel per spatial axis in
//! axis order, voxel units; the deformation is `phi = Id + u` in absolute
//! voxel coordinates. Pure entry points run the same graph code as the taped
//! ones on a throwaway tape, so both routes cannot drift apart.

use crate::error::{Error, Result};
use crate::kernels::{warp_forward, warp_labels_nearest};
use crate::tape::{NodeId, Tape};
use crate::tensor::{cast, for_each_index, Scalar, Tensor};

/// Number of scaling-and-squaring steps used throughout.
pub const EXP_STEPS: u32 = 7;

/// Absolute voxel coordinates of every grid point: channel `a` holds the
/// coordinate along spatial axis `a`.
pub fn identity_grid<E: Scalar>(spatial: &[usize]) -> Tensor<E> {
    let rank = spatial.len();
    let mut shape = vec![rank];
    shape.extend_from_slice(spatial);
    let mut out = Tensor::zeros(&shape);
    for a in 0..rank {
        let ch = out.channel_mut(a);
        for_each_index(spatial, |idx, flat| {
            ch[flat] = cast::<E>(idx[a] as f64);
        });
    }
    out
}

/// `phi = Id + u`.
pub fn deformation_from_displacement<E: Scalar>(u: &Tensor<E>) -> Tensor<E> {
    let id = identity_grid::<E>(u.spatial());
    u.zip_map(&id, |a, b| a + b).expect("same shape")
}

/// Displacement of the composition "apply `first`, then `second`":
/// `u(x) = u_first(x) + u_second(x + u_first(x))`.
pub fn compose_displacements<E: Scalar>(
    second: &Tensor<E>,
    first: &Tensor<E>,
) -> Result<Tensor<E>> {
    let moved = warp_forward(second, first)?;
    first.zip_map(&moved, |a, b| a + b)
}

/// Scaling and squaring on the tape: start from `v / 2^steps` and
/// self-compose `steps` times. Returns the displacement of `Exp(v)`.
pub fn exponentiate_node<E: Scalar>(
    tape: &mut Tape<E>,
    v: NodeId,
    steps: u32,
) -> Result<NodeId> {
    let mut u = tape.scale(v, 1.0 / f64::from(1u32 << steps));
    for _ in 0..steps {
        let moved = tape.warp(u, u)?;
        u = tape.add(u, moved)?;
    }
    Ok(u)
}

/// Displacement of `Exp(v)` (pure wrapper over the taped graph).
pub fn exponentiate<E: Scalar>(v: &Tensor<E>, steps: u32) -> Result<Tensor<E>> {
    let mut tape = Tape::new();
    let vn = tape.constant(v.clone());
    let un = exponentiate_node(&mut tape, vn, steps)?;
    Ok(tape.value(un).clone())
}

/// Per-voxel determinant of the spatial Jacobian of a deformation `phi`,
/// built on the tape from central differences (one-sided at borders).
pub fn jacobian_determinant_node<E: Scalar>(tape: &mut Tape<E>, phi: NodeId) -> Result<NodeId> {
    let rank = tape.value(phi).channels();
    let spatial_rank = tape.value(phi).spatial().len();
    if rank != spatial_rank {
        return Err(Error::shape_mismatch(
            "jacobian input",
            &[spatial_rank],
            &[rank],
        ));
    }
    for (axis, &e) in tape.value(phi).spatial().iter().enumerate() {
        if e < 2 {
            return Err(Error::Config(format!(
                "jacobian needs extent >= 2, axis {axis} has {e}"
            )));
        }
    }
    // cols[b][a] = d phi_a / d x_b
    let mut cols: Vec<Vec<NodeId>> = Vec::with_capacity(rank);
    for b in 0..rank {
        let d = tape.central_diff(phi, b)?;
        let mut col = Vec::with_capacity(rank);
        for a in 0..rank {
            col.push(tape.select_channel(d, a)?);
        }
        cols.push(col);
    }
    let j = |a: usize, b: usize| cols[b][a];
    match rank {
        2 => {
            let ad = tape.mul(j(0, 0), j(1, 1))?;
            let bc = tape.mul(j(0, 1), j(1, 0))?;
            tape.sub(ad, bc)
        }
        3 => {
            let m0a = tape.mul(j(1, 1), j(2, 2))?;
            let m0b = tape.mul(j(1, 2), j(2, 1))?;
            let m0 = tape.sub(m0a, m0b)?;
            let m1a = tape.mul(j(1, 0), j(2, 2))?;
            let m1b = tape.mul(j(1, 2), j(2, 0))?;
            let m1 = tape.sub(m1a, m1b)?;
            let m2a = tape.mul(j(1, 0), j(2, 1))?;
            let m2b = tape.mul(j(1, 1), j(2, 0))?;
            let m2 = tape.sub(m2a, m2b)?;
            let t0 = tape.mul(j(0, 0), m0)?;
            let t1 = tape.mul(j(0, 1), m1)?;
            let t2 = tape.mul(j(0, 2), m2)?;
            let s = tape.sub(t0, t1)?;
            tape.add(s, t2)
        }
        r => Err(Error::Config(format!("jacobian supports rank 2 or 3, got {r}"))),
    }
}

/// Determinant map and negative fraction of a deformation field.
pub fn jacobian_folding<E: Scalar>(phi: &Tensor<E>) -> Result<(Tensor<E>, f64)> {
    let mut tape = Tape::new();
    let pn = tape.constant(phi.clone());
    let det = jacobian_determinant_node(&mut tape, pn)?;
    let det = tape.value(det).clone();
    let negatives = det.data().iter().filter(|&&d| d < E::zero()).count();
    let fraction = negatives as f64 / det.len() as f64;
    Ok((det, fraction))
}

/// Negative-Jacobian fraction of the deformation `Id + u`.
pub fn folding_fraction_of_displacement<E: Scalar>(u: &Tensor<E>) -> Result<f64> {
    let phi = deformation_from_displacement(u);
    Ok(jacobian_folding(&phi)?.1)
}

/// Fixed-point approximation of the inverse displacement:
/// `h_{k+1}(x) = -u(x + h_k(x))`, so that `x + h(x) + u(x + h(x)) = x`.
pub fn approximate_inverse<E: Scalar>(u: &Tensor<E>, iterations: usize) -> Result<Tensor<E>> {
    let mut h = u.map(|v| -v);
    for _ in 0..iterations {
        let pulled = warp_forward(u, &h)?;
        h = pulled.map(|v| -v);
    }
    Ok(h)
}

/// Re-exported warp entry points under the deformation vocabulary.
pub fn warp_image<E: Scalar>(image: &Tensor<E>, u: &Tensor<E>) -> Result<Tensor<E>> {
    warp_forward(image, u)
}

pub fn warp_labels<E: Scalar>(labels: &[u16], u: &Tensor<E>) -> Result<Vec<u16>> {
    warp_labels_nearest(labels, u)
}
