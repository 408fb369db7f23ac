//! Dense numeric kernels. Everything is rank-generic over 2d and 3d volumes
//! in channel-first layout and iterates in a fixed row-major order, so all
//! results are bit-deterministic for a given input.

mod conv;
mod filter;
mod pool;
mod slab;
mod warp;

pub use conv::{conv3_backward, conv3_forward, frac2_backward, frac2_forward};
pub use filter::{
    box_sum, central_diff, central_diff_adjoint, gaussian_blur, shift_diff, shift_diff_adjoint,
};
pub use pool::{pool_backward, pool_forward, PoolMode};
pub use warp::{warp_backward, warp_forward, warp_labels_nearest};
