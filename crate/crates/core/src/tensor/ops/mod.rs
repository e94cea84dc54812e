//! Differentiable primitives. Each one appends a node to the graph together
//! with a closure computing its input gradients.

mod conv;
mod elementwise;
mod norm;
mod pool;
mod spatial;

pub use conv::Padding;
pub(crate) use elementwise::bce_term;
pub use norm::BatchNormState;
pub use spatial::{normalized_coord, unnormalize_coord};

use crate::error::{Error, Result};

/// Views a rank-3 or rank-4 image shape as `(N, C, H, W)`.
pub(crate) fn as_nchw(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape(format!(
            "expected [C,H,W] or [N,C,H,W], got {shape:?}"
        ))),
    }
}

/// Output shape with the same rank as the input.
pub(crate) fn nchw_like(input: &[usize], n: usize, c: usize, h: usize, w: usize) -> Vec<usize> {
    if input.len() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    }
}
