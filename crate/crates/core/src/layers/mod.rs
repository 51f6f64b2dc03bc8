//! Network building blocks bound to a [`Graph`](crate::graph::Graph).
//!
//! Layers hold [`Var`](crate::graph::Var) handles to their parameters, so the
//! same code serves training (parameters tracked) and inference (parameters
//! recorded as constants).

mod attention;
mod conv;
mod linear;
mod lstm;
mod segment;

pub use attention::CausalLocalAttention;
pub use conv::{Conv1dDecoder, Conv1dEncoder};
pub use linear::LinearLayer;
pub use lstm::LstmLayer;
pub use segment::{SegmentBatch, SegmentMeta};

use rand::Rng;

use crate::tensor::Tensor;

/// Glorot-uniform `[rows × cols]` matrix with bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive extents")
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
