use crate::error::Result;
use crate::graph::{Graph, Var};

/// Affine map `x · Wᵀ + b` with `W: [D_out × D_in]`.
#[derive(Clone, Copy, Debug)]
pub struct LinearLayer {
    pub weight: Var,
    pub bias: Var,
}

impl LinearLayer {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.weight, Some(self.bias))
    }
}
