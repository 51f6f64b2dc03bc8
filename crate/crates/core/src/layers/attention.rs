use crate::error::Result;
use crate::graph::{AttentionWeights, Graph, Var};

/// Causal local attention with a bare bilinear score `kᵀ W q`.
///
/// Frame `t` attends over `max(0, t - window) ..= t`; there is no bias and
/// no `1/√d` scaling.
#[derive(Clone, Copy, Debug)]
pub struct CausalLocalAttention {
    pub weight: Var,
    pub window: usize,
}

impl CausalLocalAttention {
    /// Context vectors `[T × D_v]` and the banded weight matrix `[T × T]`.
    pub fn attend(&self, g: &mut Graph, keys: Var, queries: Var, values: Var) -> Result<(Var, AttentionWeights)> {
        g.causal_attention(keys, queries, values, self.weight, None, self.window)
    }

    /// As [`attend`](Self::attend) but every key seen from query `t` is
    /// `[prefix_t ; keys_k]`.
    pub fn attend_with_prefix(
        &self,
        g: &mut Graph,
        prefix: Var,
        keys: Var,
        queries: Var,
        values: Var,
    ) -> Result<(Var, AttentionWeights)> {
        g.causal_attention(keys, queries, values, self.weight, Some(prefix), self.window)
    }
}
