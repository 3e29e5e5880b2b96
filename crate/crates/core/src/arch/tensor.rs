use serde::{Deserialize, Serialize};

use crate::workload::{Dim, LayerKind};

/// Operand tensors of a convolution-like layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tensor {
    Weights,
    Inputs,
    Outputs,
}

impl Tensor {
    pub const ALL: [Tensor; 3] = [Tensor::Weights, Tensor::Inputs, Tensor::Outputs];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    /// Does loop dimension `d` index this tensor?
    ///
    /// Depthwise layers keep one output channel group per input channel, so
    /// their outputs are indexed by `C` as well.
    #[inline]
    pub fn indexed_by(self, kind: LayerKind, d: Dim) -> bool {
        use Dim::*;
        match self {
            Tensor::Weights => matches!(d, C | K | R | S),
            Tensor::Inputs => matches!(d, C | Y | X | R | S),
            Tensor::Outputs => match kind {
                LayerKind::Depthwise => matches!(d, C | K | Y | X),
                _ => matches!(d, K | Y | X),
            },
        }
    }

    /// Number of elements in a block of extents `ext` (indexed by dim).
    /// Inputs include the sliding-window halo.
    #[inline]
    pub fn block_elems(self, kind: LayerKind, ext: &[u32; 6]) -> u64 {
        let e = |d: Dim| ext[d.index()] as u64;
        use Dim::*;
        match self {
            Tensor::Weights => e(C) * e(K) * e(R) * e(S),
            Tensor::Inputs => e(C) * (e(Y) + e(R) - 1) * (e(X) + e(S) - 1),
            Tensor::Outputs => match kind {
                LayerKind::Depthwise => e(C) * e(K) * e(Y) * e(X),
                _ => e(K) * e(Y) * e(X),
            },
        }
    }
}
