//! Context-bridge recurrent cells and their deep stacking.
//!
//! Each layer splits into a representation unit `R` that only sees the layer
//! below at the current frame, and a temporal unit `T` that sees its own
//! memory from the previous frame together with the layer below. A merge
//! function combines the two into the layer output:
//!
//! ```text
//! o'_{i,t} = R(o_{i-1,t})
//! c_{i,t}  = T(c_{i,t-1}, o_{i-1,t})
//! o_{i,t}  = merge(o'_{i,t}, c_{i,t})
//! ```
//!
//! Temporal dropout blocks, with some probability, the backward pass of the
//! edge `o_{i-1,t} → T`; forward values never change.

mod cell;
mod paths;
mod schedule;

pub use cell::{
    cell_step, draw_gates, stack_step, unroll_clip, unroll_clip_with_gates, CbmLayerParams, CbmState, CellOutput,
    ClipUnroll, LayerVars, MergeKind, StackConfig, StackStep,
};
pub use paths::expected_backprop_paths;
pub use schedule::TdSchedule;

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum CbmError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("clip has no frames")]
    EmptyClip,
    #[error("temporal dropout rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("state has {state} layers but the stack has {stack}")]
    LayerCountMismatch { state: usize, stack: usize },
    #[error("invalid stack configuration: {0}")]
    InvalidConfig(String),
}
