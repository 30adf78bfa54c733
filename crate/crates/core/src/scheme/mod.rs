//! Truncated training over overlapping random clips.
//!
//! A sequence is cut into short clips that overlap their neighbours. Each
//! clip starts from the memory some earlier clip left at the timestamp just
//! before it, so no tape ever spans more than one clip. Where clips overlap,
//! an MSE term pulls their outputs together.

mod clips;
mod objective;
mod registry;
mod store;
mod trainer;

pub use clips::{adjacent_overlap_fractions, sample_clips, Clip, CoherenceConfig};
pub use objective::{coherence_loss, total_objective};
pub use registry::{build_overlap_registry, OverlapPair, OverlapRegistry};
pub use store::{init_clip_state, StateStore};
pub use trainer::{measure_overlap_discrepancy, EpochMetrics, Sequence, Target, TrainConfig, Trainer};

use crate::autodiff::AutodiffError;
use crate::cbm::CbmError;
use crate::optim::OptimError;

#[derive(Debug, thiserror::Error)]
pub enum SchemeError {
    #[error(transparent)]
    Cbm(#[from] CbmError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid coherence config: {0}")]
    InvalidConfig(String),
    #[error("sequence {0} has no frames")]
    EmptySequence(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no output for clip {clip} at t={t}")]
    MissingOutput { clip: usize, t: usize },
    #[error("sequence {sequence} has no label at t={t}")]
    MissingLabel { sequence: usize, t: usize },
    #[error("non-finite loss {value} in sequence {} clip [{}, {})", clip.sequence_id, clip.start, clip.end())]
    NonFiniteLoss { clip: Clip, value: f64 },
}
