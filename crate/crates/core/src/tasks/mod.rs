//! Synthetic video tasks: shapes drifting across the frame, and a glyph
//! stream where the model reports how long ago a single "cat" frame appeared.

mod catdog;
mod container;
mod metrics;
mod moving_shapes;

pub use catdog::{catdog_labels, gen_catdog, glyphs, CatDogConfig, CatDogSequence};
pub use container::{Dataset, DATASET_MAGIC, DATASET_VERSION};
pub use metrics::{classification_metrics, distance_metrics, evaluate_classification, evaluate_distance, TaskMetrics};
pub use moving_shapes::{
    gen_moving_shapes, joint_label, shape_mask, Direction, MovingShapeSample, MovingShapesConfig, ShapeClass, SHAPE_SIZE,
};

use crate::cbm::CbmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    MovingShapes = 0,
    CatDog = 1,
}

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task config: {0}")]
    InvalidConfig(String),
    #[error("sequence {0} has the wrong kind of target for this task")]
    WrongTarget(usize),
    #[error("sequence {0} has no frames")]
    EmptySequence(usize),
    #[error(transparent)]
    Model(#[from] CbmError),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
