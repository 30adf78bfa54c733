pub mod autodiff;
pub mod cbm;
pub mod model;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod scheme;
pub mod tasks;
pub mod tensor;

pub use model::CbmModel;
pub use scalar::Scalar;
pub use tensor::{ShapeError, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Model64 = CbmModel<f64>;
pub type Model32 = CbmModel<f32>;
pub type Trainer64 = scheme::Trainer<f64>;
pub type Trainer32 = scheme::Trainer<f32>;
