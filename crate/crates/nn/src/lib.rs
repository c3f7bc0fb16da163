//! A small reverse-mode autodiff engine and the convolutional feature
//! extractors built on it: a bottleneck ResNet and a plain CNN baseline,
//! each with a scalar regression head, trained with Adam on MSE.
//!
//! All tensors are generic over [`roc_core::Scalar`]; the `*64`/`*32`
//! aliases name the two instantiations.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod models;
pub mod optim;
pub mod param;
pub mod serialize;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use gradcheck::{check_coordinates, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::Mode;
pub use models::{Model, ResNetConfig};
pub use optim::Adam;
pub use param::{ParamId, ParamStore, Parameter};
pub use serialize::TensorFile;
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainedModel};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type TrainedModel64 = TrainedModel<f64>;
pub type TrainedModel32 = TrainedModel<f32>;
