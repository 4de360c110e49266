//! Numeric core: dense `f64` tensors, a reverse-mode autodiff tape,
//! SGD/Adam/AdamW and a reduce-on-plateau learning-rate schedule.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod param;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use param::{prefixed, prefixed_mut, Module, ParamId, Parameter};
pub use schedule::PlateauScheduler;
pub use tensor::Tensor;
