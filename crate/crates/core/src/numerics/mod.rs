//! Dense tensors with reverse-mode automatic differentiation, an Adam
//! optimizer and a finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod params;
pub mod rng;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, HasParams, ParamCheck, FD_STEP};
pub use graph::{Gradients, Graph, NodeId, MASK_VALUE};
pub use params::ParamStore;
pub use tensor::{Element, Tensor};
