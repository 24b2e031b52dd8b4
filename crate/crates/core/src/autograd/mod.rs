//! Dense f64 tensors with a reverse-mode tape.

pub mod gradcheck;
mod graph;
mod layers;
pub mod model_io;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{
    gradcheck, gradcheck_params, gradcheck_params_report, gradcheck_params_report_with,
    gradcheck_params_sampled, gradcheck_report, gradcheck_report_with, rel_error, GradReport,
    Stencil,
};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Linear, Mlp};
pub use optim::{adam_step, Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
