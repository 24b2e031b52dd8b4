pub mod adaformer;
pub mod autograd;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod io_util;
pub mod trackers;
pub mod unify;
pub mod verify;

pub use error::{Error, Result};
