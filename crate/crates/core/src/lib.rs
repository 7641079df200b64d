pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod signal;
pub mod solver;
pub mod spectral;
pub mod subdiff;
pub mod verify;

pub use error::{Error, Result};
