//! Recovery of sparse non-negative point sources from Gaussian-window
//! samples by a regulariser-free feasibility program, with dual
//! certificates, explicit stability bounds and transport error metrics.

pub mod bounds;
pub mod certificate;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod measure;
pub mod solver;
pub mod transport;
pub mod window;

pub use error::{Error, Result};
