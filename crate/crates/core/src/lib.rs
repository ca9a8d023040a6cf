pub mod cli;
pub mod datasets;
pub mod design;
pub mod error;
pub mod evalsuite;
pub mod experiment;
pub mod kernels;
pub mod linalg;
pub mod markov_gp;
pub mod sparse_vgp;
pub mod stsvgp;

pub use error::{Error, Result};
