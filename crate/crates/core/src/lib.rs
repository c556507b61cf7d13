pub mod autodiff;
pub mod cli;
pub mod data;
pub mod detect;
pub mod nn;
pub mod train;
pub mod verify;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
