pub mod error;
pub mod autodiff;
pub mod grid;
pub mod io;
pub mod models;
pub mod nn;
pub mod ns;
pub mod plot;
pub mod train;
pub mod workflow;

pub use error::{Error, Result};
