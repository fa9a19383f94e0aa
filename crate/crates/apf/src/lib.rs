//! File formats, dataset loading, run configuration and the `apf` command-line
//! driver around [`apf_core`].

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{AppError, AppResult};
