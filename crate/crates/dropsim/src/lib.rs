//! Driver library: configuration, diagnostics, I/O, run loop and validation cases.

pub mod cases;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod runner;

pub use error::{AppError, AppResult};
