//! Self-supervised pretraining for multi-lead ECG.

pub mod error;
pub mod fda;
pub mod model;
pub mod objectives;
pub mod seed;
pub mod signal;
pub mod stdm;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
