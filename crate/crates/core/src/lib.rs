//! Open-vocabulary affordance grounding on a frozen dual encoder.

pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod head;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod training;

pub use error::{Error, Result};
