//! Illusory-motion benchmark toolkit: stimulus synthesis, viewing simulation,
//! percept targets, flow scoring, a motion-energy flow estimator, and the
//! batch harness tying them together.

pub mod error;
pub mod field;
pub mod flowio;
pub mod harness;
pub mod meflow;
pub mod metrics;
mod par;
pub mod percept;
pub mod stimgen;
pub mod viewsim;

pub use error::{Error, Result};
pub use field::FlowField;
