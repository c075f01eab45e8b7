//! Continuous-time gated recurrent units for event sequences.
//!
//! The CT-GRU keeps, for every hidden unit, a trace per timescale in a
//! fixed log-spaced bank. Gates pick a timescale for storage and retrieval
//! through a softmax over the bank, and every trace decays exponentially
//! between events. The crate holds the cells, exact backpropagation,
//! synthetic benchmark generators, training and evaluation.

pub mod autodiff;
pub mod cells;
pub mod datasets;
mod error;
pub mod math;
pub mod metrics;
pub mod model;
mod precise;
pub mod timescales;
pub mod training;

pub use cells::HeadKind;
pub use datasets::{Dataset, Event, EventSequence, SyntheticTask, Targets, Task};
pub use error::{Error, Result};
pub use math::{Matrix, RngStream, Vector};
pub use model::{Arch, DtFeature, Gradients, ModelParams, ModelSpec};
pub use timescales::{build_bank, TimescaleBank};
