//! Search and analysis of layerwise vision-token keeping-rate schedules.

pub mod bayes;
pub mod cost;
pub mod error;
pub mod evaluator;
pub mod gsearch;
pub mod io;
pub mod psigmoid;
pub mod rank;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
pub use evaluator::Evaluator;
pub use schedule::{AttentionTrace, KeepingSchedule, ModelDims, Violation};
