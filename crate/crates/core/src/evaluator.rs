use crate::error::Result;
use crate::schedule::KeepingSchedule;

/// Scores a complete keeping schedule; higher is better.
///
/// Searches assume implementations are deterministic.
pub trait Evaluator {
    fn evaluate(&self, schedule: &KeepingSchedule) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&KeepingSchedule) -> Result<f64>,
{
    fn evaluate(&self, schedule: &KeepingSchedule) -> Result<f64> {
        self(schedule)
    }
}
