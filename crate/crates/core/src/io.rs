//! JSON file formats for schedules and traces.
//!
//! Floats are written in shortest round-trip form and parsed with correct
//! rounding, so every finite `f64` survives a write/read cycle bit for bit.
//! Files may carry an optional `meta` object describing the producing run;
//! readers ignore it.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::schedule::{AttentionTrace, KeepingSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub num_layers: usize,
    pub rates: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub num_layers: usize,
    pub num_tokens: usize,
    pub scores: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

impl ScheduleFile {
    pub fn new(schedule: &KeepingSchedule, meta: Option<Value>) -> Self {
        Self {
            num_layers: schedule.num_layers(),
            rates: schedule.rates().to_vec(),
            meta,
        }
    }

    pub fn into_schedule(self) -> Result<KeepingSchedule> {
        if self.num_layers != self.rates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.num_layers,
                got: self.rates.len(),
            });
        }
        Ok(KeepingSchedule::new(self.rates))
    }
}

impl TraceFile {
    pub fn new(trace: &AttentionTrace, meta: Option<Value>) -> Self {
        Self {
            num_layers: trace.num_layers(),
            num_tokens: trace.num_tokens(),
            scores: trace.rows().map(<[f64]>::to_vec).collect(),
            meta,
        }
    }

    pub fn into_trace(self) -> Result<AttentionTrace> {
        if self.num_layers != self.scores.len() {
            return Err(Error::DimensionMismatch {
                expected: self.num_layers,
                got: self.scores.len(),
            });
        }
        let trace = AttentionTrace::from_rows(self.scores)?;
        if trace.num_tokens() != self.num_tokens {
            return Err(Error::InvalidTrace(format!(
                "num_tokens is {} but rows hold {}",
                self.num_tokens,
                trace.num_tokens()
            )));
        }
        Ok(trace)
    }
}

pub fn schedule_to_json(schedule: &KeepingSchedule, meta: Option<Value>) -> String {
    to_pretty(&ScheduleFile::new(schedule, meta))
}

pub fn schedule_from_json(text: &str) -> Result<KeepingSchedule> {
    serde_json::from_str::<ScheduleFile>(text)?.into_schedule()
}

pub fn trace_to_json(trace: &AttentionTrace, meta: Option<Value>) -> String {
    to_pretty(&TraceFile::new(trace, meta))
}

pub fn trace_from_json(text: &str) -> Result<AttentionTrace> {
    serde_json::from_str::<TraceFile>(text)?.into_trace()
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization");
    s.push('\n');
    s
}
