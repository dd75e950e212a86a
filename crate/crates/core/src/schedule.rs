//! Shared domain types: keeping schedules, model dimensions and attention traces.
//!
//! Layers are 1-based in every public accessor. A schedule always stores all
//! `L` rates, including the two leading layers that are never reduced.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layers at the front of the stack that always keep every vision token.
pub const UNREDUCED_LAYERS: usize = 2;

/// Per-layer fraction of the original vision tokens kept at each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KeepingSchedule {
    rates: Vec<f64>,
    monotone: bool,
}

/// One broken schedule invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    NonFinite {
        layer: usize,
    },
    OutOfRange {
        layer: usize,
        rate: f64,
    },
    LeadingNotFull {
        layer: usize,
        rate: f64,
    },
    NonMonotone {
        layer: usize,
        rate: f64,
        previous: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "schedule has no layers"),
            Violation::NonFinite { layer } => write!(f, "layer {layer}: rate is not finite"),
            Violation::OutOfRange { layer, rate } => {
                write!(f, "layer {layer}: rate {rate} outside [0, 1]")
            }
            Violation::LeadingNotFull { layer, rate } => {
                write!(f, "first two layers must be 1.0 (layer {layer} has {rate})")
            }
            Violation::NonMonotone {
                layer,
                rate,
                previous,
            } => write!(
                f,
                "monotonicity: layer {layer} rate {rate} exceeds previous {previous}"
            ),
        }
    }
}

impl KeepingSchedule {
    /// Wraps raw rates without checking them. Use [`validate`](Self::validate)
    /// or [`checked`](Self::checked) before relying on the invariants.
    pub fn new(rates: Vec<f64>) -> Self {
        Self {
            rates,
            monotone: false,
        }
    }

    /// All-ones schedule: nothing is removed.
    pub fn full(num_layers: usize) -> Self {
        Self::new(vec![1.0; num_layers]).tagged_monotone()
    }

    /// `1.0` for the leading layers followed by `tail` (layers 3..=L).
    pub fn from_tail(tail: &[f64]) -> Self {
        let mut rates = vec![1.0; UNREDUCED_LAYERS];
        rates.extend_from_slice(tail);
        Self::new(rates)
    }

    /// Uniform rate after the leading layers, as used by single-cut pruning.
    pub fn uniform(num_layers: usize, rate: f64) -> Self {
        let tail = vec![rate; num_layers.saturating_sub(UNREDUCED_LAYERS)];
        let mut s = Self::from_tail(&tail);
        s.rates.truncate(num_layers);
        s.tagged_monotone()
    }

    /// Marks the schedule as monotone; [`validate`](Self::validate) then also
    /// checks the non-increasing invariant.
    pub fn tagged_monotone(mut self) -> Self {
        self.monotone = true;
        self
    }

    pub fn is_tagged_monotone(&self) -> bool {
        self.monotone
    }

    pub fn num_layers(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Rates for layers 3..=L.
    pub fn tail(&self) -> &[f64] {
        &self.rates[UNREDUCED_LAYERS.min(self.rates.len())..]
    }

    /// Rate at a 1-based layer index.
    pub fn rate(&self, layer: usize) -> Result<f64> {
        if layer == 0 || layer > self.rates.len() {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.rates.len(),
            });
        }
        Ok(self.rates[layer - 1])
    }

    /// Whether rates are non-increasing from layer 2 on.
    pub fn is_non_increasing(&self) -> bool {
        self.rates.windows(2).skip(1).all(|w| w[1] <= w[0])
    }

    /// Lists every violated invariant; empty when the schedule is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.rates.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        for (idx, &rate) in self.rates.iter().enumerate() {
            let layer = idx + 1;
            if !rate.is_finite() {
                out.push(Violation::NonFinite { layer });
                continue;
            }
            if !(0.0..=1.0).contains(&rate) {
                out.push(Violation::OutOfRange { layer, rate });
            }
            if layer <= UNREDUCED_LAYERS && rate != 1.0 {
                out.push(Violation::LeadingNotFull { layer, rate });
            }
        }
        if self.monotone {
            for idx in 2..self.rates.len() {
                let (previous, rate) = (self.rates[idx - 1], self.rates[idx]);
                if rate > previous {
                    out.push(Violation::NonMonotone {
                        layer: idx + 1,
                        rate,
                        previous,
                    });
                }
            }
        }
        out
    }

    pub fn checked(self) -> Result<Self> {
        let v = self.validate();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidSchedule(v))
        }
    }

    /// Kept vision tokens per layer: `floor(r_i * N + 0.5)`, clamped to the
    /// previous layer's count for monotone-tagged schedules.
    pub fn token_counts(&self, vision_tokens: usize) -> Vec<usize> {
        let n = vision_tokens as f64;
        let mut out: Vec<usize> = Vec::with_capacity(self.rates.len());
        for &rate in &self.rates {
            let mut count = round_half_up(rate * n).min(vision_tokens);
            if self.monotone {
                if let Some(&prev) = out.last() {
                    count = count.min(prev);
                }
            }
            out.push(count);
        }
        out
    }

    /// Mean keeping rate over all layers, i.e. the KV-cache memory fraction.
    pub fn mean_rate(&self) -> f64 {
        self.rates.iter().sum::<f64>() / self.rates.len() as f64
    }
}

fn round_half_up(x: f64) -> usize {
    let r = (x + 0.5).floor();
    if r <= 0.0 {
        0
    } else {
        r as usize
    }
}

/// Transformer dimensions that parameterize the cost model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub ffn_intermediate: usize,
    pub vision_tokens: usize,
    pub input_text_tokens: usize,
    pub output_tokens: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("ffn_intermediate", self.ffn_intermediate),
            ("vision_tokens", self.vision_tokens),
            ("input_text_tokens", self.input_text_tokens),
            ("output_tokens", self.output_tokens),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::InvalidDims(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// LLaVA-1.5-7B-like dimensions (LLaMA-7B language stack, 24x24 patch grid).
    pub fn llava_7b() -> Self {
        Self {
            num_layers: 32,
            hidden_size: 4096,
            ffn_intermediate: 11008,
            vision_tokens: 576,
            input_text_tokens: 75,
            output_tokens: 5,
        }
    }
}

/// Per-layer attention mass of each vision token toward the instruction tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    num_layers: usize,
    num_tokens: usize,
    scores: Vec<f64>,
}

impl AttentionTrace {
    /// Builds a trace from one score row per layer.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let num_layers = rows.len();
        if num_layers == 0 {
            return Err(Error::InvalidTrace("no layers".into()));
        }
        let num_tokens = rows[0].len();
        if num_tokens == 0 {
            return Err(Error::InvalidTrace("no tokens".into()));
        }
        let mut scores = Vec::with_capacity(num_layers * num_tokens);
        for (idx, row) in rows.into_iter().enumerate() {
            if row.len() != num_tokens {
                return Err(Error::InvalidTrace(format!(
                    "layer {} has {} scores, expected {num_tokens}",
                    idx + 1,
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|s| !s.is_finite() || **s < 0.0) {
                return Err(Error::InvalidTrace(format!(
                    "layer {} has invalid score {bad}",
                    idx + 1
                )));
            }
            scores.extend(row);
        }
        Ok(Self {
            num_layers,
            num_tokens,
            scores,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn num_tokens(&self) -> usize {
        self.num_tokens
    }

    /// Score row of a 1-based layer.
    pub fn layer(&self, layer: usize) -> Result<&[f64]> {
        if layer == 0 || layer > self.num_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.num_layers,
            });
        }
        let start = (layer - 1) * self.num_tokens;
        Ok(&self.scores[start..start + self.num_tokens])
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.scores.chunks(self.num_tokens)
    }
}
