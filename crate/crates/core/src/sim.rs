//! Sort & Reduce simulation against a synthetic oracle with known optimum.
//!
//! The oracle draws nested essential token sets `E_3 ⊇ E_4 ⊇ … ⊇ E_L` and
//! produces an attention trace in which, from layer 2 on, every token's score
//! is an AR(1) noise term plus `ESSENTIAL_BONUS` times its depth (the number
//! of essential sets containing it). The noise term stays in `[0, 1)` while
//! `noise_scale <= NOISE_THRESHOLD`, so deeper tokens strictly outrank
//! shallower ones and `E_i` is exactly the top `|E_i|` tokens at layer `i-1`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::rank::descending_order;
use crate::schedule::{AttentionTrace, KeepingSchedule, UNREDUCED_LAYERS};

/// Score added per essential set a token belongs to.
pub const ESSENTIAL_BONUS: f64 = 2.0;
/// Largest `noise_scale` for which the essential ordering is guaranteed.
pub const NOISE_THRESHOLD: f64 = 1.0;

/// Serialized oracle description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// `|E_i|` for layers 3..=L; non-increasing.
    pub essential_sizes: Vec<usize>,
    pub n_tokens: usize,
    pub rho: f64,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: OracleSpec,
    /// `essential_sets[k]` is `E_{k+3}`, sorted ascending.
    essential_sets: Vec<Vec<usize>>,
    depth: Vec<usize>,
    trace: AttentionTrace,
}

impl SyntheticOracle {
    pub fn new(spec: OracleSpec) -> Result<Self> {
        if spec.n_tokens == 0 {
            return Err(Error::InvalidOracle("n_tokens must be positive".into()));
        }
        if spec.essential_sizes.is_empty() {
            return Err(Error::InvalidOracle(
                "need essential sizes for at least one layer".into(),
            ));
        }
        if spec.essential_sizes.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidOracle(
                "essential sizes must not increase along layers".into(),
            ));
        }
        if spec.essential_sizes[0] > spec.n_tokens {
            return Err(Error::InvalidOracle(format!(
                "|E_3| = {} exceeds {} tokens",
                spec.essential_sizes[0], spec.n_tokens
            )));
        }
        if !(0.0..=1.0).contains(&spec.rho) {
            return Err(Error::InvalidOracle(format!(
                "rho {} outside [0, 1]",
                spec.rho
            )));
        }
        if !(0.0..=NOISE_THRESHOLD).contains(&spec.noise) {
            return Err(Error::InvalidOracle(format!(
                "noise {} outside [0, {NOISE_THRESHOLD}]: essential tokens would not be guaranteed top-ranked",
                spec.noise
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut perm: Vec<usize> = (0..spec.n_tokens).collect();
        perm.shuffle(&mut rng);
        let essential_sets: Vec<Vec<usize>> = spec
            .essential_sizes
            .iter()
            .map(|&size| {
                let mut set = perm[..size].to_vec();
                set.sort_unstable();
                set
            })
            .collect();
        let mut depth = vec![0usize; spec.n_tokens];
        for set in &essential_sets {
            for &v in set {
                depth[v] += 1;
            }
        }

        let num_layers = spec.essential_sizes.len() + UNREDUCED_LAYERS;
        let mut base: Vec<f64> = (0..spec.n_tokens).map(|_| rng.gen::<f64>()).collect();
        let mut rows = Vec::with_capacity(num_layers);
        rows.push(base.clone());
        for _ in 1..num_layers {
            for b in base.iter_mut() {
                *b = spec.rho * *b + (1.0 - spec.rho) * spec.noise * rng.gen::<f64>();
            }
            rows.push(
                base.iter()
                    .zip(&depth)
                    .map(|(b, &d)| b + ESSENTIAL_BONUS * d as f64)
                    .collect(),
            );
        }
        let trace = AttentionTrace::from_rows(rows)?;

        let oracle = Self {
            spec,
            essential_sets,
            depth,
            trace,
        };
        oracle.assert_essential_on_top()?;
        Ok(oracle)
    }

    /// Ground truth is only meaningful if `E_i` tops layer `i-1`'s scores.
    fn assert_essential_on_top(&self) -> Result<()> {
        for (k, set) in self.essential_sets.iter().enumerate() {
            let layer = k + UNREDUCED_LAYERS + 1;
            let order = descending_order(self.trace.layer(layer - 1)?);
            let mut top = order[..set.len()].to_vec();
            top.sort_unstable();
            if &top != set {
                return Err(Error::InvalidOracle(format!(
                    "essential set of layer {layer} is not top-ranked"
                )));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.essential_sets.len() + UNREDUCED_LAYERS
    }

    pub fn n_tokens(&self) -> usize {
        self.spec.n_tokens
    }

    /// `E_layer` for `3 <= layer <= L`.
    pub fn essential_set(&self, layer: usize) -> Result<&[usize]> {
        if layer <= UNREDUCED_LAYERS || layer > self.num_layers() {
            return Err(Error::LayerOutOfRange {
                layer,
                num_layers: self.num_layers(),
            });
        }
        Ok(&self.essential_sets[layer - UNREDUCED_LAYERS - 1])
    }

    /// Number of essential sets each token belongs to.
    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    /// `|E_i| / N` for layers 3..=L.
    pub fn essential_fractions(&self) -> Vec<f64> {
        self.spec
            .essential_sizes
            .iter()
            .map(|&s| s as f64 / self.spec.n_tokens as f64)
            .collect()
    }

    pub fn trace(&self) -> &AttentionTrace {
        &self.trace
    }

    /// Runs Sort & Reduce through every layer and records recall of each
    /// layer's essential set.
    pub fn run(&self, schedule: &KeepingSchedule) -> Result<ReductionRun> {
        let num_layers = self.num_layers();
        if schedule.num_layers() != num_layers {
            return Err(Error::DimensionMismatch {
                expected: num_layers,
                got: schedule.num_layers(),
            });
        }
        let schedule = schedule.clone().checked()?;
        let counts = schedule.token_counts(self.spec.n_tokens);

        let all: Vec<usize> = (0..self.spec.n_tokens).collect();
        let mut kept_indices = vec![all.clone(); UNREDUCED_LAYERS];
        let mut layer_recall = Vec::with_capacity(num_layers - UNREDUCED_LAYERS);
        let mut current = all;
        for layer in UNREDUCED_LAYERS + 1..=num_layers {
            let prev_scores = self.trace.layer(layer - 1)?;
            current = sort_and_reduce(prev_scores, &current, counts[layer - 1])?;
            let essential = self.essential_set(layer)?;
            layer_recall.push(recall(&current, essential));
            kept_indices.push(current.clone());
        }
        let score = layer_recall.iter().sum::<f64>() / layer_recall.len() as f64;
        Ok(ReductionRun {
            kept_indices,
            layer_recall,
            schedule,
            score,
        })
    }
}

impl Evaluator for SyntheticOracle {
    fn evaluate(&self, schedule: &KeepingSchedule) -> Result<f64> {
        Ok(self.run(schedule)?.score)
    }
}

/// Fraction of `essential` present in `kept` (both sorted); 1.0 when
/// nothing is essential.
fn recall(kept: &[usize], essential: &[usize]) -> f64 {
    if essential.is_empty() {
        return 1.0;
    }
    let hits = essential
        .iter()
        .filter(|v| kept.binary_search(v).is_ok())
        .count();
    hits as f64 / essential.len() as f64
}

/// Outcome of one simulated inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRun {
    /// Kept token indices per layer (1-based layer `i` at position `i-1`),
    /// each sorted ascending.
    pub kept_indices: Vec<Vec<usize>>,
    /// Essential recall for layers 3..=L.
    pub layer_recall: Vec<f64>,
    pub schedule: KeepingSchedule,
    pub score: f64,
}

impl ReductionRun {
    pub fn kept_counts(&self) -> Vec<usize> {
        self.kept_indices.iter().map(Vec::len).collect()
    }
}

/// Keeps the `n_target` members of `kept` with the highest `prev_scores`,
/// ties by ascending index. Returns the survivors sorted ascending.
pub fn sort_and_reduce(prev_scores: &[f64], kept: &[usize], n_target: usize) -> Result<Vec<usize>> {
    if n_target > kept.len() {
        return Err(Error::TooManyTokens {
            requested: n_target,
            available: kept.len(),
        });
    }
    if let Some(&bad) = kept.iter().find(|&&v| v >= prev_scores.len()) {
        return Err(Error::SizeMismatch {
            left: bad + 1,
            right: prev_scores.len(),
        });
    }
    let mut order = kept.to_vec();
    order.sort_by(|&a, &b| {
        prev_scores[b]
            .partial_cmp(&prev_scores[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order.truncate(n_target);
    order.sort_unstable();
    Ok(order)
}
