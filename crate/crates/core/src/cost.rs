//! Layerwise compute and KV-cache accounting.
//!
//! A decoder layer processing `n` tokens costs `4nd² + 2n²d + 2ndm`
//! multiply-accumulates (projections, attention, feed-forward). FLOPs are
//! reported as exactly twice the MACs. Only the language stack is counted:
//! the vision encoder and the LM head are excluded.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::{KeepingSchedule, ModelDims};

/// Relative tolerance on the parameter returned by [`match_budget`].
pub const MATCH_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub total_flops: f64,
    pub total_macs: f64,
    /// Mean fraction of vision tokens held in the KV cache across layers.
    pub memory_rate: f64,
    pub per_layer_flops: Vec<f64>,
    /// Kept vision tokens per layer (text tokens not included).
    pub kept_tokens: Vec<usize>,
    /// Cost of generating `output_tokens` tokens over the reduced cache.
    /// Not included in `total_flops`.
    pub decode_flops: f64,
}

/// MACs of one layer over `tokens` tokens; real-valued so relaxed token
/// counts can be costed.
pub fn layer_macs(tokens: f64, dims: &ModelDims) -> f64 {
    let d = dims.hidden_size as f64;
    let m = dims.ffn_intermediate as f64;
    4.0 * tokens * d * d + 2.0 * tokens * tokens * d + 2.0 * tokens * d * m
}

pub fn layer_flops(tokens: usize, dims: &ModelDims) -> f64 {
    2.0 * layer_macs(tokens as f64, dims)
}

/// Prefill FLOPs for arbitrary (possibly fractional) total token counts per layer.
pub fn flops_for_token_counts(tokens: &[f64], dims: &ModelDims) -> f64 {
    tokens.iter().map(|&n| 2.0 * layer_macs(n, dims)).sum()
}

fn check_layers(schedule: &KeepingSchedule, dims: &ModelDims) -> Result<()> {
    dims.validate()?;
    if schedule.num_layers() != dims.num_layers {
        return Err(Error::DimensionMismatch {
            expected: dims.num_layers,
            got: schedule.num_layers(),
        });
    }
    Ok(())
}

pub fn schedule_cost(schedule: &KeepingSchedule, dims: &ModelDims) -> Result<CostReport> {
    check_layers(schedule, dims)?;
    let schedule = schedule.clone().checked()?;
    let kept = schedule.token_counts(dims.vision_tokens);
    let text = dims.input_text_tokens;

    let per_layer_macs: Vec<f64> = kept
        .iter()
        .map(|&v| layer_macs((v + text) as f64, dims))
        .collect();
    let total_macs: f64 = per_layer_macs.iter().sum();
    let per_layer_flops: Vec<f64> = per_layer_macs.iter().map(|m| 2.0 * m).collect();

    let kept_total: usize = kept.iter().sum();
    let memory_rate = kept_total as f64 / (dims.num_layers * dims.vision_tokens) as f64;

    Ok(CostReport {
        total_flops: 2.0 * total_macs,
        total_macs,
        memory_rate,
        per_layer_flops,
        decode_flops: decode_flops(&kept, dims),
        kept_tokens: kept,
    })
}

/// Autoregressive generation: each new token runs every layer once and
/// attends over that layer's cached keys plus the tokens generated so far.
fn decode_flops(kept: &[usize], dims: &ModelDims) -> f64 {
    let d = dims.hidden_size as f64;
    let m = dims.ffn_intermediate as f64;
    let mut macs = 0.0;
    for step in 0..dims.output_tokens {
        for &v in kept {
            let context = (v + dims.input_text_tokens + step + 1) as f64;
            macs += 4.0 * d * d + 2.0 * context * d + 2.0 * d * m;
        }
    }
    2.0 * macs
}

/// Prefill FLOPs with un-rounded kept-token counts `r_i * N_v`. Continuous in
/// the rates, which is what budget matching needs.
pub fn relaxed_flops(schedule: &KeepingSchedule, dims: &ModelDims) -> Result<f64> {
    check_layers(schedule, dims)?;
    let nv = dims.vision_tokens as f64;
    let text = dims.input_text_tokens as f64;
    let tokens: Vec<f64> = schedule.rates().iter().map(|r| r * nv + text).collect();
    Ok(flops_for_token_counts(&tokens, dims))
}

/// Finds the family parameter whose schedule costs `target_flops`.
///
/// `family` must be non-decreasing in cost over `domain`. Costs are taken
/// from [`relaxed_flops`]; bisection stops once the bracket is narrower than
/// [`MATCH_REL_TOL`] relative to the parameter.
pub fn match_budget<F>(
    target_flops: f64,
    dims: &ModelDims,
    family: F,
    domain: (f64, f64),
) -> Result<f64>
where
    F: Fn(f64) -> Result<KeepingSchedule>,
{
    let (mut lo, mut hi) = domain;
    if !(lo < hi) {
        return Err(Error::EmptyDomain { lo, hi });
    }
    let cost = |theta: f64| -> Result<f64> { relaxed_flops(&family(theta)?, dims) };
    let (min, max) = (cost(lo)?, cost(hi)?);
    if !(min..=max).contains(&target_flops) {
        return Err(Error::OutOfRange {
            target: target_flops,
            min,
            max,
        });
    }
    if target_flops == min {
        return Ok(lo);
    }
    if target_flops == max {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cost(mid)? < target_flops {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= MATCH_REL_TOL * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let (c_lo, c_hi) = (cost(lo)?, cost(hi)?);
    if (c_lo - target_flops).abs() <= (c_hi - target_flops).abs() {
        Ok(lo)
    } else {
        Ok(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(d: usize, m: usize) -> ModelDims {
        ModelDims {
            num_layers: 4,
            hidden_size: d,
            ffn_intermediate: m,
            vision_tokens: 10,
            input_text_tokens: 1,
            output_tokens: 1,
        }
    }

    #[test]
    fn zero_tokens_cost_nothing() {
        assert_eq!(layer_macs(0.0, &ModelDims::llava_7b()), 0.0);
    }

    #[test]
    fn small_hand_evaluation() {
        assert_eq!(layer_macs(1.0, &dims(2, 3)), 32.0);
        assert_eq!(layer_flops(1, &dims(2, 3)), 64.0);
    }

    #[test]
    fn matches_term_by_term_sum() {
        let (n, d, m) = (100.0f64, 64.0f64, 256.0f64);
        let projections = 4.0 * n * d * d;
        let attention = 2.0 * n * n * d;
        let ffn = 2.0 * n * d * m;
        assert_eq!(
            layer_macs(100.0, &dims(64, 256)),
            projections + attention + ffn
        );
    }

    #[test]
    fn fastv_half_memory_rate() {
        let r = schedule_cost(&KeepingSchedule::uniform(32, 0.5), &ModelDims::llava_7b()).unwrap();
        assert_eq!(r.memory_rate, 0.53125);
        assert_eq!(r.total_flops, 2.0 * r.total_macs);
    }

    #[test]
    fn vtw_memory_rate() {
        let mut rates = vec![1.0; 16];
        rates.extend(vec![0.0; 16]);
        let r = schedule_cost(&KeepingSchedule::new(rates), &ModelDims::llava_7b()).unwrap();
        assert_eq!(r.memory_rate, 0.5);
    }

    #[test]
    fn full_schedule_memory_rate_is_one() {
        let r = schedule_cost(&KeepingSchedule::full(32), &ModelDims::llava_7b()).unwrap();
        assert_eq!(r.memory_rate, 1.0);
        let sum: f64 = r.per_layer_flops.iter().sum();
        assert!((sum - r.total_flops).abs() <= 1e-12 * r.total_flops);
        assert!(r.decode_flops > 0.0);
    }

    #[test]
    fn zero_tail_floor() {
        let dims = ModelDims::llava_7b();
        let r = schedule_cost(&KeepingSchedule::uniform(32, 0.0), &dims).unwrap();
        let floor = 2.0 * layer_flops(576 + 75, &dims) + 30.0 * layer_flops(75, &dims);
        assert!((r.total_flops - floor).abs() <= 1e-9 * floor);
    }

    #[test]
    fn rejects_layer_mismatch() {
        let err = schedule_cost(&KeepingSchedule::full(8), &ModelDims::llava_7b());
        assert!(matches!(
            err,
            Err(Error::DimensionMismatch {
                expected: 32,
                got: 8
            })
        ));
    }

    #[test]
    fn match_budget_fixed_point() {
        let dims = ModelDims::llava_7b();
        let family = |t: f64| Ok(KeepingSchedule::uniform(32, t));
        let target = relaxed_flops(&family(0.25).unwrap(), &dims).unwrap();
        let t = match_budget(target, &dims, family, (0.0, 1.0)).unwrap();
        assert!((t - 0.25).abs() <= 1e-6, "{t}");
    }

    #[test]
    fn match_budget_range_error() {
        let dims = ModelDims::llava_7b();
        let family = |t: f64| Ok(KeepingSchedule::uniform(32, t));
        let floor = relaxed_flops(&family(0.0).unwrap(), &dims).unwrap();
        match match_budget(floor * 0.99, &dims, family, (0.0, 1.0)) {
            Err(Error::OutOfRange { min, max, .. }) => {
                assert_eq!(min, floor);
                assert!(max > min);
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn raising_a_rate_never_lowers_cost(
            tail in prop::collection::vec(0.0f64..=1.0, 30),
            layer in 0usize..30,
            bump in 0.0f64..=1.0,
        ) {
            let dims = ModelDims::llava_7b();
            let base = KeepingSchedule::from_tail(&tail);
            let mut raised = tail.clone();
            raised[layer] = (raised[layer] + bump).min(1.0);
            let raised = KeepingSchedule::from_tail(&raised);
            let a = schedule_cost(&base, &dims).unwrap();
            let b = schedule_cost(&raised, &dims).unwrap();
            prop_assert!(b.total_flops >= a.total_flops);
            prop_assert!(b.memory_rate >= a.memory_rate);
            prop_assert!((0.0..=1.0).contains(&b.memory_rate));
        }
    }
}
