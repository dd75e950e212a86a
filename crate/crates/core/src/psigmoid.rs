//! Parametric sigmoid schedules `r(i) = 2b / (1 + exp(k (i - alpha)))` over
//! layers `3..=L`, with `alpha = (3 + L) / 2`.
//!
//! Rates at `i` and `3 + L - i` always sum to `2b`, so the tail of an
//! unclamped schedule keeps `(L - 2) * b` tokens in total whatever `k` is.
//! For `b > 0.5` early rates would exceed 1 and are clamped; the achieved
//! budget is then below the requested one.

use serde::{Deserialize, Serialize};

use crate::bayes::{bo_maximize, BoConfig, BoResult};
use crate::cost::match_budget;
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::schedule::{KeepingSchedule, ModelDims, UNREDUCED_LAYERS};

/// Upper end of the steepness search; beyond it the curve is a step function
/// at double precision for L <= 64.
pub const K_MAX: f64 = 20.0;

const FIT_GRID_POINTS: usize = 200;
const FIT_K_RANGE: (f64, f64) = (1e-3, 100.0);
const FIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PSigmoidParams {
    pub b: f64,
    pub k: f64,
    pub alpha: f64,
    pub num_layers: usize,
}

impl PSigmoidParams {
    pub fn new(b: f64, k: f64, num_layers: usize) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::InvalidParams(format!("budget {b} outside (0, 1]")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "steepness {k} must be non-negative"
            )));
        }
        if num_layers <= UNREDUCED_LAYERS {
            return Err(Error::InvalidParams(format!(
                "need more than {UNREDUCED_LAYERS} layers, got {num_layers}"
            )));
        }
        Ok(Self {
            b,
            k,
            alpha: midpoint(num_layers),
            num_layers,
        })
    }
}

fn midpoint(num_layers: usize) -> f64 {
    (3 + num_layers) as f64 / 2.0
}

fn raw_rate(i: usize, b: f64, k: f64, alpha: f64) -> f64 {
    (2.0 * b / (1.0 + (k * (i as f64 - alpha)).exp())).min(1.0)
}

/// Rate at 1-based layer `i`, `3 <= i <= L`.
pub fn sigmoid_rate(i: usize, params: &PSigmoidParams) -> Result<f64> {
    if i <= UNREDUCED_LAYERS || i > params.num_layers {
        return Err(Error::LayerOutOfRange {
            layer: i,
            num_layers: params.num_layers,
        });
    }
    Ok(raw_rate(i, params.b, params.k, params.alpha))
}

fn tail_rates(b: f64, k: f64, num_layers: usize) -> Vec<f64> {
    let alpha = midpoint(num_layers);
    (UNREDUCED_LAYERS + 1..=num_layers)
        .map(|i| raw_rate(i, b, k, alpha))
        .collect()
}

pub fn schedule_from_params(params: &PSigmoidParams) -> KeepingSchedule {
    KeepingSchedule::from_tail(&tail_rates(params.b, params.k, params.num_layers)).tagged_monotone()
}

/// Mean tail rate actually realized; equals `b` unless clamping kicked in.
pub fn achieved_budget(params: &PSigmoidParams) -> f64 {
    let tail = tail_rates(params.b, params.k, params.num_layers);
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// BO settings for the steepness search: `k` in `[0, K_MAX]`.
pub fn default_k_search_config(seed: u64) -> BoConfig {
    BoConfig {
        num_initial_samples: 10,
        num_iterations: 15,
        domain_lo: 0.0,
        domain_hi: K_MAX,
        acquisition_grid_size: 201,
        rng_seed: seed,
    }
}

#[derive(Debug, Clone)]
pub struct KSearchOutcome {
    pub params: PSigmoidParams,
    pub schedule: KeepingSchedule,
    pub value: f64,
    pub trials: BoResult,
}

/// Searches the steepness maximizing `evaluator` at a fixed budget.
pub fn k_search<E: Evaluator + ?Sized>(
    evaluator: &E,
    budget: f64,
    num_layers: usize,
    bo: &BoConfig,
) -> Result<KSearchOutcome> {
    PSigmoidParams::new(budget, 0.0, num_layers)?;
    if bo.domain_lo < 0.0 {
        return Err(Error::InvalidConfig(
            "steepness domain must be non-negative".into(),
        ));
    }
    let trials = bo_maximize(
        |k| {
            let p = PSigmoidParams::new(budget, k, num_layers)?;
            evaluator.evaluate(&schedule_from_params(&p))
        },
        bo,
    )?;
    let params = PSigmoidParams::new(budget, trials.best_x, num_layers)?;
    Ok(KSearchOutcome {
        schedule: schedule_from_params(&params),
        value: trials.best_value,
        params,
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitResult {
    pub params: PSigmoidParams,
    /// Sum of squared rate errors over layers 3..=L.
    pub residual: f64,
}

fn sse(tail: &[f64], b: f64, k: f64, num_layers: usize) -> f64 {
    tail_rates(b, k, num_layers)
        .iter()
        .zip(tail)
        .map(|(f, r)| (f - r).powi(2))
        .sum()
}

/// Least-squares fit of the steepness with the budget pinned to the mean
/// tail rate. Candidates are `k = 0` plus a log grid over
/// `[1e-3, 100]`; the best one is refined by golden-section search.
pub fn fit_psigmoid(schedule: &KeepingSchedule) -> Result<FitResult> {
    let num_layers = schedule.num_layers();
    if num_layers < 4 {
        return Err(Error::InvalidParams(format!(
            "fitting needs at least 4 layers, got {num_layers}"
        )));
    }
    let violations = schedule.clone().tagged_monotone().validate();
    if !violations.is_empty() {
        return Err(Error::InvalidSchedule(violations));
    }
    let tail = schedule.tail();
    let b = tail.iter().sum::<f64>() / tail.len() as f64;
    PSigmoidParams::new(b, 0.0, num_layers)?;

    let (lo, hi) = FIT_K_RANGE;
    let ratio = (hi / lo).powf(1.0 / (FIT_GRID_POINTS - 1) as f64);
    let mut candidates = vec![0.0];
    candidates.extend((0..FIT_GRID_POINTS).map(|j| lo * ratio.powi(j as i32)));

    let objective = |k: f64| sse(tail, b, k, num_layers);
    let (best_idx, _) = candidates
        .iter()
        .enumerate()
        .map(|(j, &k)| (j, objective(k)))
        .fold(
            (0, f64::INFINITY),
            |acc, (j, v)| if v < acc.1 { (j, v) } else { acc },
        );

    let a = candidates[best_idx.saturating_sub(1)];
    let c = candidates[(best_idx + 1).min(candidates.len() - 1)];
    let refined = golden_section(objective, a, c, FIT_TOL);
    let k = [candidates[best_idx], refined]
        .into_iter()
        .min_by(|x, y| objective(*x).total_cmp(&objective(*y)))
        .unwrap();

    Ok(FitResult {
        params: PSigmoidParams::new(b, k, num_layers)?,
        residual: objective(k),
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Budget `b` whose sigmoid schedule at steepness `k` costs `target_flops`
/// under the relaxed cost model.
pub fn budget_for_flops(target_flops: f64, dims: &ModelDims, k: f64) -> Result<f64> {
    dims.validate()?;
    PSigmoidParams::new(1.0, k, dims.num_layers)?;
    let layers = dims.num_layers;
    match_budget(
        target_flops,
        dims,
        |b| Ok(KeepingSchedule::from_tail(&tail_rates(b, k, layers))),
        (0.0, 1.0),
    )
}
