//! Greedy front-to-back keeping-rate search.
//!
//! Layer `i` picks the rate maximizing `E(schedule) - lambda * r_i` over the
//! rate grid restricted to `r_i <= r_{i-1}`, where layers deeper than `i`
//! provisionally inherit the candidate rate. Ties go to the lowest rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bayes::{bo_maximize, linspace, BoConfig};
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::schedule::{KeepingSchedule, UNREDUCED_LAYERS};

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_STRIDE: usize = 3;
pub const DEFAULT_GRID_POINTS: usize = 21;
/// Grids up to this size are searched exhaustively by default.
pub const EXHAUSTIVE_GRID_LIMIT: usize = 32;
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SearchMode {
    Exhaustive,
    Bayesian(BoConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GSearchConfig {
    pub lambda: f64,
    pub stride: usize,
    pub rate_grid: Vec<f64>,
    pub mode: SearchMode,
}

impl Default for GSearchConfig {
    fn default() -> Self {
        Self::with_grid_points(DEFAULT_GRID_POINTS)
    }
}

impl GSearchConfig {
    /// Evenly spaced grid over `[0, 1]`; the mode follows the grid size.
    pub fn with_grid_points(points: usize) -> Self {
        let rate_grid = linspace(0.0, 1.0, points.max(1));
        let mode = if points <= EXHAUSTIVE_GRID_LIMIT {
            SearchMode::Exhaustive
        } else {
            SearchMode::Bayesian(BoConfig::default())
        };
        Self {
            lambda: DEFAULT_LAMBDA,
            stride: DEFAULT_STRIDE,
            rate_grid,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        let g = &self.rate_grid;
        if g.is_empty() {
            return Err(Error::InvalidConfig("rate grid is empty".into()));
        }
        if g.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig("rate grid must lie in [0, 1]".into()));
        }
        if g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "rate grid must be strictly increasing".into(),
            ));
        }
        if *g.last().unwrap() != 1.0 {
            return Err(Error::InvalidConfig("rate grid must contain 1.0".into()));
        }
        if let SearchMode::Bayesian(bo) = &self.mode {
            if bo.num_initial_samples < 2 {
                return Err(Error::InvalidConfig(
                    "num_initial_samples must be at least 2".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetValue {
    pub performance: f64,
    pub target: f64,
}

/// One evaluated candidate during the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditRow {
    pub layer: usize,
    pub candidate_rate: f64,
    pub performance: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GSearchOutcome {
    pub schedule: KeepingSchedule,
    pub audit: Vec<AuditRow>,
}

impl GSearchOutcome {
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("layer,candidate_rate,E,f\n");
        for r in &self.audit {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.layer, r.candidate_rate, r.performance, r.target
            ));
        }
        out
    }
}

/// `E(prefix ⊕ rate ⊕ rate …) - lambda * rate` for the layer right after
/// `prefix` (which holds rates of layers 3..i-1).
pub fn layer_target<E: Evaluator + ?Sized>(
    evaluator: &E,
    num_layers: usize,
    prefix: &[f64],
    rate: f64,
    lambda: f64,
) -> Result<TargetValue> {
    let searchable = num_layers.saturating_sub(UNREDUCED_LAYERS);
    if prefix.len() >= searchable {
        return Err(Error::LayerOutOfRange {
            layer: prefix.len() + UNREDUCED_LAYERS + 1,
            num_layers,
        });
    }
    let previous = prefix.last().copied().unwrap_or(1.0);
    if rate > previous {
        return Err(Error::ConstraintViolation { rate, previous });
    }
    let mut tail = prefix.to_vec();
    tail.resize(searchable, rate);
    let performance = evaluator.evaluate(&KeepingSchedule::from_tail(&tail))?;
    Ok(TargetValue {
        performance,
        target: performance - lambda * rate,
    })
}

/// Whole-schedule objective: the per-layer target summed over layers 3..=L,
/// `(L-2) * E(R) - lambda * Σ r_i`.
pub fn schedule_objective<E: Evaluator + ?Sized>(
    evaluator: &E,
    schedule: &KeepingSchedule,
    lambda: f64,
) -> Result<f64> {
    let tail = schedule.tail();
    let e = evaluator.evaluate(schedule)?;
    Ok(tail.len() as f64 * e - lambda * tail.iter().sum::<f64>())
}

fn nearest(candidates: &[f64], x: f64) -> f64 {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if (c - x).abs() < (best - x).abs() {
            best = c;
        }
    }
    best
}

pub fn g_search<E: Evaluator + ?Sized>(
    evaluator: &E,
    num_layers: usize,
    config: &GSearchConfig,
) -> Result<GSearchOutcome> {
    config.validate()?;
    if num_layers <= UNREDUCED_LAYERS {
        return Ok(GSearchOutcome {
            schedule: KeepingSchedule::full(num_layers),
            audit: Vec::new(),
        });
    }
    let searchable = num_layers - UNREDUCED_LAYERS;
    let mut tail: Vec<f64> = Vec::with_capacity(searchable);
    let mut audit = Vec::new();

    while tail.len() < searchable {
        let layer = tail.len() + UNREDUCED_LAYERS + 1;
        let previous = tail.last().copied().unwrap_or(1.0);
        let candidates: Vec<f64> = config
            .rate_grid
            .iter()
            .copied()
            .filter(|&r| r <= previous)
            .collect();
        let wrap = |e: Error| Error::Evaluator {
            layer,
            source: Box::new(e),
        };

        // rate -> target, keyed by bit pattern so each candidate runs once
        let mut seen: BTreeMap<u64, TargetValue> = BTreeMap::new();
        let mut eval = |rate: f64| -> Result<f64> {
            if let Some(v) = seen.get(&rate.to_bits()) {
                return Ok(v.target);
            }
            let v =
                layer_target(evaluator, num_layers, &tail, rate, config.lambda).map_err(wrap)?;
            audit.push(AuditRow {
                layer,
                candidate_rate: rate,
                performance: v.performance,
                target: v.target,
            });
            seen.insert(rate.to_bits(), v);
            Ok(v.target)
        };

        let chosen = match (&config.mode, candidates.len()) {
            (_, 0) => {
                return Err(Error::InvalidConfig(format!(
                    "no grid rate at or below {previous} for layer {layer}"
                )))
            }
            (SearchMode::Bayesian(bo), n) if n > 1 => {
                let bo = bo
                    .clone()
                    .with_domain(candidates[0], *candidates.last().unwrap());
                let result = bo_maximize(|x| eval(nearest(&candidates, x)), &bo)?;
                nearest(&candidates, result.best_x)
            }
            _ => {
                let mut best: Option<(f64, f64)> = None;
                for &r in &candidates {
                    let f = eval(r)?;
                    if best.is_none_or(|(_, bf)| f > bf) {
                        best = Some((r, f));
                    }
                }
                best.expect("candidates are non-empty").0
            }
        };

        let span = config.stride.min(searchable - tail.len());
        tail.extend(std::iter::repeat_n(chosen, span));
    }

    let schedule = KeepingSchedule::from_tail(&tail)
        .tagged_monotone()
        .checked()?;
    Ok(GSearchOutcome { schedule, audit })
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Number of non-increasing sequences of length `len` over `grid` values.
pub fn monotone_schedule_count(grid: usize, len: usize) -> u128 {
    if grid == 0 {
        return if len == 0 { 1 } else { 0 };
    }
    binomial((grid + len - 1) as u128, len as u128)
}

/// Exhaustive search over every monotone schedule on the rate grid,
/// maximizing [`schedule_objective`]. Ties go to the lexicographically
/// smallest rate vector.
pub fn brute_force_search<E: Evaluator + ?Sized>(
    evaluator: &E,
    num_layers: usize,
    config: &GSearchConfig,
) -> Result<KeepingSchedule> {
    config.validate()?;
    let searchable = num_layers.saturating_sub(UNREDUCED_LAYERS);
    let count = monotone_schedule_count(config.rate_grid.len(), searchable);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::EnumerationBudget {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Walk<'a, E: ?Sized> {
        evaluator: &'a E,
        grid: &'a [f64],
        lambda: f64,
        tail: Vec<f64>,
        best: Option<(f64, Vec<f64>)>,
    }

    impl<E: Evaluator + ?Sized> Walk<'_, E> {
        fn visit(&mut self, remaining: usize, max_index: usize) -> Result<()> {
            if remaining == 0 {
                let s = KeepingSchedule::from_tail(&self.tail);
                let value = schedule_objective(self.evaluator, &s, self.lambda)?;
                if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                    self.best = Some((value, self.tail.clone()));
                }
                return Ok(());
            }
            // ascending grid order visits schedules lexicographically
            for idx in 0..=max_index {
                self.tail.push(self.grid[idx]);
                self.visit(remaining - 1, idx)?;
                self.tail.pop();
            }
            Ok(())
        }
    }

    let mut walk = Walk {
        evaluator,
        grid: &config.rate_grid,
        lambda: config.lambda,
        tail: Vec::with_capacity(searchable),
        best: None,
    };
    walk.visit(searchable, config.rate_grid.len() - 1)?;
    let tail = walk.best.map(|(_, t)| t).unwrap_or_default();
    KeepingSchedule::from_tail(&tail)
        .tagged_monotone()
        .checked()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{OracleSpec, SyntheticOracle};
    use proptest::prelude::*;

    fn constant(c: f64) -> impl Fn(&KeepingSchedule) -> Result<f64> {
        move |_| Ok(c)
    }

    fn noiseless(sizes: &[usize], n: usize, seed: u64) -> SyntheticOracle {
        SyntheticOracle::new(OracleSpec {
            essential_sizes: sizes.to_vec(),
            n_tokens: n,
            rho: 1.0,
            noise: 0.0,
            seed,
        })
        .unwrap()
    }

    fn exhaustive(points: usize, stride: usize, lambda: f64) -> GSearchConfig {
        GSearchConfig {
            lambda,
            stride,
            ..GSearchConfig::with_grid_points(points)
        }
    }

    #[test]
    fn default_config() {
        let c = GSearchConfig::default();
        assert_eq!(c.rate_grid.len(), 21);
        assert_eq!(c.lambda, 0.01);
        assert_eq!(c.stride, 3);
        assert_eq!(c.mode, SearchMode::Exhaustive);
        assert!(matches!(
            GSearchConfig::with_grid_points(33).mode,
            SearchMode::Bayesian(_)
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = GSearchConfig::default();
        c.rate_grid = vec![0.0, 0.5];
        assert!(c.validate().is_err());
        c.rate_grid = vec![0.5, 0.2, 1.0];
        assert!(c.validate().is_err());
        c = GSearchConfig::default();
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn target_on_constant_evaluator() {
        let f = layer_target(&constant(0.7), 6, &[], 0.5, 0.0).unwrap();
        assert_eq!(f.target, 0.7);
        let f = layer_target(&constant(0.7), 6, &[0.9], 0.5, 0.01).unwrap();
        assert!((f.target - (0.7 - 0.005)).abs() < 1e-15);
    }

    #[test]
    fn target_rejects_rate_above_previous() {
        assert!(matches!(
            layer_target(&constant(1.0), 6, &[0.4], 0.5, 0.01),
            Err(Error::ConstraintViolation { .. })
        ));
    }

    #[test]
    fn target_is_piecewise_on_noiseless_oracle() {
        // layer 3 needs 40% of tokens
        let o = noiseless(&[4, 4, 2], 10, 0);
        let lambda = 0.01;
        let at = |r: f64| layer_target(&o, 5, &[], r, lambda).unwrap().target;
        for r in [0.4, 0.6, 0.8, 1.0] {
            assert!((at(r) - (1.0 - lambda * r)).abs() < 1e-12);
        }
        for r in [0.0, 0.1, 0.2, 0.3] {
            assert!(at(r) < at(0.4) - 0.05, "r={r}");
        }
    }

    #[test]
    fn constant_evaluator_drives_rates_to_grid_minimum() {
        let out = g_search(&constant(0.5), 9, &exhaustive(11, 1, 0.01)).unwrap();
        assert_eq!(out.schedule.tail(), &[0.0; 7]);
    }

    #[test]
    fn recovers_known_schedule() {
        let o = noiseless(&[8, 8, 4, 4, 1, 1], 10, 1);
        let out = g_search(&o, 8, &exhaustive(11, 1, 0.01)).unwrap();
        assert_eq!(
            out.schedule.rates(),
            &[1.0, 1.0, 0.8, 0.8, 0.4, 0.4, 0.1, 0.1]
        );
        let bf = brute_force_search(&o, 8, &exhaustive(11, 1, 0.01)).unwrap();
        assert_eq!(bf, out.schedule);
    }

    #[test]
    fn zero_lambda_with_lowest_rate_tie_break() {
        let o = noiseless(&[8, 8, 4, 4, 1, 1], 10, 1);
        let out = g_search(&o, 8, &exhaustive(11, 1, 0.0)).unwrap();
        assert_eq!(
            out.schedule.rates(),
            &[1.0, 1.0, 0.8, 0.8, 0.4, 0.4, 0.1, 0.1]
        );
        // the all-ones schedule is equally good without the penalty
        let full = schedule_objective(&o, &KeepingSchedule::full(8), 0.0).unwrap();
        let found = schedule_objective(&o, &out.schedule, 0.0).unwrap();
        assert_eq!(full, found);
    }

    #[test]
    fn brute_force_small_grid() {
        // 3-point grid, two searched layers: 6 monotone pairs
        assert_eq!(monotone_schedule_count(3, 2), 6);
        let o = noiseless(&[5, 2], 10, 2);
        let mut cfg = exhaustive(3, 1, 0.01);
        cfg.rate_grid = vec![0.0, 0.5, 1.0];
        let bf = brute_force_search(&o, 4, &cfg).unwrap();
        assert_eq!(bf.tail(), &[0.5, 0.5]);
        assert_eq!(
            brute_force_search(&constant(0.3), 4, &cfg).unwrap().tail(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn brute_force_budget_guard() {
        let cfg = exhaustive(21, 1, 0.01);
        assert!(matches!(
            brute_force_search(&constant(0.0), 32, &cfg),
            Err(Error::EnumerationBudget { .. })
        ));
    }

    #[test]
    fn stride_inherits_searched_rate() {
        let o = noiseless(&[9, 7, 6, 4, 3, 2, 1], 10, 3);
        let out = g_search(&o, 9, &exhaustive(11, 3, 0.01)).unwrap();
        let t = out.schedule.tail();
        assert_eq!(t[0], t[1]);
        assert_eq!(t[1], t[2]);
        assert_eq!(t[3], t[4]);
        assert_eq!(t[4], t[5]);
        assert_eq!(t, &[0.9, 0.9, 0.9, 0.4, 0.4, 0.4, 0.1]);
    }

    #[test]
    fn evaluator_errors_carry_layer() {
        let failing = |s: &KeepingSchedule| {
            if s.tail()[1] < 0.5 {
                Err(Error::InvalidConfig("boom".into()))
            } else {
                Ok(1.0)
            }
        };
        match g_search(&failing, 5, &exhaustive(11, 1, 0.01)) {
            Err(Error::Evaluator { layer: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bayesian_mode_matches_exhaustive_on_simple_oracle() {
        let o = noiseless(&[8, 8, 4, 4, 1, 1], 10, 1);
        let mut cfg = exhaustive(11, 1, 0.01);
        cfg.mode = SearchMode::Bayesian(BoConfig {
            num_iterations: 15,
            ..BoConfig::default()
        });
        let out = g_search(&o, 8, &cfg).unwrap();
        assert_eq!(
            out.schedule.rates(),
            &[1.0, 1.0, 0.8, 0.8, 0.4, 0.4, 0.1, 0.1]
        );
        assert!(out
            .audit
            .iter()
            .all(|a| cfg.rate_grid.contains(&a.candidate_rate)));
    }

    #[test]
    fn audit_csv_lists_candidates() {
        let o = noiseless(&[5, 2], 10, 2);
        let out = g_search(&o, 4, &exhaustive(11, 1, 0.01)).unwrap();
        let csv = out.audit_csv();
        assert!(csv.starts_with("layer,candidate_rate,E,f\n"));
        assert_eq!(out.audit.iter().filter(|a| a.layer == 3).count(), 11);
    }

    fn nested_sizes() -> impl Strategy<Value = (Vec<usize>, u64)> {
        (2usize..6, any::<u64>()).prop_flat_map(|(m, seed)| {
            prop::collection::vec(0usize..=20, m).prop_map(move |mut v| {
                v.sort_unstable_by(|a, b| b.cmp(a));
                (v, seed)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn greedy_equals_brute_force((sizes, seed) in nested_sizes()) {
            let o = noiseless(&sizes, 20, seed);
            let l = sizes.len() + 2;
            let cfg = exhaustive(11, 1, 0.01);
            let greedy = g_search(&o, l, &cfg).unwrap().schedule;
            prop_assert_eq!(greedy, brute_force_search(&o, l, &cfg).unwrap());
        }

        #[test]
        fn larger_lambda_never_raises_rates((sizes, seed) in nested_sizes(), lo in 0.0f64..0.05, extra in 0.0f64..0.5) {
            let o = noiseless(&sizes, 20, seed);
            let l = sizes.len() + 2;
            let a = g_search(&o, l, &exhaustive(11, 1, lo)).unwrap().schedule;
            let b = g_search(&o, l, &exhaustive(11, 1, lo + extra)).unwrap().schedule;
            for (ra, rb) in a.rates().iter().zip(b.rates()) {
                prop_assert!(rb <= ra);
            }
        }

        #[test]
        fn stride_never_beats_stride_one((sizes, seed) in nested_sizes(), stride in 2usize..4) {
            let o = noiseless(&sizes, 20, seed);
            let l = sizes.len() + 2;
            let one = g_search(&o, l, &exhaustive(11, 1, 0.01)).unwrap().schedule;
            let k = g_search(&o, l, &exhaustive(11, stride, 0.01)).unwrap().schedule;
            prop_assert!(k.validate().is_empty());
            prop_assert!(
                schedule_objective(&o, &k, 0.01).unwrap() <= schedule_objective(&o, &one, 0.01).unwrap()
            );
        }
    }
}
