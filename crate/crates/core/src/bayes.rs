//! One-dimensional Bayesian optimization with a Gaussian-process surrogate
//! and Expected Improvement.
//!
//! The surrogate uses a squared-exponential kernel on standardized targets
//! with a constant prior mean equal to the sample mean. Kernel
//! hyperparameters are picked from a fixed 8x8 grid by log marginal
//! likelihood, and the acquisition is maximized over a uniform grid, so a run
//! is a deterministic function of its config and seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

const GRID_SIDE: usize = 8;
/// Length scales as fractions of the domain width.
const LENGTH_SCALE_RANGE: (f64, f64) = (0.02, 2.0);
/// Signal variances in standardized units.
const SIGNAL_VARIANCE_RANGE: (f64, f64) = (0.1, 10.0);
pub const DEFAULT_JITTER: f64 = 1e-6;
const MIN_STDDEV: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub num_initial_samples: usize,
    pub num_iterations: usize,
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub acquisition_grid_size: usize,
    pub rng_seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            num_initial_samples: 10,
            num_iterations: 15,
            domain_lo: 0.0,
            domain_hi: 1.0,
            acquisition_grid_size: 101,
            rng_seed: 0,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.domain_lo < self.domain_hi)
            || !self.domain_lo.is_finite()
            || !self.domain_hi.is_finite()
        {
            return Err(Error::EmptyDomain {
                lo: self.domain_lo,
                hi: self.domain_hi,
            });
        }
        if self.num_initial_samples < 2 {
            return Err(Error::InvalidConfig(
                "num_initial_samples must be at least 2".into(),
            ));
        }
        if self.acquisition_grid_size < 2 {
            return Err(Error::InvalidConfig(
                "acquisition_grid_size must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain_lo = lo;
        self.domain_hi = hi;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    fn acquisition_grid(&self) -> Vec<f64> {
        linspace(self.domain_lo, self.domain_hi, self.acquisition_grid_size)
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let last = (n - 1) as f64;
    (0..n).map(|i| lo + (hi - lo) * (i as f64 / last)).collect()
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// A fitted Gaussian-process posterior over one input dimension.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub observed_points: Vec<f64>,
    pub observed_values: Vec<f64>,
    pub length_scale: f64,
    /// In standardized target units.
    pub signal_variance: f64,
    pub noise_jitter: f64,
    mean: f64,
    scale: f64,
    chol: DMatrix<f64>,
    weights: DVector<f64>,
}

fn kernel(a: f64, b: f64, length_scale: f64, signal_variance: f64) -> f64 {
    let d = a - b;
    signal_variance * (-d * d / (2.0 * length_scale * length_scale)).exp()
}

struct Factor {
    chol: DMatrix<f64>,
    weights: DVector<f64>,
    log_likelihood: f64,
}

fn factor(
    points: &[f64],
    y: &DVector<f64>,
    length_scale: f64,
    signal_variance: f64,
    jitter: f64,
) -> Option<Factor> {
    let n = points.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel(points[i], points[j], length_scale, signal_variance)
            + if i == j { jitter } else { 0.0 }
    });
    let chol = k.cholesky()?;
    let weights = chol.solve(y);
    let l = chol.l();
    let log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    let log_likelihood =
        -0.5 * y.dot(&weights) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Some(Factor {
        chol: l,
        weights,
        log_likelihood,
    })
}

/// Fits the surrogate, choosing `(length_scale, signal_variance)` by log
/// marginal likelihood over a fixed grid scaled to the config's domain.
pub fn gp_fit(points: &[f64], values: &[f64], config: &BoConfig) -> Result<GpSurrogate> {
    if points.len() != values.len() {
        return Err(Error::SizeMismatch {
            left: points.len(),
            right: values.len(),
        });
    }
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: points.len(),
        });
    }
    for (&x, &v) in points.iter().zip(values) {
        if !x.is_finite() || !v.is_finite() {
            return Err(Error::NonFinite { x, value: v });
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
    let y = DVector::from_iterator(values.len(), values.iter().map(|v| (v - mean) / scale));

    let width = (config.domain_hi - config.domain_lo)
        .abs()
        .max(f64::MIN_POSITIVE);
    let lengths = logspace(
        LENGTH_SCALE_RANGE.0 * width,
        LENGTH_SCALE_RANGE.1 * width,
        GRID_SIDE,
    );
    let variances = logspace(SIGNAL_VARIANCE_RANGE.0, SIGNAL_VARIANCE_RANGE.1, GRID_SIDE);

    let mut jitter = DEFAULT_JITTER;
    for _ in 0..8 {
        let mut best: Option<(f64, f64, Factor)> = None;
        for &ls in &lengths {
            for &sv in &variances {
                if let Some(f) = factor(points, &y, ls, sv, jitter) {
                    let better = best
                        .as_ref()
                        .is_none_or(|b| f.log_likelihood > b.2.log_likelihood);
                    if better {
                        best = Some((ls, sv, f));
                    }
                }
            }
        }
        if let Some((length_scale, signal_variance, f)) = best {
            return Ok(GpSurrogate {
                observed_points: points.to_vec(),
                observed_values: values.to_vec(),
                length_scale,
                signal_variance,
                noise_jitter: jitter,
                mean,
                scale,
                chol: f.chol,
                weights: f.weights,
            });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

impl GpSurrogate {
    /// Posterior mean and standard deviation of the latent function at `x`.
    pub fn predict(&self, x: f64) -> (f64, f64) {
        let n = self.observed_points.len();
        let k_star = DVector::from_iterator(
            n,
            self.observed_points
                .iter()
                .map(|&p| kernel(x, p, self.length_scale, self.signal_variance)),
        );
        let mean_std = k_star.dot(&self.weights);
        let v = self
            .chol
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a positive diagonal");
        let var_std = (self.signal_variance - v.dot(&v)).max(0.0);
        (
            self.mean + self.scale * mean_std,
            self.scale * var_std.sqrt(),
        )
    }

    pub fn expected_improvement(&self, x: f64, best_so_far: f64) -> f64 {
        let (mu, s) = self.predict(x);
        expected_improvement(mu, s, best_so_far)
    }
}

/// Expected Improvement for maximization from a posterior `(mu, s)`.
pub fn expected_improvement(mu: f64, s: f64, best_so_far: f64) -> f64 {
    let gain = mu - best_so_far;
    if s < MIN_STDDEV {
        return gain.max(0.0);
    }
    let z = gain / s;
    let normal = Normal::standard();
    (gain * normal.cdf(z) + s * normal.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoStep {
    pub step: usize,
    pub x: f64,
    pub value: f64,
    pub is_initial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoResult {
    pub best_x: f64,
    pub best_value: f64,
    pub log: Vec<BoStep>,
}

impl BoResult {
    /// `step,x,value,is_initial` rows with a header line.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("step,x,value,is_initial\n");
        for s in &self.log {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.step, s.x, s.value, s.is_initial
            ));
        }
        out
    }
}

/// Best observation: highest value, lowest x on ties.
fn best_observed(log: &[BoStep]) -> (f64, f64) {
    let mut best = (log[0].x, log[0].value);
    for s in &log[1..] {
        if s.value > best.1 || (s.value == best.1 && s.x < best.0) {
            best = (s.x, s.value);
        }
    }
    best
}

/// Maximizes `target` over `[domain_lo, domain_hi]` and returns the best
/// observed point.
pub fn bo_maximize<F>(mut target: F, config: &BoConfig) -> Result<BoResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut log: Vec<BoStep> =
        Vec::with_capacity(config.num_initial_samples + config.num_iterations);
    let mut probe = |x: f64, is_initial: bool, log: &mut Vec<BoStep>| -> Result<()> {
        let value = target(x)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { x, value });
        }
        log.push(BoStep {
            step: log.len(),
            x,
            value,
            is_initial,
        });
        Ok(())
    };

    for _ in 0..config.num_initial_samples {
        let x = rng.gen_range(config.domain_lo..=config.domain_hi);
        probe(x, true, &mut log)?;
    }

    let grid = config.acquisition_grid();
    for _ in 0..config.num_iterations {
        let xs: Vec<f64> = log.iter().map(|s| s.x).collect();
        let ys: Vec<f64> = log.iter().map(|s| s.value).collect();
        let gp = gp_fit(&xs, &ys, config)?;
        let (_, incumbent) = best_observed(&log);
        let mut next: Option<(f64, f64)> = None;
        for &x in &grid {
            if xs.contains(&x) {
                continue;
            }
            let ei = gp.expected_improvement(x, incumbent);
            if next.is_none_or(|(_, best)| ei > best) {
                next = Some((x, ei));
            }
        }
        match next {
            Some((x, _)) => probe(x, false, &mut log)?,
            None => break,
        }
    }

    let (best_x, best_value) = best_observed(&log);
    Ok(BoResult {
        best_x,
        best_value,
        log,
    })
}
