//! Token rankings and Kendall rank correlation between layers.
//!
//! Correlations are tau-b (tie-adjusted), computed in O(N log N) by sorting
//! on one variable and counting inversions of the other with a merge sort.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::schedule::AttentionTrace;

/// Vision tokens of one layer ordered by descending score.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRanking {
    pub layer_index: usize,
    /// Token indices, highest score first; ties by ascending index.
    pub order: Vec<usize>,
    scores: Vec<f64>,
}

impl LayerRanking {
    pub fn from_scores(layer_index: usize, scores: &[f64]) -> Self {
        Self {
            layer_index,
            order: descending_order(scores),
            scores: scores.to_vec(),
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Kendall tau between consecutive layers: `values[i]` pairs layers `i+1`
/// and `i+2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSeries {
    pub values: Vec<f64>,
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("scores are finite")
}

/// Indices sorted by descending value, ties broken by ascending index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index among equal scores
    idx.sort_by(|&a, &b| cmp_f64(scores[b], scores[a]));
    idx
}

pub fn rank_layer(trace: &AttentionTrace, layer: usize) -> Result<LayerRanking> {
    Ok(LayerRanking::from_scores(layer, trace.layer(layer)?))
}

pub fn kendall_tau(a: &LayerRanking, b: &LayerRanking) -> Result<f64> {
    tau_b(&a.scores, &b.scores)
}

fn tied_pairs(sorted_runs: impl Iterator<Item = usize>) -> u64 {
    sorted_runs.map(|t| (t as u64) * (t as u64 - 1) / 2).sum()
}

fn run_lengths<T>(items: &[T], same: impl Fn(&T, &T) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=items.len() {
        if i == items.len() || !same(&items[i - 1], &items[i]) {
            out.push(i - start);
            start = i;
        }
    }
    out
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]);
    swaps += merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Tau-b between two equally long score vectors.
///
/// When one side is constant the coefficient is undefined; this returns 1.0
/// if both sides are constant and 0.0 otherwise.
pub fn tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp_f64(a.0, b.0).then(cmp_f64(a.1, b.1)));

    let n0 = (n as u64) * (n as u64).saturating_sub(1) / 2;
    let n1 = tied_pairs(run_lengths(&pairs, |a, b| a.0 == b.0).into_iter());
    let n3 = tied_pairs(run_lengths(&pairs, |a, b| a == b).into_iter());

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tied_pairs(run_lengths(&ys, |a, b| a == b).into_iter());

    let (dx, dy) = (n0 - n1, n0 - n2);
    if dx == 0 || dy == 0 {
        return Ok(if dx == dy { 1.0 } else { 0.0 });
    }
    let numerator = (n0 + n3) as f64 - (n1 + n2) as f64 - 2.0 * swaps as f64;
    let tau = numerator / ((dx as f64) * (dy as f64)).sqrt();
    Ok(tau.clamp(-1.0, 1.0))
}

pub fn tau_series(trace: &AttentionTrace) -> Result<TauSeries> {
    let layers = trace.num_layers();
    if layers < 2 {
        return Err(Error::InvalidTrace("need at least two layers".into()));
    }
    let rows: Vec<&[f64]> = trace.rows().collect();
    let values = rows
        .windows(2)
        .map(|w| tau_b(w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(TauSeries { values })
}

/// Pairwise tau between every two layers; symmetric with unit diagonal.
pub fn tau_matrix(trace: &AttentionTrace) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<&[f64]> = trace.rows().collect();
    let l = rows.len();
    let mut m = vec![vec![1.0; l]; l];
    for i in 0..l {
        for j in i + 1..l {
            let t = tau_b(rows[i], rows[j])?;
            m[i][j] = t;
            m[j][i] = t;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(N²) pair enumeration.
    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let sx = (x[i] - x[j]).signum() * ((x[i] != x[j]) as i32 as f64);
                let sy = (y[i] - y[j]).signum() * ((y[i] != y[j]) as i32 as f64);
                if sx == 0.0 && sy == 0.0 {
                    continue;
                } else if sx == 0.0 {
                    tx += 1;
                } else if sy == 0.0 {
                    ty += 1;
                } else if sx == sy {
                    conc += 1;
                } else {
                    disc += 1;
                }
            }
        }
        let denom = (((conc + disc + tx) * (conc + disc + ty)) as f64).sqrt();
        (conc - disc) as f64 / denom
    }

    #[test]
    fn direct_sort() {
        let t = AttentionTrace::from_rows(vec![vec![0.1, 0.9, 0.5]]).unwrap();
        assert_eq!(rank_layer(&t, 1).unwrap().order, vec![1, 2, 0]);
    }

    #[test]
    fn ties_by_ascending_index() {
        let t = AttentionTrace::from_rows(vec![vec![0.3; 4]]).unwrap();
        assert_eq!(rank_layer(&t, 1).unwrap().order, vec![0, 1, 2, 3]);
        assert!(rank_layer(&t, 2).is_err());
    }

    #[test]
    fn ranking_matches_comparison_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // coarse values force ties
        let row: Vec<f64> = (0..20)
            .map(|_| (rng.gen_range(0..6) as f64) / 5.0)
            .collect();
        let mut expected: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
        // selection by repeated max with lowest index
        let mut oracle = Vec::new();
        while !expected.is_empty() {
            let mut best = 0;
            for k in 1..expected.len() {
                let (bi, bv) = expected[best];
                let (ki, kv) = expected[k];
                if kv > bv || (kv == bv && ki < bi) {
                    best = k;
                }
            }
            oracle.push(expected.remove(best).0);
        }
        assert_eq!(descending_order(&row), oracle);
    }

    #[test]
    fn identity_and_reversal() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let a = LayerRanking::from_scores(1, &x);
        let b = LayerRanking::from_scores(2, &rev);
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &b).unwrap(), -1.0);
    }

    #[test]
    fn random_rankings_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
            let t = tau_b(&x, &y).unwrap();
            assert!((t - brute_tau_b(&x, &y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(
            tau_b(&[1.0], &[1.0, 2.0]),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn constant_rows() {
        assert_eq!(tau_b(&[0.5; 4], &[0.5; 4]).unwrap(), 1.0);
        assert_eq!(tau_b(&[0.5; 4], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn identical_rows_series() {
        let row = vec![0.2, 0.7, 0.1, 0.4];
        let t = AttentionTrace::from_rows(vec![row.clone(); 5]).unwrap();
        assert_eq!(tau_series(&t).unwrap().values, vec![1.0; 4]);
    }

    #[test]
    fn matrix_structure() {
        let t = AttentionTrace::from_rows(vec![vec![0.1, 0.2]; 2]).unwrap();
        assert_eq!(
            tau_matrix(&t).unwrap(),
            vec![vec![1.0, 1.0], vec![1.0, 1.0]]
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..30).map(|_| rng.gen()).collect())
            .collect();
        let t = AttentionTrace::from_rows(rows).unwrap();
        let m = tau_matrix(&t).unwrap();
        for i in 0..6 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..6 {
                assert_eq!(m[i][j], m[j][i]);
            }
        }
        let standalone = kendall_tau(&rank_layer(&t, 3).unwrap(), &rank_layer(&t, 5).unwrap());
        assert_eq!(m[2][4], standalone.unwrap());
    }

    proptest! {
        #[test]
        fn agrees_with_pair_counting(
            pairs in prop::collection::vec((0u8..8, 0u8..8), 1..120)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let fast = tau_b(&x, &y).unwrap();
            let brute = brute_tau_b(&x, &y);
            if brute.is_finite() {
                prop_assert!((fast - brute).abs() <= 1e-12, "{} vs {}", fast, brute);
            }
            prop_assert!((-1.0..=1.0).contains(&fast));
        }

        #[test]
        fn symmetric_and_monotone_invariant(
            x in prop::collection::vec(0.0f64..10.0, 2..60),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|_| rng.gen()).collect();
            let t = tau_b(&x, &y).unwrap();
            prop_assert_eq!(t, tau_b(&y, &x).unwrap());
            // strictly increasing transform leaves ranks unchanged
            let z: Vec<f64> = x.iter().map(|v| (v * 0.5).exp() + 3.0).collect();
            prop_assert!((tau_b(&z, &y).unwrap() - t).abs() <= 1e-15);
        }
    }
}
