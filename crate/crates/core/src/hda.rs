//! Automatic RBF bandwidth selection.
//!
//! For every pair of rows `v_i`, `v_j` of a probe network's trace matrix the
//! candidate bandwidth is `G_ij = (m_i - m_j)^2 / (2 (s_i^2 + s_j^2))`, where
//! `m` and `s^2` are the row mean and population variance. A pair is only
//! admissible when the squared mean difference is non-zero and the variance sum
//! is positive. The selected bandwidth is the smallest admissible candidate
//! pooled over all probe networks and pairs, computed separately for the
//! activation traces (`gamma_k`) and the classifier inputs (`gamma_q`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::score::{sq_dist, TraceMatrices};

/// Bandwidth used for a side that has no admissible pair.
pub const FALLBACK_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub mean_i: f64,
    pub mean_j: f64,
    pub var_i: f64,
    pub var_j: f64,
    /// Squared difference of the means.
    pub d: f64,
    /// Candidate bandwidth, `None` when inadmissible.
    pub candidate: Option<f64>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let len = v.len() as f64;
    let mean = v.iter().sum::<f64>() / len;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / len;
    (mean, var)
}

fn candidate(d: f64, var_sum: f64) -> Option<f64> {
    (d != 0.0 && var_sum > 0.0).then(|| d / (2.0 * var_sum))
}

pub fn pair_stats(v_i: &[f64], v_j: &[f64]) -> Result<PairStats> {
    if v_i.len() != v_j.len() {
        return Err(Error::LengthMismatch(v_i.len(), v_j.len()));
    }
    if v_i.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    let (mean_i, var_i) = mean_var(v_i);
    let (mean_j, var_j) = mean_var(v_j);
    let d = (mean_i - mean_j) * (mean_i - mean_j);
    Ok(PairStats {
        mean_i,
        mean_j,
        var_i,
        var_j,
        d,
        candidate: candidate(d, var_i + var_j),
    })
}

/// Smallest admissible candidate over all row pairs of `m`, with the number
/// of admissible pairs. Row statistics are computed once per row.
pub fn min_candidate(m: &Matrix) -> (Option<f64>, usize) {
    let stats: Vec<(f64, f64)> = (0..m.rows()).map(|i| mean_var(m.row(i))).collect();
    let mut best: Option<f64> = None;
    let mut count = 0;
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            let (mi, si) = stats[i];
            let (mj, sj) = stats[j];
            if let Some(g) = candidate((mi - mj) * (mi - mj), si + sj) {
                count += 1;
                best = Some(best.map_or(g, |b: f64| b.min(g)));
            }
        }
    }
    (best, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPair {
    pub gamma_k: f64,
    pub gamma_q: f64,
    pub n_candidates_k: usize,
    pub n_candidates_q: usize,
    pub fallback_used: bool,
}

/// Detects `(gamma_k, gamma_q)` from probe traces. The traces are column
/// normalized first, matching the space the kernels are evaluated in.
pub fn detect_gammas(probes: &[TraceMatrices]) -> GammaPair {
    let normalized: Vec<TraceMatrices> = probes.iter().map(TraceMatrices::normalized).collect();
    detect_gammas_prenormalized(&normalized)
}

/// As [`detect_gammas`], on traces used exactly as given.
pub fn detect_gammas_prenormalized(probes: &[TraceMatrices]) -> GammaPair {
    let pooled = |side: fn(&TraceMatrices) -> &Matrix| {
        probes
            .iter()
            .map(|p| min_candidate(side(p)))
            .fold((None, 0), |(best, n), (g, c)| {
                let best = match (best, g) {
                    (Some(a), Some(b)) => Some(f64::min(a, b)),
                    (a, b) => a.or(b),
                };
                (best, n + c)
            })
    };
    let (k, n_candidates_k) = pooled(|t| &t.x);
    let (q, n_candidates_q) = pooled(|t| &t.y);
    GammaPair {
        gamma_k: k.unwrap_or(FALLBACK_GAMMA),
        gamma_q: q.unwrap_or(FALLBACK_GAMMA),
        n_candidates_k,
        n_candidates_q,
        fallback_used: k.is_none() || q.is_none(),
    }
}

/// Bandwidth at which the kernel value of the farthest pair of rows equals
/// `epsilon`: `ln(1/epsilon) / max ||row_i - row_j||^2`.
pub fn epsilon_width_gamma(rows: &Matrix, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon {epsilon} must lie in (0, 1)"
        )));
    }
    let max_dist = max_sq_dist(std::slice::from_ref(rows));
    if max_dist == 0.0 {
        return Err(Error::AllRowsIdentical);
    }
    Ok((1.0 / epsilon).ln() / max_dist)
}

/// Largest squared row distance within any of the matrices.
pub fn max_sq_dist(matrices: &[Matrix]) -> f64 {
    let mut best = 0.0f64;
    for m in matrices {
        for i in 0..m.rows() {
            for j in 0..i {
                best = best.max(sq_dist(m.row(i), m.row(j)));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_stats_example() {
        let s = pair_stats(&[0.0, 2.0], &[4.0, 6.0]).unwrap();
        assert_eq!(
            (s.mean_i, s.mean_j, s.var_i, s.var_j, s.d),
            (1.0, 5.0, 1.0, 1.0, 16.0)
        );
        assert_eq!(s.candidate, Some(4.0));
    }

    #[test]
    fn inadmissible_pairs() {
        assert_eq!(
            pair_stats(&[1.0, 3.0], &[1.0, 3.0]).unwrap().candidate,
            None
        );
        let s = pair_stats(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.d, 1.0);
        assert_eq!(s.candidate, None);
        assert!(matches!(
            pair_stats(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    fn probe(x: Vec<Vec<f64>>) -> TraceMatrices {
        let y = x.clone();
        TraceMatrices::new(
            Matrix::from_rows(&x).unwrap(),
            Matrix::from_rows(&y).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_probe() {
        let g = detect_gammas_prenormalized(&[probe(vec![vec![0.0, 2.0], vec![4.0, 6.0]])]);
        assert_eq!(g.gamma_k, 4.0);
        assert_eq!(g.n_candidates_k, 1);
        assert!(!g.fallback_used);
    }

    #[test]
    fn pooled_minimum() {
        // first probe admits {4, 8} (one pair has equal means), second admits {0.5}
        let a = probe(vec![vec![0.0, 2.0], vec![4.0, 6.0], vec![1.0, 1.0]]);
        let b = probe(vec![vec![0.0, 0.0], vec![0.0, 2.0]]);
        assert_eq!(min_candidate(&a.x), (Some(4.0), 2));
        assert_eq!(min_candidate(&b.x), (Some(0.5), 1));
        let g = detect_gammas_prenormalized(&[a.clone(), b.clone()]);
        assert_eq!(g.gamma_k, 0.5);
        assert_eq!(g.n_candidates_k, 3);
        assert_eq!(detect_gammas_prenormalized(&[b, a]), g);
    }

    #[test]
    fn fallback_when_nothing_admissible() {
        let g = detect_gammas(&[probe(vec![vec![1.0, 2.0], vec![1.0, 2.0]])]);
        assert_eq!(g.gamma_k, FALLBACK_GAMMA);
        assert_eq!(g.gamma_q, FALLBACK_GAMMA);
        assert!(g.fallback_used);
        assert_eq!(g.n_candidates_k, 0);
    }

    #[test]
    fn epsilon_width() {
        let rows = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let e = (-1.0f64).exp();
        assert!((epsilon_width_gamma(&rows, e).unwrap() - 0.5).abs() < 1e-15);
        let d = 0.1f64.recip().ln().sqrt();
        let rows = Matrix::from_rows(&[vec![0.0], vec![d]]).unwrap();
        assert!((epsilon_width_gamma(&rows, 0.1).unwrap() - 1.0).abs() < 1e-12);
        let same = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(matches!(
            epsilon_width_gamma(&same, 0.1),
            Err(Error::AllRowsIdentical)
        ));
        assert!(epsilon_width_gamma(&rows, 1.0).is_err());
    }
}
