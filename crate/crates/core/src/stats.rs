//! Rank and linear correlation, and deterministic top-k selection.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::score::ScoreRecord;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::Config("correlation needs at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue("correlation input".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pair counts behind Kendall's tau-b. `ties_x` counts pairs tied in `x`
/// (including those tied in both), likewise `ties_y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KendallCounts {
    pub n_pairs: u64,
    /// Concordant minus discordant pairs.
    pub s: i64,
    pub ties_x: u64,
    pub ties_y: u64,
}

impl KendallCounts {
    pub fn tau_b(&self) -> Result<f64> {
        let denom_x = (self.n_pairs - self.ties_x) as f64;
        let denom_y = (self.n_pairs - self.ties_y) as f64;
        if denom_x == 0.0 || denom_y == 0.0 {
            return Err(Error::AllTied);
        }
        Ok(self.s as f64 / (denom_x * denom_y).sqrt())
    }
}

/// O(n^2) pair enumeration.
pub fn kendall_counts_naive(x: &[f64], y: &[f64]) -> Result<KendallCounts> {
    check_pair(x, y)?;
    let n = x.len();
    let mut c = KendallCounts {
        n_pairs: (n * (n - 1) / 2) as u64,
        s: 0,
        ties_x: 0,
        ties_y: 0,
    };
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]);
            let dy = y[i].total_cmp(&y[j]);
            if dx == Ordering::Equal {
                c.ties_x += 1;
            }
            if dy == Ordering::Equal {
                c.ties_y += 1;
            }
            if dx != Ordering::Equal && dy != Ordering::Equal {
                c.s += if dx == dy { 1 } else { -1 };
            }
        }
    }
    Ok(c)
}

fn tied_pairs_in_sorted(v: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in v.windows(2) {
        if w[0].total_cmp(&w[1]) == Ordering::Equal {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Knight's O(n log n) algorithm: sort by (x, y), count joint ties, then
/// count discordant pairs as inversions of `y` during a merge sort.
pub fn kendall_counts_fast(x: &[f64], y: &[f64]) -> Result<KendallCounts> {
    check_pair(x, y)?;
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let ties_x = tied_pairs_in_sorted(&xs);
    let mut ties_xy = 0u64;
    let mut run = 1u64;
    for k in 1..n {
        let same = xs[k - 1].total_cmp(&xs[k]) == Ordering::Equal
            && ys[k - 1].total_cmp(&ys[k]) == Ordering::Equal;
        if same {
            run += 1;
        } else {
            ties_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    ties_xy += run * (run - 1) / 2;

    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let ties_y = tied_pairs_in_sorted(&ys);

    let n_pairs = (n * (n - 1) / 2) as u64;
    // Pairs untied on both sides. Added before subtracting to stay unsigned.
    let untied = n_pairs + ties_xy - ties_x - ties_y;
    Ok(KendallCounts {
        n_pairs,
        s: untied as i64 - 2 * swaps as i64,
        ties_x,
        ties_y,
    })
}

/// Sorts `v` ascending and returns the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (left, right) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(left, bl) + merge_count(right, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            count += (mid - i) as u64;
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
    count
}

/// Kendall's tau-b.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    kendall_counts_fast(x, y)?.tau_b()
}

/// Highest-scoring `k` spec ids. Degenerate scores sort last and ties are
/// broken by ascending spec id.
pub fn top_k(records: &[ScoreRecord], k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if records.iter().all(|r| r.score.is_degenerate()) {
        return Err(Error::AllDegenerate);
    }
    Ok(ranked(records)
        .into_iter()
        .take(k)
        .map(|r| r.spec_id.clone())
        .collect())
}

/// All records, best first, under the same ordering as [`top_k`].
pub fn ranked(records: &[ScoreRecord]) -> Vec<&ScoreRecord> {
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .rank_cmp(&a.score)
            .then_with(|| a.spec_id.cmp(&b.spec_id))
    });
    sorted
}
