//! RBF-kernel network scoring and the binary-code baseline.
//!
//! For a minibatch of N images the activation outputs of every activation
//! layer are flattened and concatenated into one row per image (`X`), and the
//! classifier input is flattened into another (`Y`). After column-wise min-max
//! normalization, RBF Gram matrices `K` (from `X`) and `Q` (from `Y`) measure
//! how similar the network's responses to different images are. The score is
//! `log|K ⊗ Q|`, evaluated as `N * (log|K| + log|Q|)`; dissimilar responses
//! give a larger score.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{logdet_spd, LogDet, Matrix};
use crate::nn::ForwardTrace;

/// Flattened traces of one minibatch: `x` is `N x L_K`, `y` is `N x L_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMatrices {
    pub x: Matrix,
    pub y: Matrix,
}

impl TraceMatrices {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::ShapeMismatch(format!(
                "X has {} rows, Y has {}",
                x.rows(),
                y.rows()
            )));
        }
        if x.cols() == 0 || y.cols() == 0 {
            return Err(Error::ShapeMismatch(
                "trace matrices need at least one column".into(),
            ));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFiniteValue("trace matrices".into()));
        }
        Ok(TraceMatrices { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn normalized(&self) -> TraceMatrices {
        TraceMatrices {
            x: normalize_columns(&self.x),
            y: normalize_columns(&self.y),
        }
    }
}

/// Builds `X` and `Y`. Each activation output is flattened in (channel, row,
/// column) order and the layers are concatenated in graph order.
pub fn build_trace_matrices(trace: &ForwardTrace) -> Result<TraceMatrices> {
    if trace.activation_outputs.is_empty() {
        return Err(Error::ShapeMismatch(
            "network has no activation layers".into(),
        ));
    }
    let n = trace.last_layer_input.batch();
    if trace.activation_outputs.iter().any(|t| t.batch() != n) {
        return Err(Error::ShapeMismatch(
            "activation outputs disagree on batch size".into(),
        ));
    }
    let l_k: usize = trace
        .activation_outputs
        .iter()
        .map(|t| t.sample_len())
        .sum();
    let mut x = Vec::with_capacity(n * l_k);
    for i in 0..n {
        for t in &trace.activation_outputs {
            x.extend_from_slice(t.sample(i));
        }
    }
    let y = trace.last_layer_input.data().to_vec();
    TraceMatrices::new(
        Matrix::new(n, l_k, x)?,
        Matrix::new(n, trace.last_layer_input.sample_len(), y)?,
    )
}

/// Column-wise min-max scaling to `[0, 1]`. Constant columns are left as they are.
pub fn normalize_columns(m: &Matrix) -> Matrix {
    let (rows, cols) = (m.rows(), m.cols());
    let mut lo = vec![f64::INFINITY; cols];
    let mut hi = vec![f64::NEG_INFINITY; cols];
    for i in 0..rows {
        for (j, &v) in m.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        data.extend(m.row(i).iter().enumerate().map(|(j, &v)| {
            if hi[j] != lo[j] {
                (v - lo[j]) / (hi[j] - lo[j])
            } else {
                v
            }
        }));
    }
    Matrix::new(rows, cols, data).expect("same shape")
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// `G_ij = exp(-gamma * ||row_i - row_j||^2)`.
pub fn rbf_gram(m: &Matrix, gamma: f64) -> Result<Matrix> {
    gram_from_sq_dists(&pairwise_sq_dists(m), gamma)
}

/// Symmetric matrix of squared Euclidean distances between rows.
pub fn pairwise_sq_dists(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = sq_dist(m.row(i), m.row(j));
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// RBF Gram matrix from precomputed squared distances.
pub fn gram_from_sq_dists(dists: &Matrix, gamma: f64) -> Result<Matrix> {
    check_gamma(gamma)?;
    let n = dists.rows();
    let mut g = Matrix::identity(n);
    for i in 0..n {
        for j in 0..i {
            let v = (-gamma * dists[(i, j)]).exp();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// The two Gram matrices of a scored network.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub k: Matrix,
    pub q: Matrix,
    pub gamma_k: f64,
    pub gamma_q: f64,
}

/// Normalizes the traces and forms both Gram matrices.
pub fn kernel_pair(traces: &TraceMatrices, gamma_k: f64, gamma_q: f64) -> Result<KernelPair> {
    let norm = traces.normalized();
    Ok(KernelPair {
        k: rbf_gram(&norm.x, gamma_k)?,
        q: rbf_gram(&norm.y, gamma_q)?,
        gamma_k,
        gamma_q,
    })
}

/// A network score. `Degenerate` marks a numerically singular Gram matrix
/// and ranks below every finite score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    Degenerate,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Value(v) => Some(v),
            Score::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Score::Degenerate)
    }

    /// Total order: degenerate lowest, finite values by magnitude.
    pub fn rank_cmp(&self, other: &Score) -> Ordering {
        match (self, other) {
            (Score::Degenerate, Score::Degenerate) => Ordering::Equal,
            (Score::Degenerate, _) => Ordering::Less,
            (_, Score::Degenerate) => Ordering::Greater,
            (Score::Value(a), Score::Value(b)) => a.total_cmp(b),
        }
    }
}

pub const DEGENERATE_LITERAL: &str = "DEGENERATE";

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v}"),
            Score::Degenerate => f.write_str(DEGENERATE_LITERAL),
        }
    }
}

impl serde::Serialize for Score {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Score::Value(v) => serializer.serialize_f64(*v),
            Score::Degenerate => serializer.serialize_str(DEGENERATE_LITERAL),
        }
    }
}

impl std::str::FromStr for Score {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == DEGENERATE_LITERAL {
            return Ok(Score::Degenerate);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Score::Value)
            .ok_or_else(|| Error::Config(format!("invalid score {s:?}")))
    }
}

/// `N * (log|K| + log|Q|)`, which equals `log|K ⊗ Q|` for N x N matrices.
pub fn score_from_kernels(k: &Matrix, q: &Matrix) -> Result<Score> {
    let n = k.rows();
    if q.rows() != n || n < 2 {
        return Err(Error::ShapeMismatch(format!(
            "kernel sizes {}x{} and {}x{} (need equal and >= 2)",
            n,
            k.cols(),
            q.rows(),
            q.cols()
        )));
    }
    Ok(match (logdet_spd(k)?, logdet_spd(q)?) {
        (LogDet::Finite(a), LogDet::Finite(b)) => Score::Value(n as f64 * (a + b)),
        _ => Score::Degenerate,
    })
}

/// Full RBF score of one network's (unnormalized) traces.
pub fn rbflex_score(traces: &TraceMatrices, gamma_k: f64, gamma_q: f64) -> Result<Score> {
    if traces.n() < 2 {
        return Err(Error::ShapeMismatch(
            "scoring needs at least 2 images".into(),
        ));
    }
    let pair = kernel_pair(traces, gamma_k, gamma_q)?;
    score_from_kernels(&pair.k, &pair.q)
}

/// Binary-code baseline: each unit is coded by the sign of its activation
/// output, `K_H[i][j]` counts the units on which images `i` and `j` agree, and
/// the score is `log|K_H|`.
pub fn naswot_score(trace: &ForwardTrace) -> Result<Score> {
    let n = trace.last_layer_input.batch();
    if n < 2 {
        return Err(Error::ShapeMismatch(
            "scoring needs at least 2 images".into(),
        ));
    }
    let codes: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            trace
                .activation_outputs
                .iter()
                .flat_map(|t| t.sample(i).iter().map(|&v| v > 0.0))
                .collect()
        })
        .collect();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let agree = codes[i]
                .iter()
                .zip(&codes[j])
                .filter(|(a, b)| a == b)
                .count() as f64;
            k[(i, j)] = agree;
            k[(j, i)] = agree;
        }
    }
    Ok(match logdet_spd(&k)? {
        LogDet::Finite(v) => Score::Value(v),
        LogDet::Degenerate => Score::Degenerate,
    })
}

/// Divides each finite score by `|min finite score|` for reporting. The worst
/// finite network of a negative-valued set maps to -1. Degenerate entries pass
/// through.
pub fn normalized_score_report(scores: &[Score]) -> Result<Vec<Score>> {
    let min = scores
        .iter()
        .filter_map(|s| s.value())
        .min_by(f64::total_cmp)
        .ok_or(Error::AllDegenerate)?;
    let denom = min.abs();
    if denom == 0.0 {
        return Err(Error::Config(
            "cannot normalize by a zero minimum score".into(),
        ));
    }
    Ok(scores
        .iter()
        .map(|s| match s {
            Score::Value(v) => Score::Value(v / denom),
            Score::Degenerate => Score::Degenerate,
        })
        .collect())
}

/// One scored network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub spec_id: String,
    pub score: Score,
    pub gamma_k: Option<f64>,
    pub gamma_q: Option<f64>,
    pub weight_seed: u64,
    pub batch_fingerprint: u64,
}

pub const CSV_HEADER: &str = "spec_id,score,gamma_k,gamma_q,weight_seed,batch_fingerprint";

impl ScoreRecord {
    pub fn csv_fields(&self) -> [String; 6] {
        let opt = |g: Option<f64>| g.map(|v| v.to_string()).unwrap_or_default();
        [
            self.spec_id.clone(),
            self.score.to_string(),
            opt(self.gamma_k),
            opt(self.gamma_q),
            self.weight_seed.to_string(),
            format!("{:016x}", self.batch_fingerprint),
        ]
    }

    /// One CSV row without the line terminator. Cell spec ids contain commas
    /// and come out quoted.
    pub fn csv_line(&self) -> String {
        let mut row = write_csv(std::iter::once(self.csv_fields()));
        row.pop();
        row
    }
}

/// Renders rows as RFC 4180 CSV, quoting only where needed.
pub fn write_csv<R, F>(rows: impl IntoIterator<Item = R>) -> String
where
    R: IntoIterator<Item = F>,
    F: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8 input")
}

pub fn records_to_csv(records: &[ScoreRecord]) -> String {
    let header = CSV_HEADER.split(',').map(String::from).collect::<Vec<_>>();
    let rows = std::iter::once(header).chain(records.iter().map(|r| r.csv_fields().to_vec()));
    write_csv(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn normalization_cases() {
        let n = normalize_columns(&m(&[
            vec![2.0, 5.0, 0.0],
            vec![4.0, 5.0, 1.0],
            vec![6.0, 5.0, 0.5],
        ]));
        assert_eq!(n.column(0).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.column(1).collect::<Vec<_>>(), vec![5.0, 5.0, 5.0]);
        assert_eq!(n.column(2).collect::<Vec<_>>(), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn gram_values() {
        let g = rbf_gram(&m(&[vec![0.0, 0.0], vec![1.0, 1.0]]), 0.5).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert!((g[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g[(1, 0)] - 0.367_879_4).abs() < 1e-7);
        let big = rbf_gram(&m(&[vec![0.0], vec![1.0], vec![3.0]]), 1e12).unwrap();
        assert_eq!(big, Matrix::identity(3));
    }

    #[test]
    fn invalid_gamma() {
        let x = m(&[vec![0.0], vec![1.0]]);
        for g in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(rbf_gram(&x, g), Err(Error::InvalidGamma(_))));
        }
    }

    #[test]
    fn two_by_two_kernel_score() {
        let k = m(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        let s = score_from_kernels(&k, &k).unwrap().value().unwrap();
        assert!((s - 4.0 * 0.75f64.ln()).abs() < 1e-14);
        assert!((s + 1.150_728_3).abs() < 1e-7);
    }

    #[test]
    fn huge_gamma_gives_zero_score() {
        let t = TraceMatrices::new(
            m(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.2]]),
            m(&[vec![1.0], vec![2.0], vec![3.0]]),
        )
        .unwrap();
        assert_eq!(rbflex_score(&t, 1e12, 1e12).unwrap(), Score::Value(0.0));
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let t = TraceMatrices::new(
            m(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.2]]),
            m(&[vec![0.0], vec![0.0], vec![0.0]]),
        )
        .unwrap();
        assert_eq!(rbflex_score(&t, 1.0, 1.0).unwrap(), Score::Degenerate);
    }

    #[test]
    fn trace_layout() {
        let a = Tensor::new(
            vec![2, 1, 2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let b = Tensor::new(vec![2, 1], vec![9.0, 10.0]).unwrap();
        let trace = ForwardTrace {
            activation_outputs: vec![a, b.clone()],
            last_layer_input: b,
        };
        let t = build_trace_matrices(&trace).unwrap();
        assert_eq!(t.x.cols(), 5);
        assert_eq!(t.x.row(1), &[5.0, 6.0, 7.0, 8.0, 10.0]);
        assert_eq!(t.y.row(0), &[9.0]);
    }

    #[test]
    fn naswot_complementary_codes() {
        let a = Tensor::new(vec![2, 3], vec![1.0, -1.0, 2.0, -1.0, 1.0, -2.0]).unwrap();
        let trace = ForwardTrace {
            activation_outputs: vec![a.clone()],
            last_layer_input: a.clone(),
        };
        let s = naswot_score(&trace).unwrap().value().unwrap();
        assert!((s - 2.0 * 3.0f64.ln()).abs() < 1e-14);

        let same = Tensor::new(vec![2, 3], vec![1.0, -1.0, 2.0, 3.0, -2.0, 1.0]).unwrap();
        let trace = ForwardTrace {
            activation_outputs: vec![same.clone()],
            last_layer_input: same,
        };
        assert_eq!(naswot_score(&trace).unwrap(), Score::Degenerate);
    }

    #[test]
    fn normalized_report() {
        let s = [
            Score::Value(-10.0),
            Score::Value(-5.0),
            Score::Degenerate,
            Score::Value(-2.0),
        ];
        let r = normalized_score_report(&s).unwrap();
        assert_eq!(
            r,
            vec![
                Score::Value(-1.0),
                Score::Value(-0.5),
                Score::Degenerate,
                Score::Value(-0.2)
            ]
        );
        assert_eq!(
            normalized_score_report(&[Score::Value(-3.0)]).unwrap(),
            vec![Score::Value(-1.0)]
        );
        assert!(matches!(
            normalized_score_report(&[Score::Degenerate]),
            Err(Error::AllDegenerate)
        ));
    }

    #[test]
    fn score_ordering_and_text() {
        assert_eq!(
            Score::Degenerate.rank_cmp(&Score::Value(-1e300)),
            Ordering::Less
        );
        assert_eq!(
            Score::Value(-1.0).rank_cmp(&Score::Value(-2.0)),
            Ordering::Greater
        );
        assert_eq!(Score::Degenerate.to_string(), "DEGENERATE");
        assert_eq!("DEGENERATE".parse::<Score>().unwrap(), Score::Degenerate);
        assert_eq!("-1.5".parse::<Score>().unwrap(), Score::Value(-1.5));
    }

    #[test]
    fn csv_line_format() {
        let r = ScoreRecord {
            spec_id: "act|ReLU".into(),
            score: Score::Degenerate,
            gamma_k: Some(0.25),
            gamma_q: None,
            weight_seed: 42,
            batch_fingerprint: 0xabc,
        };
        assert_eq!(
            r.csv_line(),
            "act|ReLU,DEGENERATE,0.25,,42,0000000000000abc"
        );
        let cell = ScoreRecord {
            spec_id: "cell|3,1,0,1,2,4".into(),
            score: Score::Value(-2.5),
            ..r
        };
        assert_eq!(
            cell.csv_line(),
            "\"cell|3,1,0,1,2,4\",-2.5,0.25,,42,0000000000000abc"
        );
    }
}
