//! Small dense matrices and the Cholesky log-determinant.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.data[i * self.cols + j])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i.min(self.cols) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Returns a copy with rows reordered so that row `k` of the result is row `perm[k]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Matrix {
            rows: perm.len(),
            cols: self.cols,
            data,
        }
    }

    /// Returns a copy with columns reordered so that column `k` of the result is column `perm[k]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(perm.iter().map(|&p| row[p]));
        }
        Matrix {
            rows: self.rows,
            cols: perm.len(),
            data,
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Log-determinant of a symmetric positive semidefinite matrix, or the
/// marker that it is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogDet {
    Finite(f64),
    Degenerate,
}

impl LogDet {
    pub fn value(self) -> Option<f64> {
        match self {
            LogDet::Finite(v) => Some(v),
            LogDet::Degenerate => None,
        }
    }
}

/// Largest tolerated asymmetry `|a_ij - a_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Absolute floor for a Cholesky pivot.
pub const PIVOT_FLOOR: f64 = 1e-300;

/// `log|A|` through `A = L L^T`, as `2 * sum(log L_ii)`.
///
/// A pivot at or below `max(PIVOT_FLOOR, n * eps * max_diag)` marks the matrix as
/// singular: below that level the pivot is indistinguishable from rounding
/// noise, which is what two identical rows leave behind.
pub fn logdet_spd(a: &Matrix) -> Result<LogDet> {
    let n = a.rows();
    if n != a.cols() || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "logdet needs a square matrix, got {}x{}",
            n,
            a.cols()
        )));
    }
    let asym = a.max_asymmetry();
    if asym > SYMMETRY_TOL || asym.is_nan() {
        return Err(Error::NotSymmetric(asym));
    }
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = PIVOT_FLOOR.max(n as f64 * f64::EPSILON * max_diag);

    let mut l = Matrix::zeros(n, n);
    let mut logdet = 0.0;
    for j in 0..n {
        let lj = l.row(j);
        let pivot = a[(j, j)] - lj[..j].iter().map(|v| v * v).sum::<f64>();
        if pivot.is_nan() || pivot <= floor {
            return Ok(LogDet::Degenerate);
        }
        let diag = pivot.sqrt();
        l[(j, j)] = diag;
        logdet += pivot.ln();
        for i in j + 1..n {
            let dot: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            l[(i, j)] = (a[(i, j)] - dot) / diag;
        }
    }
    Ok(LogDet::Finite(logdet))
}
