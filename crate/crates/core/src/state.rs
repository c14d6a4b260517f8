//! Plain value types shared by the physics core, the emulator and diagnostics.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// A length-`n` state (or perturbation, or adjoint variable) of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        StateVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        StateVector(vec![0.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        StateVector(vec![value; n])
    }

    /// Unit vector `e_k` of length `n`.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        StateVector(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Fails with `NonFinite` when any entry is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{context}: component {i} is {}",
                self.0[i]
            ))),
        }
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, a: f64) -> StateVector {
        StateVector(self.0.iter().map(|v| a * v).collect())
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &[f64]) -> StateVector {
        StateVector(self.0.iter().zip(other).map(|(x, y)| x + a * y).collect())
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(values: Vec<f64>) -> Self {
        StateVector(values)
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Root-mean-square of the difference of two equal-length vectors.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (sq / a.len() as f64).sqrt()
}

/// Dense row-major matrix of partial derivatives, `entry(i, j) = d out_i / d in_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl JacobianMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        JacobianMatrix {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        crate::error::check_len("JacobianMatrix entries", rows * cols, entries.len())?;
        Ok(JacobianMatrix {
            rows,
            cols,
            entries,
        })
    }

    /// Builds the matrix column by column, `col(j)` returning column `j`.
    pub fn from_columns(
        rows: usize,
        cols: usize,
        mut col: impl FnMut(usize) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        let mut m = JacobianMatrix::zeros(rows, cols);
        for j in 0..cols {
            let c = col(j)?;
            crate::error::check_len("Jacobian column", rows, c.len())?;
            for (i, v) in c.into_iter().enumerate() {
                m.entries[i * cols + j] = v;
            }
        }
        Ok(m)
    }

    /// Builds the matrix row by row, `row(i)` returning row `i`.
    pub fn from_rows(
        rows: usize,
        cols: usize,
        mut row: impl FnMut(usize) -> Result<Vec<f64>>,
    ) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let r = row(i)?;
            crate::error::check_len("Jacobian row", cols, r.len())?;
            entries.extend(r);
        }
        Ok(JacobianMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> JacobianMatrix {
        let mut t = JacobianMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self^T v`
    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, vi) in v.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.row(i)) {
                *o += m * vi;
            }
        }
        out
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &JacobianMatrix) -> Result<JacobianMatrix> {
        crate::error::check_len("Jacobian rows", self.rows, other.rows)?;
        crate::error::check_len("Jacobian cols", self.cols, other.cols)?;
        Ok(JacobianMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.entries, &self.entries).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &JacobianMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }
}
