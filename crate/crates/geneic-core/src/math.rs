//! Small dense-matrix and vector kernels, generic over [`Real`].

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix construction",
                format!("{rows}x{cols} = {} values", rows * cols),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "matrix construction",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Stacks `self` above `other`; column counts must agree.
    pub fn vstack(&self, other: &Matrix<S>) -> Result<Matrix<S>> {
        if !other.is_empty() && !self.is_empty() && self.cols != other.cols {
            return Err(Error::shape(
                "vstack",
                format!("{} columns", self.cols),
                format!("{} columns", other.cols),
            ));
        }
        let cols = if self.is_empty() { other.cols } else { self.cols };
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// `M · x` for a column vector `x`.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        self.iter_rows().map(|row| dot(row, x)).collect()
    }

    /// `Mᵀ · x` for a column vector `x` of length `rows`.
    pub fn matvec_transposed(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![S::zero(); self.cols];
        for (row, &xi) in self.iter_rows().zip(x) {
            for (o, &m) in out.iter_mut().zip(row) {
                *o = *o + m * xi;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_l2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Returns `a / ‖a‖₂`, or an error when the norm is (near) zero.
pub fn normalized<S: Real>(a: &[S]) -> Result<Vec<S>> {
    let n = norm_l2(a);
    if n <= S::zero() || !n.is_finite() {
        return Err(Error::invalid("cannot normalize a zero-norm vector"));
    }
    Ok(a.iter().map(|&x| x / n).collect())
}

/// Cosine similarity; errors on a zero-norm operand.
pub fn cosine<S: Real>(a: &[S], b: &[S]) -> Result<S> {
    let (na, nb) = (norm_l2(a), norm_l2(b));
    if na <= S::zero() || nb <= S::zero() {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    Ok(dot(a, b) / (na * nb))
}

pub fn squared_distance<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// log Σ exp(x_i) over entries where `mask` is true.
pub fn logsumexp_masked<S: Real>(xs: &[S], mask: impl Fn(usize) -> bool) -> S {
    let mut max = S::neg_infinity();
    for (i, &x) in xs.iter().enumerate() {
        if mask(i) && x > max {
            max = x;
        }
    }
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| mask(*i))
        .map(|(_, &x)| (x - max).exp())
        .sum();
    max + sum.ln()
}

/// Index of the maximum entry where `mask` holds; ties resolve to the
/// lowest index.
pub fn argmax_masked<S: Real>(xs: &[S], mask: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if !mask(i) {
            continue;
        }
        match best {
            Some((_, bx)) if x <= bx => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
