//! Dense row-major matrix containers.
//!
//! Element (r, c) lives at `data[r * cols + c]`.

use crate::bf16::Bf16;
use crate::error::{Error, Result};

/// Row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixF32 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

/// Row-major bf16 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixBf16 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Bf16>,
}

impl MatrixF32 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixF32 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "MatrixF32::from_vec",
                format!("{rows}x{cols} needs {} elements, got {}", rows * cols, data.len()),
            ));
        }
        Ok(MatrixF32 { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        MatrixF32 { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transposed(&self) -> MatrixF32 {
        MatrixF32::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Round every element to bf16.
    pub fn quantize(&self) -> MatrixBf16 {
        MatrixBf16 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| Bf16::from_f32(v)).collect(),
        }
    }

    /// Bit-pattern equality (distinguishes -0.0 from 0.0, compares NaN bits).
    pub fn bitwise_eq(&self, other: &MatrixF32) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl MatrixBf16 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixBf16 { rows, cols, data: vec![Bf16::ZERO; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Bf16>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "MatrixBf16::from_vec",
                format!("{rows}x{cols} needs {} elements, got {}", rows * cols, data.len()),
            ));
        }
        Ok(MatrixBf16 { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Bf16) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        MatrixBf16 { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Bf16 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Bf16) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Bf16] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transposed(&self) -> MatrixBf16 {
        MatrixBf16::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Exact widening of every element.
    pub fn widen(&self) -> MatrixF32 {
        MatrixF32 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.to_f32()).collect(),
        }
    }
}
