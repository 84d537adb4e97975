//! Dense row-major matrices. Rank-1 data lives as a 1×n row.

use crate::error::{KdError, Result};
use crate::scalar::Scalar;
use std::ops::{Index, IndexMut};

/// Dense 2-D tensor with row-major storage.
///
/// Values are immutable once placed on a computation tape; the mutating
/// accessors exist for construction and optimizer updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Tensor {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// 1×1 tensor holding a single value.
    pub fn scalar(value: T) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// 1×n row vector.
    pub fn row(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "row vector must be non-empty");
        Tensor {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    /// n×1 column vector.
    pub fn column(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "column vector must be non-empty");
        Tensor {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(KdError::validation("tensor dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(KdError::validation(format!(
                "tensor data length {} does not match shape {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(KdError::validation("tensor needs at least one row"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(KdError::validation(format!(
                    "row {} has length {}, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// The single value of a 1×1 tensor.
    pub fn item(&self) -> T {
        assert!(
            self.rows == 1 && self.cols == 1,
            "item() requires a 1x1 tensor, got {}",
            self.shape_string()
        );
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(self.rows, self.cols)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != rhs.rows {
            return Err(KdError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape_string(),
                rhs: rhs.shape_string(),
            });
        }
        let mut out = Tensor::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.data[i * self.cols + p];
                if a == T::zero() {
                    continue;
                }
                let lhs_row = i * rhs.cols;
                let rhs_row = p * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[lhs_row + j] = out.data[lhs_row + j] + a * rhs.data[rhs_row + j];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(KdError::ShapeMismatch {
                op: "add",
                lhs: self.shape_string(),
                rhs: rhs.shape_string(),
            });
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != rhs.shape() {
            return Err(KdError::ShapeMismatch {
                op: "mul",
                lhs: self.shape_string(),
                rhs: rhs.shape_string(),
            });
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(&a, &b)| a * b)
                .collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }

    /// Accumulate `rhs` into `self` (gradient accumulation).
    pub fn add_assign(&mut self, rhs: &Tensor<T>) {
        debug_assert_eq!(self.shape(), rhs.shape());
        for (a, &b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a = *a + b;
        }
    }

    /// Row-major flatten into a different rectangular shape.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Tensor<T>> {
        if rows * cols != self.data.len() || rows == 0 || cols == 0 {
            return Err(KdError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape_string(),
                rhs: format!("{}x{}", rows, cols),
            });
        }
        Ok(Tensor {
            rows,
            cols,
            data: self.data.clone(),
        })
    }

    /// Conversion to nested `f64` rows for serialization.
    pub fn to_nested_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| self.row_slice(r).iter().map(|v| v.to_f64_lossy()).collect())
            .collect()
    }

    /// Conversion from nested `f64` rows (checkpoint loading).
    pub fn from_nested_f64(rows: &[Vec<f64>]) -> Result<Tensor<T>> {
        let converted: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| T::from_f64_lossy(v)).collect())
            .collect();
        Tensor::from_rows(&converted)
    }
}

impl<T: Scalar> Index<(usize, usize)> for Tensor<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T: Scalar> IndexMut<(usize, usize)> for Tensor<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}
