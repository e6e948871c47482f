//! Dense f64 tensors, a reverse-mode tape, Adam, and gradient checking.
//!
//! Everything is double precision. Vectors are column tensors of shape
//! (n, 1); scalars are (1, 1). Shape violations and non-finite values are
//! programming errors and fail fast via assertions.

mod adam;
mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, FiniteDiffReport};
pub use tape::{Gradients, Tape, ValueRef};

use rand::Rng;

/// Row-major dense matrix of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite tensor");
        Tensor { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor::from_vec(rows, cols, data)
    }

    /// Column vector.
    pub fn column(data: Vec<f64>) -> Tensor {
        let rows = data.len();
        Tensor::from_vec(rows, 1, data)
    }

    /// Entries drawn uniformly from [-bound, bound).
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "index out of range");
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i < self.rows && j < self.cols, "index out of range");
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row out of range");
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
