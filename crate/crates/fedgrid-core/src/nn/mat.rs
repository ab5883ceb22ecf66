//! Dense row-major matrix plus the three kernels the MLP needs.
//!
//! The inner loops run over contiguous slices so they vectorize; batch
//! sizes here are small (≤ a few hundred rows) and everything fits in
//! cache, which is all the performance this workload needs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    /// A 1×n matrix holding one sample.
    pub fn from_row(row: &[f64]) -> Self {
        Mat { rows: 1, cols: row.len(), data: row.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// y = x·wᵀ + b, with x: n×in, w: out×in, b: out.
pub fn linear_forward(x: &Mat, w: &Mat, b: &[f64]) -> Result<Mat> {
    if x.cols != w.cols || b.len() != w.rows {
        return Err(Error::Dimension(format!(
            "linear forward: x is {}x{}, w is {}x{}, b has {}",
            x.rows, x.cols, w.rows, w.cols, b.len()
        )));
    }
    let mut y = Mat::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        for ((yo, wo), &bo) in yi.iter_mut().zip(w.rows_iter()).zip(b) {
            *yo = dot(xi, wo) + bo;
        }
    }
    Ok(y)
}

/// Reverse of `linear_forward`: given upstream n×out, returns
/// (dw out×in, db out, dx n×in).
pub fn linear_backward(x: &Mat, w: &Mat, upstream: &Mat) -> (Mat, Vec<f64>, Mat) {
    debug_assert_eq!(upstream.rows, x.rows);
    debug_assert_eq!(upstream.cols, w.rows);
    let mut dw = Mat::zeros(w.rows, w.cols);
    let mut db = vec![0.0; w.rows];
    let mut dx = Mat::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let xi = x.row(i);
        let ui = upstream.row(i);
        let dxi = dx.row_mut(i);
        for (o, &uo) in ui.iter().enumerate() {
            db[o] += uo;
            if uo != 0.0 {
                axpy(uo, xi, dw.row_mut(o));
                axpy(uo, w.row(o), dxi);
            }
        }
    }
    (dw, db, dx)
}

/// Input gradient only (dx = upstream·w); used when parameter gradients
/// of the traversed network are not needed.
pub fn linear_backward_input(w: &Mat, upstream: &Mat) -> Mat {
    debug_assert_eq!(upstream.cols, w.rows);
    let mut dx = Mat::zeros(upstream.rows, w.cols);
    for i in 0..upstream.rows {
        let ui = upstream.row(i);
        let dxi = dx.row_mut(i);
        for (o, &uo) in ui.iter().enumerate() {
            if uo != 0.0 {
                axpy(uo, w.row(o), dxi);
            }
        }
    }
    dx
}
