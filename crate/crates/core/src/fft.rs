//! Two-dimensional FFT helpers over row-major complex buffers.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Planned forward/inverse transforms for a fixed `rows × cols` grid.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.rows * self.cols);
        row.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[r * self.cols + c];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                data[r * self.cols + c] = column[r];
            }
        }
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform in place, normalized by `1/(rows·cols)`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, a: &Array2<f64>) -> Vec<Complex64> {
        assert_eq!(a.dim(), (self.rows, self.cols));
        let mut buf: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Array2<f64> {
        self.inverse(&mut spec);
        Array2::from_shape_fn((self.rows, self.cols), |(r, c)| spec[r * self.cols + c].re)
    }
}

/// Places a centered `K×K` kernel on a `rows × cols` grid with its center at
/// the origin (wrap-around), the layout expected by circular convolution.
pub fn embed_centered(k: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (kh, kw) = k.dim();
    let (ch, cw) = (kh / 2, kw / 2);
    let mut out = Array2::zeros((rows, cols));
    for ((u, v), &w) in k.indexed_iter() {
        let r = (u + rows - ch) % rows;
        let c = (v + cols - cw) % cols;
        out[[r, c]] += w;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_identity() {
        let a = Array2::from_shape_fn((6, 9), |(r, c)| (r * 9 + c) as f64 * 0.37 - 3.0);
        let f = Fft2::new(6, 9);
        let back = f.inverse_real(f.forward_real(&a));
        for (x, y) in a.iter().zip(back.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dc_is_sum() {
        let a = Array2::from_shape_fn((4, 5), |(r, c)| (r + c) as f64);
        let spec = Fft2::new(4, 5).forward_real(&a);
        assert!((spec[0].re - a.sum()).abs() < 1e-12);
    }
}
