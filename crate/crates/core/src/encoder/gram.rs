//! Zero-field normal operator through Toeplitz embedding.
//!
//! Without off-resonance `(AᴴA m)_p = Σ_n m_n P(p − n)` with
//! `P(d) = Σ_m exp(+i2π k_m·d/N)`, a 2D convolution. `P` is tabulated once
//! for lags `−(N−1)..=(N−1)`, embedded in a `2H×2W` circulant and applied by
//! FFT.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::spiral::SpiralTrajectory;

use super::cg::NormalOperator;

pub struct ToeplitzGram {
    height: usize,
    width: usize,
    kernel_hat: Vec<Complex64>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

fn lag_table(k: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let lags = 2 * n - 1;
    let mut re = Vec::with_capacity(lags);
    let mut im = Vec::with_capacity(lags);
    for l in 0..lags {
        let d = l as f64 - (n as f64 - 1.0);
        let (s, c) = (TAU * k * d / n as f64).sin_cos();
        re.push(c);
        im.push(s);
    }
    (re, im)
}

/// In-place 2D FFT of a `rows × cols` row-major buffer.
fn fft2(buf: &mut [Complex64], rows: usize, cols: usize, row: &dyn Fft<f64>, col: &dyn Fft<f64>) {
    for chunk in buf.chunks_exact_mut(cols) {
        row.process(chunk);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
}

impl ToeplitzGram {
    pub fn new(traj: &SpiralTrajectory, height: usize, width: usize) -> Self {
        let (lh, lw) = (2 * height - 1, 2 * width - 1);
        let mut pr = vec![0.0; lh * lw];
        let mut pi = vec![0.0; lh * lw];
        for m in 0..traj.len() {
            let (kx, ky) = traj.k_cycles_per_fov(m);
            let (xr, xi) = lag_table(kx, width);
            let (yr, yi) = lag_table(ky, height);
            for dy in 0..lh {
                let (ar, ai) = (yr[dy], yi[dy]);
                let row_r = &mut pr[dy * lw..(dy + 1) * lw];
                let row_i = &mut pi[dy * lw..(dy + 1) * lw];
                for (((o_r, o_i), &b_r), &b_i) in
                    row_r.iter_mut().zip(row_i.iter_mut()).zip(&xr).zip(&xi)
                {
                    *o_r += ar * b_r - ai * b_i;
                    *o_i += ar * b_i + ai * b_r;
                }
            }
        }
        let (rows, cols) = (2 * height, 2 * width);
        let mut kernel = vec![Complex64::new(0.0, 0.0); rows * cols];
        for dy in 0..lh {
            let r = (dy as isize - (height as isize - 1)).rem_euclid(rows as isize) as usize;
            for dx in 0..lw {
                let c = (dx as isize - (width as isize - 1)).rem_euclid(cols as isize) as usize;
                kernel[r * cols + c] = Complex64::new(pr[dy * lw + dx], pi[dy * lw + dx]);
            }
        }
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(cols);
        let row_inv = planner.plan_fft_inverse(cols);
        let col_fwd = planner.plan_fft_forward(rows);
        let col_inv = planner.plan_fft_inverse(rows);
        fft2(&mut kernel, rows, cols, row_fwd.as_ref(), col_fwd.as_ref());
        let scale = 1.0 / (rows * cols) as f64;
        kernel.iter_mut().for_each(|z| *z *= scale);
        Self {
            height,
            width,
            kernel_hat: kernel,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        }
    }
}

impl NormalOperator for ToeplitzGram {
    fn dim(&self) -> usize {
        self.height * self.width
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.dim());
        let (rows, cols) = (2 * self.height, 2 * self.width);
        let mut buf = vec![Complex64::new(0.0, 0.0); rows * cols];
        for r in 0..self.height {
            buf[r * cols..r * cols + self.width]
                .copy_from_slice(&x[r * self.width..(r + 1) * self.width]);
        }
        fft2(&mut buf, rows, cols, self.row_fwd.as_ref(), self.col_fwd.as_ref());
        buf.iter_mut()
            .zip(&self.kernel_hat)
            .for_each(|(b, k)| *b *= k);
        fft2(&mut buf, rows, cols, self.row_inv.as_ref(), self.col_inv.as_ref());
        let mut out = Vec::with_capacity(self.dim());
        for r in 0..self.height {
            out.extend_from_slice(&buf[r * cols..r * cols + self.width]);
        }
        out
    }
}
