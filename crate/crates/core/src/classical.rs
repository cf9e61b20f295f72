//! Field-map-aware baselines: multi-frequency interpolation and iterative
//! reconstruction.
//!
//! MFI fits `exp(−i2πf τ) ≈ Σ_l c_l(f)·exp(−i2πf_l τ)` over the readout time
//! axis. Conjugating both sides gives the demodulation phasor, so the
//! corrected image is `Σ_l conj(c_l(f(x)))·b_l(x)` with `b_l` the basis image
//! demodulated at `f_l`.

use std::f64::consts::TAU;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError, FieldMap, KspaceData};
use crate::spiral::SpiralTrajectory;
use crate::tensors::ComplexImage;

/// Tikhonov weight relative to `trace(BᴴB)/L`.
pub const MFI_TIKHONOV: f64 = 1e-8;
/// Default coefficient-table spacing (Hz).
pub const MFI_GRID_STEP_HZ: f64 = 1.0;
/// Largest inter-basis phase drift (cycles) accepted by [`default_l`].
const MFI_DRIFT_CYCLES: f64 = 0.25;
const SOLVE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassicalError {
    #[error("need at least 2 basis frequencies, got {0}")]
    TooFewBases(usize),
    #[error("frequency range [{f_min}, {f_max}] Hz is empty")]
    EmptyRange { f_min: f64, f_max: f64 },
    #[error("grid step {0} Hz must be positive")]
    BadStep(f64),
    #[error("interpolation system at {freq_hz} Hz is ill-conditioned (relative solve residual {residual:e})")]
    IllConditioned { freq_hz: f64, residual: f64 },
    #[error("field value {value} Hz outside planned range [{f_min}, {f_max}] Hz")]
    OutsidePlan { value: f64, f_min: f64, f_max: f64 },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Interpolation coefficients tabulated on a uniform frequency grid.
#[derive(Debug, Clone)]
pub struct MfiPlan {
    basis_freqs: Vec<f64>,
    f_min: f64,
    f_max: f64,
    grid_step: f64,
    /// Row `i` holds the coefficients for `f_min + i·grid_step`.
    coeffs: Vec<Vec<Complex64>>,
    /// Relative fit error `‖e(f) − Bc‖/‖e(f)‖` per grid row.
    fit_residuals: Vec<f64>,
}

impl MfiPlan {
    pub fn basis_freqs(&self) -> &[f64] {
        &self.basis_freqs
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn range(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }

    pub fn grid_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn grid_freq(&self, i: usize) -> f64 {
        self.f_min + i as f64 * self.grid_step
    }

    pub fn fit_residuals(&self) -> &[f64] {
        &self.fit_residuals
    }

    pub fn max_fit_residual(&self) -> f64 {
        self.fit_residuals.iter().fold(0.0, |m, &r| m.max(r))
    }

    /// Nearest grid row for `f`.
    pub fn coefficients(&self, f: f64) -> Result<&[Complex64], ClassicalError> {
        let pos = (f - self.f_min) / self.grid_step;
        let i = pos.round();
        if !(i >= 0.0 && (i as usize) < self.coeffs.len()) {
            return Err(ClassicalError::OutsidePlan {
                value: f,
                f_min: self.f_min,
                f_max: self.f_max,
            });
        }
        Ok(&self.coeffs[i as usize])
    }
}

/// Basis count keeping the inter-basis phase drift over the readout ≤ π/2.
pub fn default_l(f_min: f64, f_max: f64, readout_s: f64) -> usize {
    (((f_max - f_min) * readout_s / MFI_DRIFT_CYCLES).ceil() as usize + 1).max(2)
}

fn phasors(freq: f64, times: &[f64]) -> Vec<Complex64> {
    times
        .iter()
        .map(|&t| Complex64::from_polar(1.0, -TAU * freq * t))
        .collect()
}

/// Fits coefficients for every grid frequency in `[f_min, f_max]` against
/// `L` uniformly spaced basis frequencies spanning the same range.
pub fn plan_mfi(
    traj: &SpiralTrajectory,
    f_min: f64,
    f_max: f64,
    l: usize,
    grid_step: f64,
) -> Result<MfiPlan, ClassicalError> {
    if l < 2 {
        return Err(ClassicalError::TooFewBases(l));
    }
    if !(f_min < f_max) {
        return Err(ClassicalError::EmptyRange { f_min, f_max });
    }
    if !(grid_step > 0.0) {
        return Err(ClassicalError::BadStep(grid_step));
    }
    let times = traj.interleaf_times();
    let basis_freqs: Vec<f64> = (0..l)
        .map(|i| f_min + (f_max - f_min) * i as f64 / (l - 1) as f64)
        .collect();
    let columns: Vec<Vec<Complex64>> = basis_freqs.iter().map(|&f| phasors(f, times)).collect();
    let b = DMatrix::from_fn(times.len(), l, |m, j| columns[j][m]);
    let bh = b.adjoint();
    let gram = &bh * &b;
    let trace: f64 = (0..l).map(|i| gram[(i, i)].re).sum();
    let lambda = MFI_TIKHONOV * trace / l as f64;
    let mut reg = gram.clone();
    for i in 0..l {
        reg[(i, i)] += lambda;
    }
    let chol = reg.clone().cholesky().ok_or(ClassicalError::IllConditioned {
        freq_hz: f_min,
        residual: f64::INFINITY,
    })?;
    let n_grid = ((f_max - f_min) / grid_step).round() as usize + 1;
    let rows: Vec<(Vec<Complex64>, f64)> = (0..n_grid)
        .into_par_iter()
        .map(|i| {
            let f = (f_min + i as f64 * grid_step).min(f_max);
            let e = DVector::from_vec(phasors(f, times));
            let rhs = &bh * &e;
            let c = chol.solve(&rhs);
            let solve_res = (&reg * &c - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE);
            if !(solve_res < SOLVE_TOL) || c.iter().any(|z| !z.is_finite()) {
                return Err(ClassicalError::IllConditioned {
                    freq_hz: f,
                    residual: solve_res,
                });
            }
            let fit = (&e - &b * &c).norm() / e.norm();
            Ok((c.iter().copied().collect(), fit))
        })
        .collect::<Result<_, _>>()?;
    let (coeffs, fit_residuals) = rows.into_iter().unzip();
    Ok(MfiPlan {
        basis_freqs,
        f_min,
        f_max,
        grid_step,
        coeffs,
        fit_residuals,
    })
}

/// Integer-Hz range covering `field`, widened to at least two grid steps.
pub fn map_range(field: &FieldMap) -> (f64, f64) {
    let (lo, hi) = field.min_max();
    if hi - lo < 2.0 * MFI_GRID_STEP_HZ {
        let mid = 0.5 * (lo + hi);
        (mid - MFI_GRID_STEP_HZ, mid + MFI_GRID_STEP_HZ)
    } else {
        (lo.floor(), hi.ceil())
    }
}

/// Plan spanning the map's range with the default `L` and grid step.
pub fn plan_for_map(traj: &SpiralTrajectory, field: &FieldMap) -> Result<MfiPlan, ClassicalError> {
    let (lo, hi) = map_range(field);
    plan_mfi(traj, lo, hi, default_l(lo, hi, traj.readout_len()), MFI_GRID_STEP_HZ)
}

/// `m̂(x) = Σ_l conj(c_l(f(x)))·b_l(x)`.
pub fn mfi_deblur(
    s: &KspaceData,
    field: &FieldMap,
    plan: &MfiPlan,
) -> Result<ComplexImage, ClassicalError> {
    let enc = Encoder::new(s.trajectory().clone(), field.height(), field.width());
    mfi_deblur_with(&enc, s, field, plan)
}

/// [`mfi_deblur`] reusing an encoder built for the same trajectory and size.
pub fn mfi_deblur_with(
    enc: &Encoder,
    s: &KspaceData,
    field: &FieldMap,
    plan: &MfiPlan,
) -> Result<ComplexImage, ClassicalError> {
    if (enc.height(), enc.width()) != (field.height(), field.width()) {
        return Err(EncoderError::DimensionMismatch {
            image: (enc.height(), enc.width()),
            field: (field.height(), field.width()),
        }
        .into());
    }
    let rows: Vec<&[Complex64]> = field
        .data()
        .iter()
        .map(|&f| plan.coefficients(f))
        .collect::<Result<_, _>>()?;
    let bases: Vec<ComplexImage> = plan
        .basis_freqs()
        .par_iter()
        .map(|&fl| enc.basis_image(s, fl))
        .collect();
    let data = rows
        .iter()
        .enumerate()
        .map(|(p, c)| {
            c.iter()
                .zip(&bases)
                .map(|(cl, b)| cl.conj() * b.data()[p])
                .sum()
        })
        .collect();
    Ok(ComplexImage::from_vec(field.height(), field.width(), data).expect("finite"))
}

#[derive(Debug, Clone)]
pub struct IrResult {
    pub image: ComplexImage,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub seconds: f64,
}

/// Least-squares reconstruction with the field map in the model.
pub fn ir_deblur(
    s: &KspaceData,
    field: &FieldMap,
    iters: usize,
    tol: f64,
) -> Result<IrResult, ClassicalError> {
    let enc = Encoder::new(s.trajectory().clone(), field.height(), field.width());
    ir_deblur_with(&enc, s, field, iters, tol)
}

pub fn ir_deblur_with(
    enc: &Encoder,
    s: &KspaceData,
    field: &FieldMap,
    iters: usize,
    tol: f64,
) -> Result<IrResult, ClassicalError> {
    let start = Instant::now();
    let sol = enc.cg_recon(s, Some(field), iters, tol)?;
    Ok(IrResult {
        image: sol.image,
        iterations: sol.iterations,
        residuals: sol.residuals,
        seconds: start.elapsed().as_secs_f64(),
    })
}
