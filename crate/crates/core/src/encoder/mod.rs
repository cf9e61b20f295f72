//! Discrete-object signal model with off-resonance, its adjoint, normal-equation
//! solvers, and field-map synthesis.
//!
//! Signal model for sample `m` at time `t_m` (from readout start):
//!
//! ```text
//! s(t_m) = Σ_n img(x_n) · exp(−i2π f(x_n) t_m) · exp(−i2π k_m·x_n)
//! ```
//!
//! with `k_m` in cycles/FOV and pixel centres `x_n = (n + ½)/N − ½`.

mod cg;
mod fieldmap;
mod gram;
mod operator;

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::spiral::SpiralTrajectory;
use crate::tensors::ComplexImage;

pub use cg::{solve_normal, CgSolution, KrylovSolution, NormalOperator};
pub use fieldmap::{
    augment_field_map, make_synthetic_field_map, smooth_poly_field, AugmentationParams, FieldMap,
    FieldMapStyle, ALPHA_RANGE, BETA_RANGE_HZ, FIELD_LIMIT_HZ, SYNTH_CLAMP_HZ,
};
pub use gram::ToeplitzGram;
pub use operator::{Encoder, FieldNormal, OffResonance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("image is {image:?} but field map is {field:?}")]
    DimensionMismatch {
        image: (usize, usize),
        field: (usize, usize),
    },
    #[error("{got} k-space samples for a trajectory of {expected}")]
    SampleCountMismatch { expected: usize, got: usize },
    #[error("field value {value} Hz at pixel {index} exceeds ±{FIELD_LIMIT_HZ} Hz")]
    FieldOutOfRange { index: usize, value: f64 },
    #[error("augmentation alpha={alpha}, beta={beta} outside alpha∈[0,3.15], beta∈[−200,200]")]
    InvalidAugmentation { alpha: f64, beta: f64 },
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("solver diverged at iteration {iteration}: residual {residual:e} vs initial {initial:e}")]
    Diverged {
        iteration: usize,
        residual: f64,
        initial: f64,
    },
}

/// Complex samples aligned one-to-one with a trajectory.
#[derive(Debug, Clone)]
pub struct KspaceData {
    samples: Vec<Complex64>,
    trajectory: Arc<SpiralTrajectory>,
}

impl KspaceData {
    pub fn new(
        samples: Vec<Complex64>,
        trajectory: Arc<SpiralTrajectory>,
    ) -> Result<Self, EncoderError> {
        if samples.len() != trajectory.len() {
            return Err(EncoderError::SampleCountMismatch {
                expected: trajectory.len(),
                got: samples.len(),
            });
        }
        Ok(Self {
            samples,
            trajectory,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn trajectory(&self) -> &Arc<SpiralTrajectory> {
        &self.trajectory
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_tensor(&self) -> crate::tensors::ComplexTensor {
        crate::tensors::ComplexTensor::from_vec(&[self.samples.len()], self.samples.clone())
            .expect("finite samples")
    }
}

fn square_encoder(traj: &Arc<SpiralTrajectory>, field: Option<&FieldMap>) -> Encoder {
    let (h, w) = field
        .map(|f| (f.height(), f.width()))
        .unwrap_or((traj.matrix_size(), traj.matrix_size()));
    Encoder::new(traj.clone(), h, w)
}

/// Simulates spiral samples of `img` under field map `field`.
pub fn forward(
    img: &ComplexImage,
    field: &FieldMap,
    traj: &Arc<SpiralTrajectory>,
) -> Result<KspaceData, EncoderError> {
    Encoder::new(traj.clone(), img.height(), img.width()).forward(img, OffResonance::Map(field))
}

/// Density-compensated basis image demodulated at `demod_hz`, on the trajectory's matrix.
pub fn adjoint(s: &KspaceData, demod_hz: f64) -> ComplexImage {
    square_encoder(s.trajectory(), None).basis_image(s, demod_hz)
}

/// Least-squares reconstruction of `s` under `field` (zero field when `None`).
pub fn cg_recon(
    s: &KspaceData,
    field: Option<&FieldMap>,
    iters: usize,
    tol: f64,
) -> Result<ComplexImage, EncoderError> {
    let enc = square_encoder(s.trajectory(), field);
    Ok(enc.cg_recon(s, field, iters, tol)?.image)
}
