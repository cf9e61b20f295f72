//! Uniform-density Archimedean spiral trajectories.
//!
//! Interleaf `j` follows `k(u) = k_max · u · exp(i(2π·n_turns·u + 2πj/n_il))`
//! with `u = s/(S-1)` for sample `s` of `S`, so the last sample of every
//! interleaf sits exactly on `k_max`. All interleaves share one time axis
//! (`τ_s = s·dt`), each being a separate excitation.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::tensors::RealTensor;

/// Readout lengths (s) used for the sweep experiments.
pub const READOUTS_S: [f64; 4] = [2.520e-3, 4.016e-3, 5.320e-3, 7.936e-3];

/// Default receiver dwell time (s).
pub const DEFAULT_DT_S: f64 = 4e-6;

/// Along-path oversampling used when choosing the default interleaf count:
/// consecutive samples at most `1/(4·FOV)` apart. Critically sampled
/// trajectories leave slowly converging modes near the FOV border.
pub const DEFAULT_PATH_OVERSAMPLING: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpiralError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("readout of {readout_s} s holds fewer than two samples at dt {dt_s} s")]
    TooShort { readout_s: f64, dt_s: f64 },
    #[error(
        "{n_interleaves} interleaves give sample spacing {spacing:.4} cycles/cm > Nyquist limit {limit:.4}"
    )]
    Nyquist {
        n_interleaves: usize,
        spacing: f64,
        limit: f64,
    },
    #[error("no interleaf count up to {0} satisfies Nyquist")]
    NoFeasibleInterleaves(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralTrajectory {
    kx: Vec<f64>,
    ky: Vec<f64>,
    times: Vec<f64>,
    readout_len: f64,
    dt: f64,
    n_interleaves: usize,
    samples_per_interleaf: usize,
    fov_cm: f64,
    matrix_size: usize,
}

/// Samples per interleaf for a readout; rounds `readout/dt`.
pub fn samples_per_interleaf(readout_len_s: f64, dt_s: f64) -> usize {
    (readout_len_s / dt_s).round() as usize
}

fn interleaf_point(k_max: f64, n_turns: f64, u: f64, rotation: f64) -> (f64, f64) {
    let r = k_max * u;
    let phi = TAU * n_turns * u + rotation;
    (r * phi.cos(), r * phi.sin())
}

/// Largest distance between consecutive samples of one interleaf (cycles/cm).
fn max_step(k_max: f64, n_turns: f64, samples: usize) -> f64 {
    let mut prev = interleaf_point(k_max, n_turns, 0.0, 0.0);
    let mut worst: f64 = 0.0;
    for s in 1..samples {
        let p = interleaf_point(k_max, n_turns, s as f64 / (samples - 1) as f64, 0.0);
        worst = worst.max((p.0 - prev.0).hypot(p.1 - prev.1));
        prev = p;
    }
    worst
}

fn validate(matrix_size: usize, fov_cm: f64, readout_len_s: f64, dt_s: f64) -> Result<usize, SpiralError> {
    for (name, value) in [
        ("matrix_size", matrix_size as f64),
        ("fov_cm", fov_cm),
        ("readout_len_s", readout_len_s),
        ("dt_s", dt_s),
    ] {
        if !(value > 0.0) {
            return Err(SpiralError::NonPositive { name, value });
        }
    }
    let samples = samples_per_interleaf(readout_len_s, dt_s);
    if samples < 2 {
        return Err(SpiralError::TooShort {
            readout_s: readout_len_s,
            dt_s,
        });
    }
    Ok(samples)
}

/// Radial turn spacing and largest along-path step for a candidate
/// interleaf count, both in cycles/cm.
fn spacings(matrix_size: usize, fov_cm: f64, n_interleaves: usize, samples: usize) -> (f64, f64) {
    let k_max = matrix_size as f64 / (2.0 * fov_cm);
    let n_turns = matrix_size as f64 / (2.0 * n_interleaves as f64);
    // Adjacent turns of the interleaved union are k_max/(n_turns·n_il) = 1/FOV apart.
    let radial = k_max / (n_turns * n_interleaves as f64);
    (radial, max_step(k_max, n_turns, samples))
}

/// Smallest interleaf count with radial spacing ≤ 1/FOV and along-path
/// steps ≤ 1/(oversampling·FOV).
pub fn interleaves_for(
    matrix_size: usize,
    fov_cm: f64,
    readout_len_s: f64,
    dt_s: f64,
    oversampling: f64,
) -> Result<usize, SpiralError> {
    let samples = validate(matrix_size, fov_cm, readout_len_s, dt_s)?;
    if !(oversampling >= 1.0) {
        return Err(SpiralError::NonPositive {
            name: "oversampling - 1",
            value: oversampling - 1.0,
        });
    }
    let tol = 1.0 + 1e-9;
    let cap = 8 * matrix_size;
    (1..=cap)
        .find(|&n| {
            let (radial, step) = spacings(matrix_size, fov_cm, n, samples);
            radial <= tol / fov_cm && step * oversampling <= tol / fov_cm
        })
        .ok_or(SpiralError::NoFeasibleInterleaves(cap))
}

/// Smallest interleaf count meeting Nyquist along and across the spiral.
pub fn min_interleaves(
    matrix_size: usize,
    fov_cm: f64,
    readout_len_s: f64,
    dt_s: f64,
) -> Result<usize, SpiralError> {
    interleaves_for(matrix_size, fov_cm, readout_len_s, dt_s, 1.0)
}

pub fn make_spiral(
    matrix_size: usize,
    fov_cm: f64,
    readout_len_s: f64,
    n_interleaves: usize,
    dt_s: f64,
) -> Result<SpiralTrajectory, SpiralError> {
    let samples = validate(matrix_size, fov_cm, readout_len_s, dt_s)?;
    if n_interleaves == 0 {
        return Err(SpiralError::NonPositive {
            name: "n_interleaves",
            value: 0.0,
        });
    }
    let limit = 1.0 / fov_cm;
    let (radial, step) = spacings(matrix_size, fov_cm, n_interleaves, samples);
    let spacing = radial.max(step);
    if spacing > limit * (1.0 + 1e-9) {
        return Err(SpiralError::Nyquist {
            n_interleaves,
            spacing,
            limit,
        });
    }
    let k_max = matrix_size as f64 / (2.0 * fov_cm);
    let n_turns = matrix_size as f64 / (2.0 * n_interleaves as f64);
    let total = samples * n_interleaves;
    let mut kx = Vec::with_capacity(total);
    let mut ky = Vec::with_capacity(total);
    let mut times = Vec::with_capacity(total);
    for j in 0..n_interleaves {
        let rotation = TAU * j as f64 / n_interleaves as f64;
        for s in 0..samples {
            let (x, y) = interleaf_point(k_max, n_turns, s as f64 / (samples - 1) as f64, rotation);
            kx.push(x);
            ky.push(y);
            times.push(s as f64 * dt_s);
        }
    }
    Ok(SpiralTrajectory {
        kx,
        ky,
        times,
        readout_len: readout_len_s,
        dt: dt_s,
        n_interleaves,
        samples_per_interleaf: samples,
        fov_cm,
        matrix_size,
    })
}

/// [`make_spiral`] with the smallest interleaf count that is Nyquist-sampled
/// radially and [`DEFAULT_PATH_OVERSAMPLING`]-times oversampled along the path.
pub fn make_default_spiral(
    matrix_size: usize,
    fov_cm: f64,
    readout_len_s: f64,
    dt_s: f64,
) -> Result<SpiralTrajectory, SpiralError> {
    let n = interleaves_for(matrix_size, fov_cm, readout_len_s, dt_s, DEFAULT_PATH_OVERSAMPLING)?;
    make_spiral(matrix_size, fov_cm, readout_len_s, n, dt_s)
}

impl SpiralTrajectory {
    pub fn len(&self) -> usize {
        self.kx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kx.is_empty()
    }

    /// k-space x coordinates, cycles/cm.
    pub fn kx(&self) -> &[f64] {
        &self.kx
    }

    pub fn ky(&self) -> &[f64] {
        &self.ky
    }

    /// Time stamp of every sample (s from its own readout start).
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// The shared time axis of one interleaf.
    pub fn interleaf_times(&self) -> &[f64] {
        &self.times[..self.samples_per_interleaf]
    }

    pub fn readout_len(&self) -> f64 {
        self.readout_len
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_interleaves(&self) -> usize {
        self.n_interleaves
    }

    pub fn samples_per_interleaf(&self) -> usize {
        self.samples_per_interleaf
    }

    pub fn fov_cm(&self) -> f64 {
        self.fov_cm
    }

    pub fn matrix_size(&self) -> usize {
        self.matrix_size
    }

    /// `matrix_size / (2·FOV)` in cycles/cm.
    pub fn k_max(&self) -> f64 {
        self.matrix_size as f64 / (2.0 * self.fov_cm)
    }

    /// Sample `m` in cycles/FOV, the unit the encoder pairs with normalised pixel positions.
    pub fn k_cycles_per_fov(&self, m: usize) -> (f64, f64) {
        (self.kx[m] * self.fov_cm, self.ky[m] * self.fov_cm)
    }

    /// N×3 export `(kx, ky, t)`.
    pub fn to_tensor(&self) -> RealTensor {
        let mut data = Vec::with_capacity(3 * self.len());
        for m in 0..self.len() {
            data.extend_from_slice(&[self.kx[m], self.ky[m], self.times[m]]);
        }
        RealTensor::from_vec(&[self.len(), 3], data).expect("finite trajectory")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_counts_for_standard_readouts() {
        let counts: Vec<_> = READOUTS_S
            .iter()
            .map(|&t| samples_per_interleaf(t, DEFAULT_DT_S))
            .collect();
        assert_eq!(counts, vec![630, 1004, 1330, 1984]);
        let traj = make_default_spiral(64, 20.0, 2.520e-3, DEFAULT_DT_S).unwrap();
        assert_eq!(traj.samples_per_interleaf(), 630);
        assert_eq!(traj.len(), 630 * traj.n_interleaves());
    }

    #[test]
    fn k_max_value() {
        let traj = make_default_spiral(64, 20.0, 2.520e-3, DEFAULT_DT_S).unwrap();
        assert!((traj.k_max() - 1.6).abs() < 1e-15);
    }

    #[test]
    fn last_sample_on_k_max() {
        let traj = make_default_spiral(64, 20.0, 4.016e-3, DEFAULT_DT_S).unwrap();
        let s = traj.samples_per_interleaf();
        for j in 0..traj.n_interleaves() {
            let m = j * s + s - 1;
            let r = traj.kx()[m].hypot(traj.ky()[m]);
            assert!((r - traj.k_max()).abs() < 1e-9);
        }
        let max_r = (0..traj.len())
            .map(|m| traj.kx()[m].hypot(traj.ky()[m]))
            .fold(0.0, f64::max);
        assert!(max_r <= traj.k_max() + 1e-12);
    }

    #[test]
    fn interleaves_are_rotations() {
        let traj = make_default_spiral(32, 20.0, 2.520e-3, DEFAULT_DT_S).unwrap();
        let s = traj.samples_per_interleaf();
        let n = traj.n_interleaves();
        for j in 1..n {
            let (c, sn) = ((TAU * j as f64 / n as f64).cos(), (TAU * j as f64 / n as f64).sin());
            for i in 0..s {
                let (x0, y0) = (traj.kx()[i], traj.ky()[i]);
                let (xr, yr) = (c * x0 - sn * y0, sn * x0 + c * y0);
                assert!((traj.kx()[j * s + i] - xr).abs() < 1e-9);
                assert!((traj.ky()[j * s + i] - yr).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn times_step_by_dt() {
        let traj = make_spiral(16, 20.0, 1e-3, 4, DEFAULT_DT_S).unwrap();
        let t = traj.interleaf_times();
        assert_eq!(t[0], 0.0);
        for w in t.windows(2) {
            assert!((w[1] - w[0] - DEFAULT_DT_S).abs() < 1e-15);
        }
    }

    #[test]
    fn too_few_interleaves_rejected() {
        let err = make_spiral(64, 20.0, 2.520e-3, 1, DEFAULT_DT_S).unwrap_err();
        assert!(matches!(err, SpiralError::Nyquist { .. }));
        let n = min_interleaves(64, 20.0, 2.520e-3, DEFAULT_DT_S).unwrap();
        assert!(make_spiral(64, 20.0, 2.520e-3, n - 1, DEFAULT_DT_S).is_err());
    }

    #[test]
    fn non_positive_arguments() {
        assert!(make_spiral(0, 20.0, 1e-3, 1, 4e-6).is_err());
        assert!(make_spiral(16, -1.0, 1e-3, 1, 4e-6).is_err());
        assert!(make_spiral(16, 20.0, 0.0, 1, 4e-6).is_err());
        assert!(make_spiral(16, 20.0, 1e-3, 0, 4e-6).is_err());
        assert!(make_spiral(16, 20.0, 1e-3, 1, 0.0).is_err());
    }

    #[test]
    fn export_shape() {
        let traj = make_spiral(16, 20.0, 1e-3, 4, DEFAULT_DT_S).unwrap();
        let t = traj.to_tensor();
        assert_eq!(t.dims(), &[traj.len(), 3]);
        assert_eq!(t.data()[3 * 5 + 2], traj.times()[5]);
    }
}
