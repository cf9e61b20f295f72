use std::f64::consts::{PI, TAU};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::spiral::SpiralTrajectory;
use crate::tensors::ComplexImage;

use super::cg::{solve_normal, CgSolution, NormalOperator};
use super::gram::ToeplitzGram;
use super::{EncoderError, FieldMap, KspaceData};

/// Field-map phasors are recomputed exactly every this many time steps and
/// advanced by complex rotation in between.
const PHASE_ANCHOR: usize = 32;
const LANES: usize = 8;

/// Off-resonance term applied by the encoder.
#[derive(Debug, Clone, Copy)]
pub enum OffResonance<'a> {
    Zero,
    Constant(f64),
    Map(&'a FieldMap),
}

impl<'a> OffResonance<'a> {
    fn simplify(self) -> OffResonance<'a> {
        match self {
            OffResonance::Map(f) if f.is_zero() => OffResonance::Zero,
            OffResonance::Constant(0.0) => OffResonance::Zero,
            other => other,
        }
    }
}

/// Encoding operator for one trajectory and image size.
///
/// The spatial phase `exp(−i2π k_m·x_n)` is separable in rows and columns, so
/// only `M×W` and `M×H` tables are stored; summation order is fixed, making
/// every result reproducible bit for bit.
pub struct Encoder {
    traj: Arc<SpiralTrajectory>,
    height: usize,
    width: usize,
    ex_re: Vec<f64>,
    ex_im: Vec<f64>,
    ey_re: Vec<f64>,
    ey_im: Vec<f64>,
    dcf: Vec<f64>,
    gram: OnceLock<ToeplitzGram>,
}

/// Normalised pixel-centre coordinate.
pub(crate) fn pixel_coord(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 - 0.5
}

fn phase_table(k: impl Iterator<Item = f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::new();
    let mut im = Vec::new();
    for km in k {
        for i in 0..n {
            let (s, c) = (-TAU * km * pixel_coord(i, n)).sin_cos();
            re.push(c);
            im.push(s);
        }
    }
    (re, im)
}

/// Ramp density compensation normalised to the sampled k-space disk area.
fn ramp_dcf(traj: &SpiralTrajectory, height: usize, width: usize) -> Vec<f64> {
    let s = traj.samples_per_interleaf();
    let mut w: Vec<f64> = (0..traj.len())
        .map(|m| {
            let (kx, ky) = traj.k_cycles_per_fov(m);
            kx.hypot(ky)
        })
        .collect();
    for j in 0..traj.n_interleaves() {
        for i in 0..s {
            let m = j * s + i;
            if w[m] == 0.0 {
                // Samples at the k-space origin get half their neighbour's weight.
                let next = w[j * s + (i + 1).min(s - 1)];
                w[m] = 0.5 * next;
            }
        }
    }
    let kmax = traj.k_max() * traj.fov_cm();
    let target = PI * kmax * kmax / (height * width) as f64;
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v *= target / total);
    }
    w
}

#[inline]
fn cdot(ar: &[f64], ai: &[f64], br: &[f64], bi: &[f64]) -> (f64, f64) {
    let mut re = [0.0f64; LANES];
    let mut im = [0.0f64; LANES];
    let n = ar.len();
    let split = n - n % LANES;
    for ((a, b), (c, d)) in ar[..split]
        .chunks_exact(LANES)
        .zip(ai[..split].chunks_exact(LANES))
        .zip(br[..split].chunks_exact(LANES).zip(bi[..split].chunks_exact(LANES)))
    {
        for l in 0..LANES {
            re[l] += a[l] * c[l] - b[l] * d[l];
            im[l] += a[l] * d[l] + b[l] * c[l];
        }
    }
    let mut sr: f64 = re.iter().sum();
    let mut si: f64 = im.iter().sum();
    for i in split..n {
        sr += ar[i] * br[i] - ai[i] * bi[i];
        si += ar[i] * bi[i] + ai[i] * br[i];
    }
    (sr, si)
}

/// `u += a · conj(e)` elementwise.
#[inline]
fn axpy_conj(ar: f64, ai: f64, er: &[f64], ei: &[f64], ur: &mut [f64], ui: &mut [f64]) {
    for (((u_r, u_i), &e_r), &e_i) in ur.iter_mut().zip(ui.iter_mut()).zip(er).zip(ei) {
        *u_r += ar * e_r + ai * e_i;
        *u_i += ai * e_r - ar * e_i;
    }
}

/// Yields `exp(−i2π f_n τ_s)` for successive time indices `s`.
struct PhaseTracker<'a> {
    field: &'a [f64],
    times: &'a [f64],
    step_re: Vec<f64>,
    step_im: Vec<f64>,
    re: Vec<f64>,
    im: Vec<f64>,
    next: usize,
}

impl<'a> PhaseTracker<'a> {
    fn new(field: &'a [f64], times: &'a [f64], dt: f64) -> Self {
        let (step_re, step_im) = field
            .iter()
            .map(|&f| {
                let (s, c) = (-TAU * f * dt).sin_cos();
                (c, s)
            })
            .unzip();
        Self {
            field,
            times,
            step_re,
            step_im,
            re: vec![0.0; field.len()],
            im: vec![0.0; field.len()],
            next: 0,
        }
    }

    fn advance(&mut self) -> (&[f64], &[f64]) {
        let s = self.next;
        if s.is_multiple_of(PHASE_ANCHOR) {
            let t = self.times[s];
            for ((r, i), &f) in self.re.iter_mut().zip(self.im.iter_mut()).zip(self.field) {
                let (sn, c) = (-TAU * f * t).sin_cos();
                *r = c;
                *i = sn;
            }
        } else {
            for (((r, i), &sr), &si) in self
                .re
                .iter_mut()
                .zip(self.im.iter_mut())
                .zip(&self.step_re)
                .zip(&self.step_im)
            {
                let nr = *r * sr - *i * si;
                *i = *r * si + *i * sr;
                *r = nr;
            }
        }
        self.next += 1;
        (&self.re, &self.im)
    }
}

fn split(img: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    img.iter().map(|z| (z.re, z.im)).unzip()
}

fn join(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

impl Encoder {
    pub fn new(traj: Arc<SpiralTrajectory>, height: usize, width: usize) -> Self {
        let n = traj.len();
        let (ex_re, ex_im) = phase_table((0..n).map(|m| traj.k_cycles_per_fov(m).0), width);
        let (ey_re, ey_im) = phase_table((0..n).map(|m| traj.k_cycles_per_fov(m).1), height);
        let dcf = ramp_dcf(&traj, height, width);
        Self {
            traj,
            height,
            width,
            ex_re,
            ex_im,
            ey_re,
            ey_im,
            dcf,
            gram: OnceLock::new(),
        }
    }

    pub fn trajectory(&self) -> &Arc<SpiralTrajectory> {
        &self.traj
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Density compensation weights, one per sample.
    pub fn dcf(&self) -> &[f64] {
        &self.dcf
    }

    fn check_image(&self, h: usize, w: usize) -> Result<(), EncoderError> {
        if (h, w) != (self.height, self.width) {
            return Err(EncoderError::DimensionMismatch {
                image: (h, w),
                field: (self.height, self.width),
            });
        }
        Ok(())
    }

    fn check_field(&self, off: OffResonance<'_>) -> Result<(), EncoderError> {
        if let OffResonance::Map(f) = off {
            if (f.height(), f.width()) != (self.height, self.width) {
                return Err(EncoderError::DimensionMismatch {
                    image: (self.height, self.width),
                    field: (f.height(), f.width()),
                });
            }
        }
        Ok(())
    }

    /// `Σ_n w_n exp(−i2π k_m·x_n)` for split image planes.
    fn project(&self, m: usize, wr: &[f64], wi: &[f64]) -> Complex64 {
        let (w, h) = (self.width, self.height);
        let er = &self.ex_re[m * w..(m + 1) * w];
        let ei = &self.ex_im[m * w..(m + 1) * w];
        let yr = &self.ey_re[m * h..(m + 1) * h];
        let yi = &self.ey_im[m * h..(m + 1) * h];
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..h {
            let (sr, si) = cdot(&wr[r * w..(r + 1) * w], &wi[r * w..(r + 1) * w], er, ei);
            acc += Complex64::new(yr[r], yi[r]) * Complex64::new(sr, si);
        }
        acc
    }

    /// `u_n += c · exp(+i2π k_m·x_n)`.
    fn spread(&self, m: usize, c: Complex64, ur: &mut [f64], ui: &mut [f64]) {
        let (w, h) = (self.width, self.height);
        let er = &self.ex_re[m * w..(m + 1) * w];
        let ei = &self.ex_im[m * w..(m + 1) * w];
        for r in 0..h {
            let a = c * Complex64::new(self.ey_re[m * h + r], -self.ey_im[m * h + r]);
            axpy_conj(
                a.re,
                a.im,
                er,
                ei,
                &mut ur[r * w..(r + 1) * w],
                &mut ui[r * w..(r + 1) * w],
            );
        }
    }

    /// Raw forward map on a row-major pixel vector.
    pub fn forward_raw(&self, img: &[Complex64], off: OffResonance<'_>) -> Vec<Complex64> {
        assert_eq!(img.len(), self.height * self.width);
        let n = self.traj.len();
        let spi = self.traj.samples_per_interleaf();
        let (ir, ii) = split(img);
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        match off.simplify() {
            OffResonance::Zero => {
                for (m, o) in out.iter_mut().enumerate() {
                    *o = self.project(m, &ir, &ii);
                }
            }
            OffResonance::Constant(f0) => {
                let times = self.traj.times();
                for (m, o) in out.iter_mut().enumerate() {
                    *o = self.project(m, &ir, &ii) * Complex64::from_polar(1.0, -TAU * f0 * times[m]);
                }
            }
            OffResonance::Map(f) => {
                let mut tracker =
                    PhaseTracker::new(f.data(), self.traj.interleaf_times(), self.traj.dt());
                let mut wr = vec![0.0; ir.len()];
                let mut wi = vec![0.0; ir.len()];
                for s in 0..spi {
                    let (pr, pi) = tracker.advance();
                    for n in 0..ir.len() {
                        wr[n] = ir[n] * pr[n] - ii[n] * pi[n];
                        wi[n] = ir[n] * pi[n] + ii[n] * pr[n];
                    }
                    for j in 0..self.traj.n_interleaves() {
                        let m = j * spi + s;
                        out[m] = self.project(m, &wr, &wi);
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::forward_raw`], optionally density-weighted.
    pub fn adjoint_raw(&self, s: &[Complex64], off: OffResonance<'_>, weighted: bool) -> Vec<Complex64> {
        assert_eq!(s.len(), self.traj.len());
        let npix = self.height * self.width;
        let spi = self.traj.samples_per_interleaf();
        let weight = |m: usize| if weighted { self.dcf[m] } else { 1.0 };
        let mut ir = vec![0.0; npix];
        let mut ii = vec![0.0; npix];
        match off.simplify() {
            OffResonance::Zero => {
                for (m, &v) in s.iter().enumerate() {
                    self.spread(m, v * weight(m), &mut ir, &mut ii);
                }
            }
            OffResonance::Constant(f0) => {
                let times = self.traj.times();
                for (m, &v) in s.iter().enumerate() {
                    let c = v * weight(m) * Complex64::from_polar(1.0, TAU * f0 * times[m]);
                    self.spread(m, c, &mut ir, &mut ii);
                }
            }
            OffResonance::Map(f) => {
                let mut tracker =
                    PhaseTracker::new(f.data(), self.traj.interleaf_times(), self.traj.dt());
                let mut ur = vec![0.0; npix];
                let mut ui = vec![0.0; npix];
                for t in 0..spi {
                    ur.iter_mut().for_each(|v| *v = 0.0);
                    ui.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..self.traj.n_interleaves() {
                        let m = j * spi + t;
                        self.spread(m, s[m] * weight(m), &mut ur, &mut ui);
                    }
                    let (pr, pi) = tracker.advance();
                    // img += conj(phasor) · u
                    for n in 0..npix {
                        ir[n] += pr[n] * ur[n] + pi[n] * ui[n];
                        ii[n] += pr[n] * ui[n] - pi[n] * ur[n];
                    }
                }
            }
        }
        join(&ir, &ii)
    }

    pub fn forward(&self, img: &ComplexImage, off: OffResonance<'_>) -> Result<KspaceData, EncoderError> {
        self.check_image(img.height(), img.width())?;
        self.check_field(off)?;
        KspaceData::new(self.forward_raw(img.data(), off), self.traj.clone())
    }

    /// Unweighted adjoint `Aᴴ s`, the exact adjoint of [`Self::forward`].
    pub fn adjoint(&self, s: &KspaceData, off: OffResonance<'_>) -> Result<ComplexImage, EncoderError> {
        self.check_samples(s)?;
        self.check_field(off)?;
        Ok(self.image(self.adjoint_raw(s.samples(), off, false)))
    }

    /// Density-compensated conjugate-phase image demodulated at `demod_hz`.
    pub fn basis_image(&self, s: &KspaceData, demod_hz: f64) -> ComplexImage {
        assert_eq!(s.len(), self.traj.len(), "sample count");
        self.image(self.adjoint_raw(s.samples(), OffResonance::Constant(demod_hz), true))
    }

    fn check_samples(&self, s: &KspaceData) -> Result<(), EncoderError> {
        if s.len() != self.traj.len() {
            return Err(EncoderError::SampleCountMismatch {
                expected: self.traj.len(),
                got: s.len(),
            });
        }
        Ok(())
    }

    fn image(&self, data: Vec<Complex64>) -> ComplexImage {
        ComplexImage::from_vec(self.height, self.width, data).expect("finite image")
    }

    /// Zero-field normal operator `AᴴA`, built on first use.
    pub fn gram(&self) -> &ToeplitzGram {
        self.gram
            .get_or_init(|| ToeplitzGram::new(&self.traj, self.height, self.width))
    }

    /// Krylov least-squares solve of `min ‖A_f m − s‖²`; zero field when `field` is `None`.
    pub fn cg_recon(
        &self,
        s: &KspaceData,
        field: Option<&FieldMap>,
        iters: usize,
        tol: f64,
    ) -> Result<CgSolution, EncoderError> {
        if iters == 0 {
            return Err(EncoderError::ZeroIterations);
        }
        self.check_samples(s)?;
        let off = field.map_or(OffResonance::Zero, OffResonance::Map).simplify();
        self.check_field(off)?;
        let rhs = self.adjoint_raw(s.samples(), off, false);
        let sol = match off {
            OffResonance::Map(f) => solve_normal(
                &FieldNormal { enc: self, field: f },
                &rhs,
                iters,
                tol,
            )?,
            _ => solve_normal(self.gram(), &rhs, iters, tol)?,
        };
        Ok(CgSolution {
            image: self.image(sol.x),
            residuals: sol.residuals,
            iterations: sol.iterations,
        })
    }
}

/// `A_fᴴ A_f` evaluated by direct summation.
pub struct FieldNormal<'a> {
    pub enc: &'a Encoder,
    pub field: &'a FieldMap,
}

impl NormalOperator for FieldNormal<'_> {
    fn dim(&self) -> usize {
        self.enc.height * self.enc.width
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let off = OffResonance::Map(self.field);
        let s = self.enc.forward_raw(x, off);
        self.enc.adjoint_raw(&s, off, false)
    }
}

impl NormalOperator for Encoder {
    fn dim(&self) -> usize {
        self.height * self.width
    }

    fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let s = self.forward_raw(x, OffResonance::Zero);
        self.adjoint_raw(&s, OffResonance::Zero, false)
    }
}
