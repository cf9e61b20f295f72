//! Krylov solver for the normal equations `AᴴA x = Aᴴ s`.
//!
//! Uses the conjugate-residual recurrence of the conjugate-gradient family:
//! same cost per iteration (one operator application), but the
//! normal-equation residual `‖Aᴴs − AᴴA x_k‖` is minimised over the Krylov
//! space at every step and therefore never increases.

use num_complex::Complex64;

use crate::tensors::ComplexImage;

use super::EncoderError;

/// Hermitian positive semi-definite operator acting on pixel vectors.
pub trait NormalOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[Complex64]) -> Vec<Complex64>;
}

/// Result of [`solve_normal`].
#[derive(Debug, Clone)]
pub struct KrylovSolution {
    pub x: Vec<Complex64>,
    /// Normal-equation residual norms, starting with the initial one.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub image: ComplexImage,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn solve_normal(
    op: &dyn NormalOperator,
    rhs: &[Complex64],
    iters: usize,
    tol: f64,
) -> Result<KrylovSolution, EncoderError> {
    if iters == 0 {
        return Err(EncoderError::ZeroIterations);
    }
    assert_eq!(rhs.len(), op.dim(), "right-hand side length");
    let n = rhs.len();
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut r = rhs.to_vec();
    let initial = norm(&r);
    let mut residuals = vec![initial];
    if initial == 0.0 {
        return Ok(KrylovSolution {
            x,
            residuals,
            iterations: 0,
        });
    }
    let mut ar = op.apply(&r);
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut rho = dot(&r, &ar).re;
    let mut done = 0;
    for it in 1..=iters {
        let denom = ap.iter().map(|z| z.norm_sqr()).sum::<f64>();
        if denom == 0.0 || rho == 0.0 {
            break;
        }
        let alpha = rho / denom;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        done = it;
        let res = norm(&r);
        residuals.push(res);
        if !res.is_finite() || res > 10.0 * initial {
            return Err(EncoderError::Diverged {
                iteration: it,
                residual: res,
                initial,
            });
        }
        if res / initial < tol || it == iters {
            break;
        }
        ar = op.apply(&r);
        let rho_next = dot(&r, &ar).re;
        let beta = rho_next / rho;
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
            ap[i] = ar[i] + ap[i] * beta;
        }
    }
    Ok(KrylovSolution {
        x,
        residuals,
        iterations: done,
    })
}
