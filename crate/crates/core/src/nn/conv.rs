//! Stride-1 "same" convolutions on H×W×C tensors.
//!
//! Dense convolutions go through im2col and a GEMM; the column matrix has
//! one row per output pixel and `kh·kw·cin` columns ordered `(ky, kx, ci)`,
//! which is also the weight layout `[kh][kw][cin][cout]`.

use crate::tensors::{RealTensor, Rng};

use super::NnError;

/// `c[m×n] = a[m×k]·b[k×n] (+ c when accumulate)`; all row-major unless `*_t`
/// marks a transposed view of a row-major buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides above describe exactly the asserted buffer extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn check_hwc(x: &RealTensor, channels: usize) -> Result<(usize, usize), NnError> {
    let (h, w, c) = x.hwc().map_err(|_| NnError::Shape {
        expected: format!("H×W×{channels}"),
        got: x.dims().to_vec(),
    })?;
    if c != channels {
        return Err(NnError::Shape {
            expected: format!("H×W×{channels}"),
            got: x.dims().to_vec(),
        });
    }
    Ok((h, w))
}

pub(crate) fn uniform_init(rng: &mut Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.range(-bound, bound)).collect()
}

/// Weight initialisation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(±sqrt(6/fan_in))`
    HeUniform,
    /// `U(±sqrt(6/(fan_in + fan_out)))`
    GlorotUniform,
}

impl Init {
    pub(crate) fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::HeUniform => (6.0 / fan_in as f64).sqrt(),
            Init::GlorotUniform => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    /// `[kernel][kernel][cin][cout]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a [`Conv2d`], same layouts as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(kernel: usize, cin: usize, cout: usize) -> Self {
        assert!(kernel % 2 == 1, "odd kernel sizes only");
        Self {
            kernel,
            cin,
            cout,
            weight: vec![0.0; kernel * kernel * cin * cout],
            bias: vec![0.0; cout],
        }
    }

    pub fn init(kernel: usize, cin: usize, cout: usize, scheme: Init, rng: &mut Rng) -> Self {
        let mut c = Self::zeros(kernel, cin, cout);
        let fan_in = kernel * kernel * cin;
        let fan_out = kernel * kernel * cout;
        c.weight = uniform_init(rng, c.weight.len(), scheme.bound(fan_in, fan_out));
        c
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn columns(&self) -> usize {
        self.kernel * self.kernel * self.cin
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (k, cin) = (self.kernel, self.cin);
        let pad = (k / 2) as isize;
        let cols = self.columns();
        let mut out = vec![0.0; h * w * cols];
        for r in 0..h {
            for c in 0..w {
                let row = &mut out[(r * w + c) * cols..(r * w + c + 1) * cols];
                for ky in 0..k {
                    let rr = r as isize + ky as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let cc = c as isize + kx as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let src = (rr as usize * w + cc as usize) * cin;
                        let dst = (ky * k + kx) * cin;
                        row[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
        out
    }

    fn col2im(&self, col: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (k, cin) = (self.kernel, self.cin);
        let pad = (k / 2) as isize;
        let cols = self.columns();
        let mut dx = vec![0.0; h * w * cin];
        for r in 0..h {
            for c in 0..w {
                let row = &col[(r * w + c) * cols..(r * w + c + 1) * cols];
                for ky in 0..k {
                    let rr = r as isize + ky as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let cc = c as isize + kx as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let dst = (rr as usize * w + cc as usize) * cin;
                        let src = (ky * k + kx) * cin;
                        for (d, s) in dx[dst..dst + cin].iter_mut().zip(&row[src..src + cin]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &RealTensor) -> Result<RealTensor, NnError> {
        let (h, w) = check_hwc(x, self.cin)?;
        let p = h * w;
        let mut y = vec![0.0; p * self.cout];
        for row in y.chunks_exact_mut(self.cout) {
            row.copy_from_slice(&self.bias);
        }
        if self.kernel == 1 {
            gemm(p, self.cin, self.cout, x.data(), false, &self.weight, false, &mut y, true);
        } else {
            let col = self.im2col(x.data(), h, w);
            gemm(p, self.columns(), self.cout, &col, false, &self.weight, false, &mut y, true);
        }
        Ok(RealTensor::from_vec(&[h, w, self.cout], y).expect("shape"))
    }

    /// Returns `(dx, grads)`; `dx` is skipped when `need_dx` is false.
    pub fn backward(
        &self,
        x: &RealTensor,
        dy: &RealTensor,
        need_dx: bool,
    ) -> Result<(Option<RealTensor>, ConvGrad), NnError> {
        let (h, w) = check_hwc(x, self.cin)?;
        let (dh, dw) = check_hwc(dy, self.cout)?;
        if (dh, dw) != (h, w) {
            return Err(NnError::Shape {
                expected: format!("{h}×{w}×{}", self.cout),
                got: dy.dims().to_vec(),
            });
        }
        let p = h * w;
        let mut bias = vec![0.0; self.cout];
        for row in dy.data().chunks_exact(self.cout) {
            for (b, g) in bias.iter_mut().zip(row) {
                *b += g;
            }
        }
        let cols = self.columns();
        let mut weight = vec![0.0; cols * self.cout];
        let dx = if self.kernel == 1 {
            gemm(cols, p, self.cout, x.data(), true, dy.data(), false, &mut weight, false);
            need_dx.then(|| {
                let mut dx = vec![0.0; p * self.cin];
                gemm(p, self.cout, self.cin, dy.data(), false, &self.weight, true, &mut dx, false);
                dx
            })
        } else {
            let col = self.im2col(x.data(), h, w);
            gemm(cols, p, self.cout, &col, true, dy.data(), false, &mut weight, false);
            drop(col);
            need_dx.then(|| {
                let mut dcol = vec![0.0; p * cols];
                gemm(p, self.cout, cols, dy.data(), false, &self.weight, true, &mut dcol, false);
                self.col2im(&dcol, h, w)
            })
        };
        let dx = dx.map(|d| RealTensor::from_vec(&[h, w, self.cin], d).expect("shape"));
        Ok((dx, ConvGrad { weight, bias }))
    }
}

/// Per-channel spatial convolution, weights `[kernel][kernel][channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv {
    pub kernel: usize,
    pub channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DepthwiseConv {
    pub fn zeros(kernel: usize, channels: usize) -> Self {
        assert!(kernel % 2 == 1, "odd kernel sizes only");
        Self {
            kernel,
            channels,
            weight: vec![0.0; kernel * kernel * channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn init(kernel: usize, channels: usize, scheme: Init, rng: &mut Rng) -> Self {
        let mut d = Self::zeros(kernel, channels);
        let fan = kernel * kernel;
        d.weight = uniform_init(rng, d.weight.len(), scheme.bound(fan, fan));
        d
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every in-bounds tap.
    fn taps(&self, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        for r in 0..h {
            for c in 0..w {
                for ky in 0..k {
                    let rr = r as isize + ky as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let cc = c as isize + kx as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        f(r * w + c, rr as usize * w + cc as usize, ky * k + kx);
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &RealTensor) -> Result<RealTensor, NnError> {
        let (h, w) = check_hwc(x, self.channels)?;
        let ch = self.channels;
        let xd = x.data();
        let mut y = vec![0.0; h * w * ch];
        for row in y.chunks_exact_mut(ch) {
            row.copy_from_slice(&self.bias);
        }
        self.taps(h, w, |o, i, t| {
            let out = &mut y[o * ch..(o + 1) * ch];
            let inp = &xd[i * ch..(i + 1) * ch];
            let wt = &self.weight[t * ch..(t + 1) * ch];
            for ((o, a), b) in out.iter_mut().zip(inp).zip(wt) {
                *o += a * b;
            }
        });
        Ok(RealTensor::from_vec(&[h, w, ch], y).expect("shape"))
    }

    pub fn backward(
        &self,
        x: &RealTensor,
        dy: &RealTensor,
        need_dx: bool,
    ) -> Result<(Option<RealTensor>, ConvGrad), NnError> {
        let (h, w) = check_hwc(x, self.channels)?;
        if dy.dims() != x.dims() {
            return Err(NnError::Shape {
                expected: format!("{:?}", x.dims()),
                got: dy.dims().to_vec(),
            });
        }
        let ch = self.channels;
        let (xd, g) = (x.data(), dy.data());
        let mut bias = vec![0.0; ch];
        for row in g.chunks_exact(ch) {
            for (b, v) in bias.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut weight = vec![0.0; self.weight.len()];
        let mut dx = if need_dx { vec![0.0; xd.len()] } else { Vec::new() };
        self.taps(h, w, |o, i, t| {
            let go = &g[o * ch..(o + 1) * ch];
            let wg = &mut weight[t * ch..(t + 1) * ch];
            for ((wg, a), b) in wg.iter_mut().zip(&xd[i * ch..(i + 1) * ch]).zip(go) {
                *wg += a * b;
            }
            if need_dx {
                let wt = &self.weight[t * ch..(t + 1) * ch];
                for ((d, a), b) in dx[i * ch..(i + 1) * ch].iter_mut().zip(wt).zip(go) {
                    *d += a * b;
                }
            }
        });
        let dx = need_dx.then(|| RealTensor::from_vec(&[h, w, ch], dx).expect("shape"));
        Ok((dx, ConvGrad { weight, bias }))
    }
}
