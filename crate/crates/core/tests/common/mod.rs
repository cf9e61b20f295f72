//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::TAU;

use num_complex::Complex64;
use spiral_agcnn::encoder::FieldMap;
use spiral_agcnn::nn::{loss, AgCnnModel, AttentionGate, Conv2d, DepthwiseSeparableConv, Init};
use spiral_agcnn::spiral::SpiralTrajectory;
use spiral_agcnn::tensors::{ComplexImage, RealTensor, Rng};

pub const H: f64 = 1e-6;

pub fn random_tensor(dims: &[usize], rng: &mut Rng) -> RealTensor {
    let n = dims.iter().product();
    RealTensor::from_vec(dims, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// `Σ r·y`, a random linear read-out whose gradient w.r.t. `y` is `r`.
pub fn project(y: &RealTensor, r: &RealTensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub fn rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .max(numeric.iter().map(|b| b * b).sum());
    if scale == 0.0 {
        0.0
    } else {
        (diff / scale).sqrt()
    }
}

/// Central differences of `f` with respect to every entry of `values`.
pub fn numeric_grad(values: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            values[i] = orig + H;
            let up = f(values);
            values[i] = orig - H;
            let down = f(values);
            values[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Named relative errors, analytic vs numeric.
pub type GradErrors = Vec<(String, f64)>;

pub fn conv_grad_errors(seed: u64) -> GradErrors {
    let mut rng = Rng::new(seed);
    let conv = Conv2d::init(3, 2, 3, Init::HeUniform, &mut rng);
    let x = random_tensor(&[7, 6, 2], &mut rng);
    let r = random_tensor(&[7, 6, 3], &mut rng);
    let (dx, g) = conv.backward(&x, &r, true).unwrap();
    let mut out = Vec::new();

    let mut w = conv.weight.clone();
    let num = numeric_grad(&mut w, |w| {
        let c = Conv2d { weight: w.to_vec(), ..conv.clone() };
        project(&c.forward(&x).unwrap(), &r)
    });
    out.push(("conv weight".into(), rel(&g.weight, &num)));

    let mut b = conv.bias.clone();
    let num = numeric_grad(&mut b, |b| {
        let c = Conv2d { bias: b.to_vec(), ..conv.clone() };
        project(&c.forward(&x).unwrap(), &r)
    });
    out.push(("conv bias".into(), rel(&g.bias, &num)));

    let mut xv = x.data().to_vec();
    let num = numeric_grad(&mut xv, |v| {
        let xt = RealTensor::from_vec(x.dims(), v.to_vec()).unwrap();
        project(&conv.forward(&xt).unwrap(), &r)
    });
    out.push(("conv input".into(), rel(dx.unwrap().data(), &num)));
    out
}

pub fn separable_grad_errors(seed: u64) -> GradErrors {
    let mut rng = Rng::new(seed);
    let sep = DepthwiseSeparableConv::init(5, 4, 3, Init::GlorotUniform, &mut rng);
    let x = random_tensor(&[6, 8, 4], &mut rng);
    let r = random_tensor(&[6, 8, 3], &mut rng);
    let (_, cache) = sep.forward(&x).unwrap();
    let (dx, g) = sep.backward(&x, &cache, &r).unwrap();
    let eval = |s: &DepthwiseSeparableConv, x: &RealTensor| project(&s.forward(x).unwrap().0, &r);
    let mut out = Vec::new();

    let mut v = sep.depthwise.weight.clone();
    let num = numeric_grad(&mut v, |v| {
        let mut s = sep.clone();
        s.depthwise.weight = v.to_vec();
        eval(&s, &x)
    });
    out.push(("separable depthwise weight".into(), rel(&g.depthwise.weight, &num)));

    let mut v = sep.depthwise.bias.clone();
    let num = numeric_grad(&mut v, |v| {
        let mut s = sep.clone();
        s.depthwise.bias = v.to_vec();
        eval(&s, &x)
    });
    out.push(("separable depthwise bias".into(), rel(&g.depthwise.bias, &num)));

    let mut v = sep.pointwise.weight.clone();
    let num = numeric_grad(&mut v, |v| {
        let mut s = sep.clone();
        s.pointwise.weight = v.to_vec();
        eval(&s, &x)
    });
    out.push(("separable pointwise weight".into(), rel(&g.pointwise.weight, &num)));

    let mut v = sep.pointwise.bias.clone();
    let num = numeric_grad(&mut v, |v| {
        let mut s = sep.clone();
        s.pointwise.bias = v.to_vec();
        eval(&s, &x)
    });
    out.push(("separable pointwise bias".into(), rel(&g.pointwise.bias, &num)));

    let mut v = x.data().to_vec();
    let num = numeric_grad(&mut v, |v| eval(&sep, &RealTensor::from_vec(x.dims(), v.to_vec()).unwrap()));
    out.push(("separable input".into(), rel(dx.data(), &num)));
    out
}

pub fn gate_grad_errors(filter: usize, seed: u64) -> GradErrors {
    let mut rng = Rng::new(seed);
    let gate = AttentionGate::init(4, filter, 2, &mut rng);
    let x = random_tensor(&[6, 6, 4], &mut rng);
    let r = random_tensor(&[6, 6, 4], &mut rng);
    let (_, cache) = gate.forward(&x).unwrap();
    let (dx, g) = gate.backward(&x, &cache, &r).unwrap();
    let eval = |gt: &AttentionGate, x: &RealTensor| project(&gt.forward(x).unwrap().0, &r);
    let mut out = Vec::new();
    let mut check = |name: &str, analytic: &[f64], get: fn(&mut AttentionGate) -> &mut Vec<f64>| {
        let mut probe = gate.clone();
        let mut v = get(&mut probe).clone();
        let num = numeric_grad(&mut v, |v| {
            let mut gt = gate.clone();
            *get(&mut gt) = v.to_vec();
            eval(&gt, &x)
        });
        out.push((format!("gate f={filter} {name}"), rel(analytic, &num)));
    };
    check("a.depthwise weight", &g.conv_a.depthwise.weight, |g| &mut g.conv_a.depthwise.weight);
    check("a.depthwise bias", &g.conv_a.depthwise.bias, |g| &mut g.conv_a.depthwise.bias);
    check("a.pointwise weight", &g.conv_a.pointwise.weight, |g| &mut g.conv_a.pointwise.weight);
    check("a.pointwise bias", &g.conv_a.pointwise.bias, |g| &mut g.conv_a.pointwise.bias);
    check("b.depthwise weight", &g.conv_b.depthwise.weight, |g| &mut g.conv_b.depthwise.weight);
    check("b.depthwise bias", &g.conv_b.depthwise.bias, |g| &mut g.conv_b.depthwise.bias);
    check("b.pointwise weight", &g.conv_b.pointwise.weight, |g| &mut g.conv_b.pointwise.weight);
    check("b.pointwise bias", &g.conv_b.pointwise.bias, |g| &mut g.conv_b.pointwise.bias);

    let mut v = x.data().to_vec();
    let num = numeric_grad(&mut v, |v| eval(&gate, &RealTensor::from_vec(x.dims(), v.to_vec()).unwrap()));
    out.push((format!("gate f={filter} input"), rel(dx.data(), &num)));
    out
}

/// Checks every `every`-th entry of each parameter tensor.
pub fn model_grad_errors(model: &AgCnnModel, x: &RealTensor, r: &RealTensor, every: usize) -> GradErrors {
    let cache = model.forward_train(x).unwrap();
    let grads = model.backward(&cache, r).unwrap();
    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let len = model.parameters()[t].1.len();
        let picked: Vec<usize> = (0..len).step_by(every.min(len.max(1))).collect();
        let mut numeric = Vec::new();
        for &i in &picked {
            let mut m = model.clone();
            let orig = m.parameters()[t].1[i];
            m.parameters_mut()[t][i] = orig + H;
            let up = project(&m.forward(x).unwrap(), r);
            m.parameters_mut()[t][i] = orig - H;
            let down = project(&m.forward(x).unwrap(), r);
            numeric.push((up - down) / (2.0 * H));
        }
        let analytic: Vec<f64> = picked.iter().map(|&i| grads.0[t][i]).collect();
        out.push((format!("{} {name}", model.config.label()), rel(&analytic, &numeric)));
    }
    out
}

pub fn loss_grad_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let pred = random_tensor(&[8, 7, 2], &mut rng);
    let target = random_tensor(&[8, 7, 2], &mut rng);
    let value = loss(&pred, &target).unwrap();
    let mut v = pred.data().to_vec();
    let num = numeric_grad(&mut v, |v| {
        loss(&RealTensor::from_vec(pred.dims(), v.to_vec()).unwrap(), &target)
            .unwrap()
            .total
    });
    rel(value.grad.data(), &num)
}

pub fn random_image(n: usize, rng: &mut Rng) -> ComplexImage {
    let data = (0..n * n)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    ComplexImage::from_vec(n, n, data).unwrap()
}

pub fn random_samples(len: usize, rng: &mut Rng) -> Vec<Complex64> {
    (0..len).map(|_| Complex64::new(rng.normal(), rng.normal())).collect()
}

pub fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Direct evaluation of the signal equation, one sample and pixel at a time.
pub fn brute_force(img: &ComplexImage, f: &FieldMap, traj: &SpiralTrajectory) -> Vec<Complex64> {
    let (h, w) = (img.height(), img.width());
    let fov = traj.fov_cm();
    (0..traj.len())
        .map(|m| {
            let kx = traj.kx()[m] * fov;
            let ky = traj.ky()[m] * fov;
            let t = traj.times()[m];
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..h {
                let y = (r as f64 + 0.5) / h as f64 - 0.5;
                for c in 0..w {
                    let x = (c as f64 + 0.5) / w as f64 - 0.5;
                    let phase = -TAU * (kx * x + ky * y + f.data()[r * w + c] * t);
                    acc += img.get(r, c) * Complex64::from_polar(1.0, phase);
                }
            }
            acc
        })
        .collect()
}

/// A reference and a noisy, rescaled copy.
pub fn metric_pair(seed: u64, h: usize, w: usize) -> (ComplexImage, ComplexImage) {
    let mut rng = Rng::new(seed);
    let noise = rng.range(0.01, 0.5);
    let gain = rng.range(0.5, 2.0);
    let mut r = Vec::new();
    let mut t = Vec::new();
    for _ in 0..h * w {
        let z = Complex64::new(rng.normal(), rng.normal());
        r.push(z);
        t.push(z * gain + Complex64::new(rng.normal(), rng.normal()) * noise);
    }
    (
        ComplexImage::from_vec(h, w, r).unwrap(),
        ComplexImage::from_vec(h, w, t).unwrap(),
    )
}

/// Magnitudes of both images divided by the reference peak.
pub fn magnitudes(r: &ComplexImage, t: &ComplexImage) -> (Vec<f64>, Vec<f64>) {
    let peak = r.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    (
        r.data().iter().map(|z| z.norm() / peak).collect(),
        t.data().iter().map(|z| z.norm() / peak).collect(),
    )
}

pub fn psnr_oracle(x: &[f64], y: &[f64]) -> f64 {
    let mut mse = 0.0;
    for i in 0..x.len() {
        mse += (x[i] - y[i]) * (x[i] - y[i]);
    }
    mse /= x.len() as f64;
    -10.0 * mse.log10()
}

/// Window-by-window SSIM with an explicit 2-D Gaussian weight table.
pub fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let k = 11;
    let sigma: f64 = 1.5;
    let mut g = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let di = i as f64 - 5.0;
            let dj = j as f64 - 5.0;
            g[i][j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += g[i][j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let p = (r + i) * w + c + j;
                    mx += g[i][j] / total * x[p];
                    my += g[i][j] / total * y[p];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let p = (r + i) * w + c + j;
                    let wt = g[i][j] / total;
                    vx += wt * (x[p] - mx) * (x[p] - mx);
                    vy += wt * (y[p] - my) * (y[p] - my);
                    cov += wt * (x[p] - mx) * (y[p] - my);
                }
            }
            sum += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    sum / count
}

fn log_filter(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = 15usize;
    let s2: f64 = 1.5 * 1.5;
    let half = 7i64;
    let mut gauss = vec![0.0; k * k];
    let mut gsum = 0.0;
    for i in 0..k {
        for j in 0..k {
            let r2 = ((i as i64 - half).pow(2) + (j as i64 - half).pow(2)) as f64;
            gauss[i * k + j] = (-r2 / (2.0 * s2)).exp();
            gsum += gauss[i * k + j];
        }
    }
    let mut kern = vec![0.0; k * k];
    let mut ksum = 0.0;
    for i in 0..k {
        for j in 0..k {
            let r2 = ((i as i64 - half).pow(2) + (j as i64 - half).pow(2)) as f64;
            kern[i * k + j] = gauss[i * k + j] / gsum * (r2 - 2.0 * s2) / (s2 * s2);
            ksum += kern[i * k + j];
        }
    }
    for v in kern.iter_mut() {
        *v -= ksum / (k * k) as f64;
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let mut acc = 0.0;
            for i in -half..=half {
                for j in -half..=half {
                    let rr = (r + i).clamp(0, h as i64 - 1) as usize;
                    let cc = (c + j).clamp(0, w as i64 - 1) as usize;
                    acc += kern[((i + half) as usize) * k + (j + half) as usize] * x[rr * w + cc];
                }
            }
            out[r as usize * w + c as usize] = acc;
        }
    }
    out
}

pub fn hfen_oracle(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let lx = log_filter(x, h, w);
    let ly = log_filter(y, h, w);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..lx.len() {
        num += (ly[i] - lx[i]).powi(2);
        den += lx[i].powi(2);
    }
    (num / den).sqrt()
}
