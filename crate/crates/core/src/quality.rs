//! PSNR, SSIM and HFEN on magnitude images.
//!
//! Every metric first takes magnitudes and divides both images by `max|ref|`,
//! so the reference peaks at 1 and the metrics are invariant to a common
//! positive scale.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensors::ComplexImage;

/// Value reported when test equals reference.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const LOG_SIZE: usize = 15;
const LOG_SIGMA: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("reference image is all zero")]
    ZeroReference,
    #[error("image {0:?} smaller than the {1}×{1} window")]
    TooSmall((usize, usize), usize),
    #[error("reference has no high-frequency content; HFEN undefined")]
    FlatReference,
}

/// Normalised magnitude plane.
#[derive(Debug, Clone)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Magnitudes of `reference` and `test`, both divided by `max|reference|`.
pub fn normalized_pair(
    reference: &ComplexImage,
    test: &ComplexImage,
) -> Result<(Plane, Plane), MetricError> {
    let (rd, td) = (
        (reference.height(), reference.width()),
        (test.height(), test.width()),
    );
    if rd != td {
        return Err(MetricError::DimensionMismatch(rd, td));
    }
    let r = reference.magnitude();
    let peak = r.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let plane = |data: Vec<f64>| Plane {
        height: rd.0,
        width: rd.1,
        data: data.into_iter().map(|v| v / peak).collect(),
    };
    Ok((plane(r), plane(test.magnitude())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// Test equals reference; `db` holds [`PSNR_CAP_DB`].
    pub identical: bool,
}

pub fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    10.0 * (peak * peak / mse).log10()
}

pub fn psnr(reference: &ComplexImage, test: &ComplexImage) -> Result<Psnr, MetricError> {
    let (r, t) = normalized_pair(reference, test)?;
    let mse = r
        .data
        .iter()
        .zip(&t.data)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / r.data.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr {
            db: PSNR_CAP_DB,
            identical: true,
        });
    }
    Ok(Psnr {
        db: psnr_from_mse(1.0, mse).min(PSNR_CAP_DB),
        identical: false,
    })
}

fn gaussian_1d(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable 'valid' filtering of `data` by `g ⊗ g`.
fn filter_valid(data: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| g[i] * data[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows.
pub fn ssim(reference: &ComplexImage, test: &ComplexImage) -> Result<f64, MetricError> {
    let (r, t) = normalized_pair(reference, test)?;
    ssim_planes(&r, &t, 1.0)
}

/// SSIM of two planes with an explicit dynamic range.
pub fn ssim_planes(x: &Plane, y: &Plane, dynamic_range: f64) -> Result<f64, MetricError> {
    let (h, w) = (x.height, x.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall((h, w), SSIM_WINDOW));
    }
    let g = gaussian_1d(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter_valid(&x.data, h, w, &g);
    let mu_y = filter_valid(&y.data, h, w, &g);
    let xx = filter_valid(&prod(&x.data, &x.data), h, w, &g);
    let yy = filter_valid(&prod(&y.data, &y.data), h, w, &g);
    let xy = filter_valid(&prod(&x.data, &y.data), h, w, &g);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Zero-mean Laplacian-of-Gaussian kernel, row-major `size×size`.
pub fn log_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let s2 = sigma * sigma;
    let mut g = Vec::with_capacity(size * size);
    let mut r2s = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            g.push((-r2 / (2.0 * s2)).exp());
            r2s.push(r2);
        }
    }
    let gs: f64 = g.iter().sum();
    let mut k: Vec<f64> = g
        .iter()
        .zip(&r2s)
        .map(|(gv, r2)| gv / gs * (r2 - 2.0 * s2) / (s2 * s2))
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

/// 'Same'-size filtering with replicated edges.
fn filter_same_replicate(p: &Plane, kernel: &[f64], size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let (h, w) = (p.height as isize, p.width as isize);
    let mut out = vec![0.0; p.data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for i in 0..size as isize {
                let rr = (r + i - half).clamp(0, h - 1);
                for j in 0..size as isize {
                    let cc = (c + j - half).clamp(0, w - 1);
                    acc += kernel[(i * size as isize + j) as usize] * p.data[(rr * w + cc) as usize];
                }
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

/// `‖LoG(test) − LoG(ref)‖₂ / ‖LoG(ref)‖₂` with a 15×15, σ = 1.5 kernel.
pub fn hfen(reference: &ComplexImage, test: &ComplexImage) -> Result<f64, MetricError> {
    let (r, t) = normalized_pair(reference, test)?;
    let k = log_kernel(LOG_SIZE, LOG_SIGMA);
    let lr = filter_same_replicate(&r, &k, LOG_SIZE);
    let lt = filter_same_replicate(&t, &k, LOG_SIZE);
    let den = lr.iter().map(|v| v * v).sum::<f64>().sqrt();
    // A flat unit plane filters to rounding noise only.
    if den <= 1e-10 * (lr.len() as f64).sqrt() {
        return Err(MetricError::FlatReference);
    }
    let num = lr
        .iter()
        .zip(&lt)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Metrics of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameQuality {
    pub id: String,
    pub readout_s: f64,
    pub psnr_db: f64,
    pub identical: bool,
    pub ssim: f64,
    pub hfen: f64,
}

pub fn evaluate_frame(
    id: impl Into<String>,
    readout_s: f64,
    reference: &ComplexImage,
    test: &ComplexImage,
) -> Result<FrameQuality, MetricError> {
    let p = psnr(reference, test)?;
    Ok(FrameQuality {
        id: id.into(),
        readout_s,
        psnr_db: p.db,
        identical: p.identical,
        ssim: ssim(reference, test)?,
        hfen: hfen(reference, test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Per-frame metrics of one method plus aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub method: String,
    pub filters: Option<(usize, usize)>,
    pub params: Option<usize>,
    pub readout_s: Option<f64>,
    pub seconds_per_frame: Option<f64>,
    pub frames: Vec<FrameQuality>,
    pub psnr: Summary,
    pub ssim: Summary,
    pub hfen: Summary,
}

impl QualityReport {
    pub fn new(method: impl Into<String>, frames: Vec<FrameQuality>) -> Self {
        Self {
            method: method.into(),
            filters: None,
            params: None,
            readout_s: None,
            seconds_per_frame: None,
            psnr: Summary::of(frames.iter().map(|f| f.psnr_db)),
            ssim: Summary::of(frames.iter().map(|f| f.ssim)),
            hfen: Summary::of(frames.iter().map(|f| f.hfen)),
            frames,
        }
    }

    /// Reports restricted to each distinct readout length, in ascending order.
    pub fn by_readout(&self) -> Vec<QualityReport> {
        let mut readouts: Vec<f64> = self.frames.iter().map(|f| f.readout_s).collect();
        readouts.sort_by(f64::total_cmp);
        readouts.dedup();
        readouts
            .into_iter()
            .map(|ro| {
                let frames = self
                    .frames
                    .iter()
                    .filter(|f| f.readout_s == ro)
                    .cloned()
                    .collect();
                QualityReport {
                    readout_s: Some(ro),
                    filters: self.filters,
                    params: self.params,
                    seconds_per_frame: self.seconds_per_frame,
                    ..QualityReport::new(self.method.clone(), frames)
                }
            })
            .collect()
    }
}

/// Aligned text table: Architecture, (f1,f2), Params, PSNR, SSIM, HFEN(x100).
pub fn render_table(reports: &[QualityReport]) -> String {
    let mut out = format!(
        "{:<16} | {:>8} | {:>7} | {:>6} | {:>6} | {:>10}\n",
        "Architecture", "(f1,f2)", "Params", "PSNR", "SSIM", "HFEN(x100)"
    );
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for r in reports {
        let filters = r
            .filters
            .map_or("-".to_string(), |(a, b)| format!("({a},{b})"));
        let params = r
            .params
            .map_or("-".to_string(), |p| format!("{:.1}K", p as f64 / 1000.0));
        out.push_str(&format!(
            "{:<16} | {:>8} | {:>7} | {:>6.2} | {:>6.3} | {:>10.3}\n",
            r.method, filters, params, r.psnr.mean, r.ssim.mean, r.hfen.mean * 100.0
        ));
    }
    out
}
