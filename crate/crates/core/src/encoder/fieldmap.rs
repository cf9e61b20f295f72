use crate::tensors::{RealTensor, Rng};

use super::EncoderError;

/// Sanity bound on any field map value (Hz).
pub const FIELD_LIMIT_HZ: f64 = 1000.0;
/// Synthetic maps are clamped to this range before augmentation (Hz).
pub const SYNTH_CLAMP_HZ: f64 = 350.0;
pub const ALPHA_RANGE: (f64, f64) = (0.0, 3.15);
pub const BETA_RANGE_HZ: (f64, f64) = (-200.0, 200.0);

const POLY_PEAK_HZ: f64 = 150.0;
const BUMP_PEAK_HZ: f64 = 100.0;

/// Per-pixel off-resonance in Hz, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FieldMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, EncoderError> {
        assert_eq!(data.len(), height * width, "field map length");
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() <= FIELD_LIMIT_HZ))
        {
            return Err(EncoderError::FieldOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn constant(height: usize, width: usize, hz: f64) -> Self {
        Self::new(height, width, vec![hz; height * width]).expect("constant within limits")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn rms(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }

    pub fn to_tensor(&self) -> RealTensor {
        RealTensor::from_vec(&[self.height, self.width], self.data.clone()).expect("finite map")
    }

    pub fn from_tensor(t: &RealTensor) -> Result<Self, EncoderError> {
        let (h, w) = match t.dims() {
            [h, w] => (*h, *w),
            _ => panic!("field map tensor must be 2D, got {:?}", t.dims()),
        };
        Self::new(h, w, t.data().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentationParams {
    pub alpha: f64,
    pub beta: f64,
}

impl AugmentationParams {
    pub const IDENTITY: AugmentationParams = AugmentationParams {
        alpha: 1.0,
        beta: 0.0,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self, EncoderError> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let ok = (ALPHA_RANGE.0..=ALPHA_RANGE.1).contains(&self.alpha)
            && (BETA_RANGE_HZ.0..=BETA_RANGE_HZ.1).contains(&self.beta);
        if ok {
            Ok(())
        } else {
            Err(EncoderError::InvalidAugmentation {
                alpha: self.alpha,
                beta: self.beta,
            })
        }
    }
}

/// `f'(x) = α·f(x) + β`.
pub fn augment_field_map(f: &FieldMap, p: AugmentationParams) -> Result<FieldMap, EncoderError> {
    p.validate()?;
    let data = f.data.iter().map(|&v| p.alpha * v + p.beta).collect();
    FieldMap::new(f.height, f.width, data)
}

/// Kind of synthetic map to draw.
#[derive(Debug, Clone, Copy)]
pub enum FieldMapStyle<'a> {
    /// Random second-order polynomial peaking at ±150 Hz.
    SmoothPoly,
    /// Polynomial plus Gaussian bumps centred on the given boundary pixels.
    BoundaryWeighted { boundary: &'a [bool] },
}

/// Evaluates `c0 + c1·u + c2·v + c3·u² + c4·u·v + c5·v²` on `u, v ∈ [−1, 1]`
/// (u along columns) and rescales the peak magnitude to 150 Hz.
pub fn smooth_poly_field(height: usize, width: usize, coeffs: &[f64; 6]) -> FieldMap {
    let coord = |i: usize, n: usize| {
        if n > 1 {
            2.0 * i as f64 / (n - 1) as f64 - 1.0
        } else {
            0.0
        }
    };
    let mut data = Vec::with_capacity(height * width);
    for r in 0..height {
        let v = coord(r, height);
        for c in 0..width {
            let u = coord(c, width);
            let [c0, c1, c2, c3, c4, c5] = *coeffs;
            data.push(c0 + c1 * u + c2 * v + c3 * u * u + c4 * u * v + c5 * v * v);
        }
    }
    let peak = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        data.iter_mut().for_each(|v| *v *= POLY_PEAK_HZ / peak);
    }
    FieldMap::new(height, width, data).expect("within limits")
}

pub fn make_synthetic_field_map(
    height: usize,
    width: usize,
    rng: &mut Rng,
    style: FieldMapStyle<'_>,
) -> FieldMap {
    let mut coeffs = [0.0; 6];
    coeffs.iter_mut().for_each(|c| *c = rng.range(-1.0, 1.0));
    let mut map = smooth_poly_field(height, width, &coeffs);
    if let FieldMapStyle::BoundaryWeighted { boundary } = style {
        assert_eq!(boundary.len(), height * width, "boundary mask size");
        let candidates: Vec<usize> = (0..boundary.len()).filter(|&i| boundary[i]).collect();
        if !candidates.is_empty() {
            let bumps = rng.int_range(3, 8);
            for _ in 0..bumps {
                let centre = candidates[rng.below(candidates.len())];
                let (cr, cc) = ((centre / width) as f64, (centre % width) as f64);
                let sigma = rng.range(2.0, 5.0);
                let amp = rng.range(-BUMP_PEAK_HZ, BUMP_PEAK_HZ);
                let denom = 2.0 * sigma * sigma;
                for r in 0..height {
                    for c in 0..width {
                        let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                        map.data[r * width + c] += amp * (-d2 / denom).exp();
                    }
                }
            }
        }
    }
    map.data
        .iter_mut()
        .for_each(|v| *v = v.clamp(-SYNTH_CLAMP_HZ, SYNTH_CLAMP_HZ));
    map
}
