//! Dense real and complex arrays, the seeded generator, and the SPDB container.
//!
//! Everything is row-major. Feature tensors are channel-last (H×W×C).

mod rng;
mod spdb;

pub use rng::{derive_seed, Rng};
pub use spdb::{load_tensor, read_tensor, save_tensor, write_tensor, FormatError, StoredTensor};

use num_complex::Complex64;
use thiserror::Error;

/// Largest supported tensor rank.
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("rank {0} outside 1..={MAX_DIMS}")]
    BadRank(usize),
    #[error("extents {dims:?} hold {expected} values but {got} were given")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("expected shape {expected}, got {got:?}")]
    Unexpected { expected: String, got: Vec<usize> },
}

fn check_dims(dims: &[usize], len: usize) -> Result<(), ShapeError> {
    if dims.is_empty() || dims.len() > MAX_DIMS {
        return Err(ShapeError::BadRank(dims.len()));
    }
    let expected: usize = dims.iter().product();
    if expected != len {
        return Err(ShapeError::LengthMismatch {
            dims: dims.to_vec(),
            expected,
            got: len,
        });
    }
    Ok(())
}

/// Real tensor of rank 1 to 4 in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(dims: &[usize]) -> Self {
        check_dims(dims, dims.iter().product()).expect("valid rank");
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self, ShapeError> {
        check_dims(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(ShapeError::NonFinite(i));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(height, width, channels)` of a rank-3 feature tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize), ShapeError> {
        match self.dims[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(ShapeError::Unexpected {
                expected: "H×W×C".into(),
                got: self.dims.clone(),
            }),
        }
    }

    pub fn same_shape(&self, other: &RealTensor) -> bool {
        self.dims == other.dims
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Complex tensor, used for k-space sample vectors and general storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

impl ComplexTensor {
    pub fn from_vec(dims: &[usize], data: Vec<Complex64>) -> Result<Self, ShapeError> {
        check_dims(dims, data.len())?;
        if let Some(i) = data.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(ShapeError::NonFinite(i));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }
}

/// 2D complex image, row-major (`data[row * width + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self, ShapeError> {
        let t = ComplexTensor::from_vec(&[height, width], data)?;
        Ok(Self {
            height,
            width,
            data: t.into_data(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Normalised RMS error of `self` against `reference`.
    pub fn nrmse(&self, reference: &ComplexImage) -> f64 {
        let num: f64 = self
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        (num / reference.data.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn to_tensor(&self) -> ComplexTensor {
        ComplexTensor {
            dims: vec![self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: ComplexTensor) -> Result<Self, ShapeError> {
        match t.dims[..] {
            [h, w] => Ok(Self {
                height: h,
                width: w,
                data: t.data,
            }),
            _ => Err(ShapeError::Unexpected {
                expected: "H×W".into(),
                got: t.dims,
            }),
        }
    }
}

/// Splits a complex image into an H×W×2 tensor: channel 0 real, channel 1 imaginary.
pub fn complex_to_channels(img: &ComplexImage) -> RealTensor {
    let mut data = Vec::with_capacity(img.len() * 2);
    for z in img.data() {
        data.push(z.re);
        data.push(z.im);
    }
    RealTensor {
        dims: vec![img.height, img.width, 2],
        data,
    }
}

pub fn channels_to_complex(t: &RealTensor) -> Result<ComplexImage, ShapeError> {
    let (h, w, c) = t.hwc()?;
    if c != 2 {
        return Err(ShapeError::Unexpected {
            expected: "H×W×2".into(),
            got: t.dims.clone(),
        });
    }
    let data = t
        .data
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    Ok(ComplexImage {
        height: h,
        width: w,
        data,
    })
}
