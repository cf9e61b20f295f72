//! SPDB array container.
//!
//! Layout (all little-endian):
//!
//! | bytes | content                                              |
//! |-------|------------------------------------------------------|
//! | 0..4  | magic `SPDB`                                         |
//! | 4     | version, always 1                                    |
//! | 5     | dtype: 0 = real binary32, 1 = complex binary32 pairs |
//! | 6     | ndim, 1..=4                                          |
//! | 7     | reserved, 0                                          |
//! | 8..   | ndim × u32 extents, then the row-major payload       |

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use super::{ComplexTensor, RealTensor, ShapeError, MAX_DIMS};

const MAGIC: &[u8; 4] = b"SPDB";
const VERSION: u8 = 1;
const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("ndim {0} outside 1..=4")]
    BadRank(u8),
    #[error("nonzero reserved byte {0}")]
    Reserved(u8),
    #[error("extents {0:?} overflow the addressable size")]
    ExtentOverflow(Vec<u32>),
    #[error("truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("value does not fit binary32 at flat index {0}")]
    NotRepresentable(usize),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    Real(RealTensor),
    Complex(ComplexTensor),
}

impl StoredTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            StoredTensor::Real(t) => t.dims(),
            StoredTensor::Complex(t) => t.dims(),
        }
    }

    pub fn into_real(self) -> Result<RealTensor, ShapeError> {
        match self {
            StoredTensor::Real(t) => Ok(t),
            StoredTensor::Complex(t) => Err(ShapeError::Unexpected {
                expected: "real tensor".into(),
                got: t.dims().to_vec(),
            }),
        }
    }

    pub fn into_complex(self) -> Result<ComplexTensor, ShapeError> {
        match self {
            StoredTensor::Complex(t) => Ok(t),
            StoredTensor::Real(t) => Err(ShapeError::Unexpected {
                expected: "complex tensor".into(),
                got: t.dims().to_vec(),
            }),
        }
    }
}

impl From<RealTensor> for StoredTensor {
    fn from(t: RealTensor) -> Self {
        StoredTensor::Real(t)
    }
}

impl From<ComplexTensor> for StoredTensor {
    fn from(t: ComplexTensor) -> Self {
        StoredTensor::Complex(t)
    }
}

fn to_f32(v: f64, index: usize) -> Result<f32, FormatError> {
    let x = v as f32;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(FormatError::NotRepresentable(index))
    }
}

pub fn write_tensor<W: Write>(mut w: W, tensor: &StoredTensor) -> Result<(), FormatError> {
    let dims = tensor.dims();
    let dtype = match tensor {
        StoredTensor::Real(_) => DTYPE_REAL,
        StoredTensor::Complex(_) => DTYPE_COMPLEX,
    };
    let mut buf = Vec::with_capacity(8 + 4 * dims.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[VERSION, dtype, dims.len() as u8, 0]);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| {
            FormatError::ExtentOverflow(dims.iter().map(|&x| x as u32).collect())
        })?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        StoredTensor::Real(t) => {
            buf.reserve(4 * t.len());
            for (i, &v) in t.data().iter().enumerate() {
                buf.extend_from_slice(&to_f32(v, i)?.to_le_bytes());
            }
        }
        StoredTensor::Complex(t) => {
            buf.reserve(8 * t.data().len());
            for (i, z) in t.data().iter().enumerate() {
                buf.extend_from_slice(&to_f32(z.re, i)?.to_le_bytes());
                buf.extend_from_slice(&to_f32(z.im, i)?.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<StoredTensor, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<StoredTensor, FormatError> {
    let need = |expected: usize| {
        if bytes.len() < expected {
            Err(FormatError::Truncated {
                expected,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(8)?;
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    let dtype = bytes[5];
    if dtype != DTYPE_REAL && dtype != DTYPE_COMPLEX {
        return Err(FormatError::UnknownDtype(dtype));
    }
    let ndim = bytes[6];
    if ndim == 0 || ndim as usize > MAX_DIMS {
        return Err(FormatError::BadRank(ndim));
    }
    if bytes[7] != 0 {
        return Err(FormatError::Reserved(bytes[7]));
    }
    let header = 8 + 4 * ndim as usize;
    need(header)?;
    let extents: Vec<u32> = bytes[8..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let scalar = if dtype == DTYPE_REAL { 4usize } else { 8 };
    let payload = extents
        .iter()
        .try_fold(scalar, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|p| p.checked_add(header))
        .ok_or_else(|| FormatError::ExtentOverflow(extents.clone()))?;
    need(payload)?;
    if bytes.len() > payload {
        return Err(FormatError::TrailingBytes(bytes.len() - payload));
    }
    let dims: Vec<usize> = extents.iter().map(|&d| d as usize).collect();
    let floats = bytes[header..payload]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    Ok(if dtype == DTYPE_REAL {
        StoredTensor::Real(RealTensor::from_vec(&dims, floats.collect())?)
    } else {
        let flat: Vec<f64> = floats.collect();
        let data = flat
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        StoredTensor::Complex(ComplexTensor::from_vec(&dims, data)?)
    })
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &StoredTensor) -> Result<(), FormatError> {
    let mut out = Vec::new();
    write_tensor(&mut out, tensor)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<StoredTensor, FormatError> {
    decode(&fs::read(path)?)
}
