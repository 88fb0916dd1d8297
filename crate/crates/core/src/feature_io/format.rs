use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PSRF";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

const FIXED_HEADER: usize = 4 + 2 + 1 + 1;

/// Dense row-major array of `f32` with 1 to 3 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl FeatureTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!("ndim must be 1..=3, got {}", shape.len())));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a `rows x cols` tensor from row vectors.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteValue(i)),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(DTYPE_F32);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedPayload {
                expected: FIXED_HEADER,
                found: bytes.len(),
            });
        }
        let found: [u8; 4] = bytes[..4].try_into().unwrap();
        if found != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found,
            });
        }
        if bytes.len() < FIXED_HEADER {
            return Err(Error::TruncatedPayload {
                expected: FIXED_HEADER,
                found: bytes.len(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if bytes[6] != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(bytes[6]));
        }
        let ndim = bytes[7] as usize;
        if !(1..=3).contains(&ndim) {
            return Err(Error::Shape(format!("ndim must be 1..=3, got {ndim}")));
        }
        let header = FIXED_HEADER + 4 * ndim;
        if bytes.len() < header {
            return Err(Error::TruncatedPayload {
                expected: header,
                found: bytes.len(),
            });
        }
        let shape: Vec<usize> = bytes[FIXED_HEADER..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))?;
        let expected = header + 4 * count;
        if bytes.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Shape(format!(
                "{} trailing bytes after payload",
                bytes.len() - expected
            )));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Self::new(shape, data)?;
        tensor.check_finite()?;
        Ok(tensor)
    }
}

/// Writes `tensor` in the PSRF layout: magic, u16 version, u8 dtype, u8 ndim,
/// `ndim` u32 dims, then the little-endian row-major payload.
pub fn write_feature_file(path: impl AsRef<Path>, tensor: &FeatureTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureTensor::from_bytes(&bytes)
}
