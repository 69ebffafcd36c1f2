//! Dense row-major `f64` tensors and the on-disk tensor file format.
//!
//! A tensor file is a single line of compact JSON followed by the raw payload:
//!
//! ```text
//! {"dtype":"f64","shape":[2,3]}\n<48 bytes: six little-endian f64 values>
//! ```
//!
//! The header is always written in the canonical compact form above, so a
//! write of a read tensor is byte-identical to the original file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DTYPE: &str = "f64";

/// Dense tensor of 1 to 4 dimensions, interpreted as `[N,]C,H,W` with
/// missing leading dimensions equal to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(shape, "rank must be between 1 and 4"));
    }
    if shape.contains(&0) {
        return Err(Error::shape(shape, "all extents must be >= 1"));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(shape, "element count overflows"))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::shape(
                &shape,
                format!("shape holds {len} elements but data has {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: (0..len).map(f).collect(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shape padded on the left with ones to `(N, C, H, W)`.
    pub fn dims4(&self) -> [usize; 4] {
        let mut dims = [1usize; 4];
        let offset = 4 - self.shape.len();
        dims[offset..].copy_from_slice(&self.shape);
        dims
    }

    /// Flat row-major offset of `(n, c, h, w)` under [`Tensor::dims4`].
    pub fn offset4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.dims4();
        ((n * cs + c) * hs + h) * ws + w
    }

    pub fn get4(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset4(n, c, h, w)]
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Sum of elementwise products. Shapes must hold the same element count.
    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.len(), other.len(), "dot of mismatched tensors");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// True iff any element is NaN or infinite.
    pub fn has_nonfinite(&self) -> bool {
        has_nonfinite(self)
    }

    /// Encodes the tensor in the tensor file format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&Header {
            dtype: DTYPE.to_string(),
            shape: self.shape.clone(),
        })
        .expect("header serialization cannot fail");
        let mut out = Vec::with_capacity(header.len() + 1 + 8 * self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a tensor file image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Header("missing newline after header".into()))?;
        let text = std::str::from_utf8(&bytes[..newline])
            .map_err(|e| Error::Header(format!("header is not UTF-8: {e}")))?;
        let header: Header =
            serde_json::from_str(text).map_err(|e| Error::Header(e.to_string()))?;
        if header.dtype != DTYPE {
            return Err(Error::Dtype(header.dtype));
        }
        let len = check_shape(&header.shape)?;
        let payload = &bytes[newline + 1..];
        let expected = len
            .checked_mul(8)
            .ok_or_else(|| Error::shape(&header.shape, "byte size overflows"))?;
        if payload.len() != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            shape: header.shape,
            data,
        })
    }
}

/// Validates `shape` and pads it on the left with ones to `(N, C, H, W)`.
pub fn dims4_of(shape: &[usize]) -> Result<[usize; 4]> {
    check_shape(shape)?;
    let mut dims = [1usize; 4];
    dims[4 - shape.len()..].copy_from_slice(shape);
    Ok(dims)
}

pub fn has_nonfinite(t: &Tensor) -> bool {
    t.data.iter().any(|v| !v.is_finite())
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?)
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&t.to_bytes())?;
    file.flush()?;
    Ok(())
}
