//! Deterministic input patterns.
//!
//! `uniform-noise` draws from stream 0 of the seed (xoshiro256++, see
//! [`smp_core::rng`]).

use std::fmt;
use std::str::FromStr;

use smp_core::{rng, Tensor};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// `a` where `(h + w)` is even, `b` elsewhere, in every plane.
    Checkerboard,
    Solid,
    /// Flat index `j` holds `j`.
    Ramp,
    /// Uniform in `[a, b)`.
    UniformNoise,
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Pattern::Checkerboard),
            "solid" => Ok(Pattern::Solid),
            "ramp" => Ok(Pattern::Ramp),
            "uniform-noise" => Ok(Pattern::UniformNoise),
            _ => Err(Error::Config(format!(
                "unknown pattern {s:?} (expected checkerboard, solid, ramp or uniform-noise)"
            ))),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Checkerboard => "checkerboard",
            Pattern::Solid => "solid",
            Pattern::Ramp => "ramp",
            Pattern::UniformNoise => "uniform-noise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternParams {
    pub a: f64,
    pub b: f64,
    pub seed: Option<u64>,
}

impl Default for PatternParams {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0, seed: None }
    }
}

pub fn generate(pattern: Pattern, shape: &[usize], params: &PatternParams) -> Result<Tensor> {
    let dims = smp_core::tensor::dims4_of(shape)?;
    let (h, w) = (dims[2], dims[3]);
    let t = match pattern {
        Pattern::Checkerboard => Tensor::from_fn(shape.to_vec(), |j| {
            let (y, x) = ((j / w) % h, j % w);
            if (y + x) % 2 == 0 { params.a } else { params.b }
        })?,
        Pattern::Solid => Tensor::full(shape.to_vec(), params.a)?,
        Pattern::Ramp => Tensor::from_fn(shape.to_vec(), |j| j as f64)?,
        Pattern::UniformNoise => {
            let seed = params
                .seed
                .ok_or_else(|| Error::Config("uniform-noise requires a seed".into()))?;
            if params.a.is_nan() || params.b.is_nan() || params.a >= params.b {
                return Err(Error::Config(format!("uniform-noise needs a < b, got [{}, {})", params.a, params.b)));
            }
            let mut r = rng::stream(seed, 0);
            Tensor::from_fn(shape.to_vec(), |_| rng::uniform(&mut r, params.a, params.b))?
        }
    };
    Ok(t)
}
