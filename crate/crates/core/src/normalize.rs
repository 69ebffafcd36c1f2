//! Normalization of the order >= 3 moment channels.
//!
//! Three strategies are supported, each without learnable gain or bias:
//!
//! * layer norm: `y = (x - mean) / sqrt(var + eps)` over one group,
//! * max norm: `y = x / (max |x| + eps)`,
//! * batch norm: layer norm over one channel across the batch in training
//!   mode, or a fixed affine map from the running statistics in eval mode.
//!
//! The max-norm backward pass is straight-through on the divisor: the gradient
//! flows through the numerator only, as if `max |x|` were a constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    None,
    Layer,
    Max,
    Batch,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "layer" => Ok(Self::Layer),
            "max" => Ok(Self::Max),
            "batch" => Ok(Self::Batch),
            other => Err(Error::Spec(format!("unknown normalization {other:?} (expected none|layer|max|batch)"))),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Layer => "layer",
            Self::Max => "max",
            Self::Batch => "batch",
        })
    }
}

/// Grouping used by layer and max norm. Batch norm always groups one output
/// channel across the batch and spatial positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormAxis {
    /// One group per sample and moment order: all channels of that order at
    /// every spatial position.
    #[default]
    PerOrder,
    /// One group per sample covering every order >= 3 channel.
    PerSample,
    /// One group per sample, order and spatial position, across channels.
    PerLocation,
}

impl std::str::FromStr for NormAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-order" => Ok(Self::PerOrder),
            "per-sample" => Ok(Self::PerSample),
            "per-location" => Ok(Self::PerLocation),
            other => Err(Error::Spec(format!(
                "unknown norm axis {other:?} (expected per-order|per-sample|per-location)"
            ))),
        }
    }
}

/// Values normalized together.
#[derive(Debug, Clone, Copy)]
pub struct NormGroup<'a> {
    values: &'a [f64],
    eps: f64,
}

impl<'a> NormGroup<'a> {
    pub fn new(values: &'a [f64], eps: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("normalization group"));
        }
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Spec(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { values, eps })
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Population mean and variance.
    pub fn stats(&self) -> (f64, f64) {
        let inv = 1.0 / self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() * inv;
        let var = self.values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() * inv;
        (mean, var)
    }

    /// Divisor of max norm, `max |x| + eps`.
    pub fn max_divisor(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, x| m.max(x.abs())) + self.eps
    }
}

pub fn layer_norm(g: &NormGroup) -> Vec<f64> {
    let (mean, var) = g.stats();
    let inv_std = 1.0 / (var + g.eps).sqrt();
    g.values.iter().map(|x| (x - mean) * inv_std).collect()
}

pub fn max_norm(g: &NormGroup) -> Vec<f64> {
    scale_by(g.values, g.max_divisor())
}

pub(crate) fn scale_by(values: &[f64], divisor: f64) -> Vec<f64> {
    let inv = 1.0 / divisor;
    values.iter().map(|x| x * inv).collect()
}

/// Layer-norm vector-Jacobian product:
/// `(u - mean(u) - y * mean(u * y)) / sqrt(var + eps)`.
pub fn layer_norm_backward(g: &NormGroup, upstream: &[f64]) -> Result<Vec<f64>> {
    check_len(g.values.len(), upstream.len())?;
    let (mean, var) = g.stats();
    let inv_std = 1.0 / (var + g.eps).sqrt();
    let inv_n = 1.0 / g.values.len() as f64;
    let y: Vec<f64> = g.values.iter().map(|x| (x - mean) * inv_std).collect();
    let mean_u = upstream.iter().sum::<f64>() * inv_n;
    let mean_uy = upstream.iter().zip(&y).map(|(u, y)| u * y).sum::<f64>() * inv_n;
    Ok(upstream
        .iter()
        .zip(&y)
        .map(|(u, y)| (u - mean_u - y * mean_uy) * inv_std)
        .collect())
}

/// Straight-through max-norm backward: `u / (max |x| + eps)`.
pub fn max_norm_backward(g: &NormGroup, upstream: &[f64]) -> Result<Vec<f64>> {
    check_len(g.values.len(), upstream.len())?;
    Ok(scale_by(upstream, g.max_divisor()))
}

/// Backward pass of the training-mode normalization of kind `kind` over `g`.
/// Training-mode batch norm over one channel group is the layer-norm map.
pub fn norm_backward(kind: NormKind, g: &NormGroup, upstream: &[f64]) -> Result<Vec<f64>> {
    match kind {
        NormKind::None => {
            check_len(g.values.len(), upstream.len())?;
            Ok(upstream.to_vec())
        }
        NormKind::Layer | NormKind::Batch => layer_norm_backward(g, upstream),
        NormKind::Max => max_norm_backward(g, upstream),
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::shape(&[found], format!("upstream gradient must have {expected} elements")))
    }
}

/// Running statistics of a batch-norm layer, one entry per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BATCH_NORM_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// Eval-mode map of channel `c`: `(x - running_mean) / sqrt(running_var + eps)`.
    pub fn eval_affine(&self, c: usize, eps: f64) -> (f64, f64) {
        (self.running_mean[c], 1.0 / (self.running_var[c] + eps).sqrt())
    }

    /// Blends batch statistics into the running state. The running variance
    /// uses the unbiased batch variance.
    pub fn update(&mut self, c: usize, mean: f64, var: f64, count: usize) {
        let unbiased = if count > 1 { var * count as f64 / (count as f64 - 1.0) } else { var };
        let m = self.momentum;
        self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * mean;
        self.running_var[c] = (1.0 - m) * self.running_var[c] + m * unbiased;
    }
}

/// Batch normalization of per-channel groups, each holding one channel's
/// values across the batch and spatial positions. In training mode the batch
/// statistics normalize the group and are blended into `state`.
pub fn batch_norm(
    channels: &[NormGroup],
    batch: usize,
    training: bool,
    state: &mut BatchNormState,
) -> Result<Vec<Vec<f64>>> {
    if channels.len() != state.channels() {
        return Err(Error::shape(
            &[channels.len()],
            format!("batch norm state tracks {} channels", state.channels()),
        ));
    }
    if training && batch < 2 {
        return Err(Error::BatchTooSmall(batch));
    }
    Ok(channels
        .iter()
        .enumerate()
        .map(|(c, g)| {
            if training {
                let (mean, var) = g.stats();
                state.update(c, mean, var, g.values.len());
                layer_norm(g)
            } else {
                let (mean, inv_std) = state.eval_affine(c, g.eps);
                g.values.iter().map(|x| (x - mean) * inv_std).collect()
            }
        })
        .collect())
}
