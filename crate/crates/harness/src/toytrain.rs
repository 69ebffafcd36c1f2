//! Training-stability experiment on a synthetic regression task.
//!
//! Each step draws a fresh batch of uniform features `x` in `[0, input_scale)`
//! with shape `(batch, C, H, W)`. The target of a sample is a fixed random
//! linear functional of the true global moments of its channels,
//!
//! ```text
//! y = sum_{i=1..4, c} beta[i][c] * M_i(x_c) / input_scale^i + 0.01 * noise
//! ```
//!
//! so the moments are sufficient statistics by construction. The model is a
//! per-channel affine map `f = a_c * x + b_c`, global SMP(n) pooling with the
//! configured normalization, and a mean head `yhat = (1/D) sum_k w_k z_k + w0`
//! over the `D = n*C` pooled features. Loss is the batch mean squared error,
//! optimized by plain gradient descent on `a, b, w, w0`.
//!
//! Streams of the seed: 0 draws `beta`, 1 the features, 2 the target noise.

use serde::{Deserialize, Serialize, Serializer};
use smp_core::grad::Operator;
use smp_core::{central_moments, rng, Exec, MomentSpec, NormKind, PoolSpec, Smp, Tensor};

use crate::{Error, Result};

const TARGET_ORDERS: usize = 4;
const TARGET_NOISE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    pub n: usize,
    pub norm: NormKind,
    pub batch: usize,
    pub feature_shape: [usize; 3],
    pub input_scale: f64,
    /// Opt-in for `n >= 3` without normalization.
    pub unsafe_no_norm: bool,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            steps: 500,
            lr: 0.05,
            n: 4,
            norm: NormKind::Layer,
            batch: 8,
            feature_shape: [4, 16, 16],
            input_scale: 10.0,
            unsafe_no_norm: false,
        }
    }
}

/// Loss value serialized as a JSON number when finite and as `"NaN"`,
/// `"Infinity"` or `"-Infinity"` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss(pub f64);

impl Serialize for Loss {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if v > 0.0 {
            s.serialize_str("Infinity")
        } else {
            s.serialize_str("-Infinity")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyTrainReport {
    pub step_of_first_nonfinite: Option<usize>,
    pub final_loss: Loss,
    /// Loss of every step run, measured before that step's update. Training
    /// stops at the first non-finite loss.
    pub loss_curve: Vec<Loss>,
}

impl ToyTrainConfig {
    fn spec(&self) -> Result<MomentSpec> {
        let spec = if self.unsafe_no_norm && self.norm == NormKind::None {
            MomentSpec::unnormalized(self.n)?
        } else {
            MomentSpec::new(self.n, self.norm)?
        };
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config(format!("input_scale must be positive, got {}", self.input_scale)));
        }
        if self.batch == 0 || self.feature_shape.contains(&0) {
            return Err(Error::Config("batch and feature_shape extents must be >= 1".into()));
        }
        if self.norm == NormKind::Batch && self.batch < 2 {
            return Err(smp_core::Error::BatchTooSmall(self.batch).into());
        }
        Ok(())
    }
}

struct Model {
    a: Vec<f64>,
    b: Vec<f64>,
    w: Vec<f64>,
    w0: f64,
}

pub fn toytrain(cfg: &ToyTrainConfig, exec: Exec) -> Result<ToyTrainReport> {
    cfg.validate()?;
    let [c, h, w] = cfg.feature_shape;
    let smp = Smp::new(PoolSpec::global(h, w), cfg.spec()?).with_exec(exec);
    let op = smp_core::grad::SmpOperator::new(smp);
    let plane = h * w;
    let d = cfg.n * c;
    let s = cfg.input_scale;

    let mut beta_rng = rng::stream(cfg.seed, 0);
    let beta = rng::uniform_vec(&mut beta_rng, TARGET_ORDERS * c, -1.0, 1.0);
    let mut feature_rng = rng::stream(cfg.seed, 1);
    let mut noise_rng = rng::stream(cfg.seed, 2);

    let mut m = Model {
        a: vec![1.0; c],
        b: vec![0.0; c],
        w: vec![0.0; d],
        w0: 0.0,
    };
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut first_nonfinite = None;

    for step in 0..cfg.steps {
        let x = Tensor::from_fn(vec![cfg.batch, c, h, w], |_| rng::uniform(&mut feature_rng, 0.0, s))?;
        let targets: Vec<f64> = x
            .data()
            .chunks_exact(c * plane)
            .map(|sample| -> Result<f64> {
                let mut y = TARGET_NOISE * rng::uniform(&mut noise_rng, -1.0, 1.0);
                for (ci, values) in sample.chunks_exact(plane).enumerate() {
                    let mv = central_moments(values, TARGET_ORDERS)?;
                    for i in 1..=TARGET_ORDERS {
                        y += beta[(i - 1) * c + ci] * mv.get(i) / s.powi(i as i32);
                    }
                }
                Ok(y)
            })
            .collect::<Result<_>>()?;

        let f = Tensor::from_fn(x.shape().to_vec(), |j| {
            let ci = (j / plane) % c;
            m.a[ci] * x.data()[j] + m.b[ci]
        })?;
        let z = op.forward(&f)?;
        let inv_d = 1.0 / d as f64;
        let preds: Vec<f64> = z
            .data()
            .chunks_exact(d)
            .map(|zs| zs.iter().zip(&m.w).map(|(z, w)| z * w).sum::<f64>() * inv_d + m.w0)
            .collect();
        let loss = preds.iter().zip(&targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / cfg.batch as f64;
        curve.push(Loss(loss));
        if !loss.is_finite() {
            first_nonfinite = Some(step);
            break;
        }

        // dL/dyhat per sample.
        let g: Vec<f64> = preds.iter().zip(&targets).map(|(p, y)| 2.0 * (p - y) / cfg.batch as f64).collect();
        let mut grad_w = vec![0.0; d];
        for (zs, gb) in z.data().chunks_exact(d).zip(&g) {
            for (gw, zk) in grad_w.iter_mut().zip(zs) {
                *gw += gb * zk * inv_d;
            }
        }
        let grad_w0: f64 = g.iter().sum();
        let upstream = Tensor::from_fn(z.shape().to_vec(), |j| g[j / d] * m.w[j % d] * inv_d)?;
        let grad_f = op.backward(&f, &upstream)?;
        let (mut grad_a, mut grad_b) = (vec![0.0; c], vec![0.0; c]);
        for (j, (gf, xv)) in grad_f.data().iter().zip(x.data()).enumerate() {
            let ci = (j / plane) % c;
            grad_a[ci] += gf * xv;
            grad_b[ci] += gf;
        }

        let lr = cfg.lr;
        m.w.iter_mut().zip(&grad_w).for_each(|(p, g)| *p -= lr * g);
        m.w0 -= lr * grad_w0;
        m.a.iter_mut().zip(&grad_a).for_each(|(p, g)| *p -= lr * g);
        m.b.iter_mut().zip(&grad_b).for_each(|(p, g)| *p -= lr * g);
    }

    Ok(ToyTrainReport {
        step_of_first_nonfinite: first_nonfinite,
        final_loss: *curve.last().expect("steps >= 1"),
        loss_curve: curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_serialize_with_markers() {
        let v = serde_json::to_string(&[Loss(0.5), Loss(f64::NAN), Loss(f64::INFINITY), Loss(f64::NEG_INFINITY)]).unwrap();
        assert_eq!(v, r#"[0.5,"NaN","Infinity","-Infinity"]"#);
    }

    #[test]
    fn config_errors() {
        let bad = |f: fn(&mut ToyTrainConfig)| {
            let mut cfg = ToyTrainConfig::default();
            f(&mut cfg);
            toytrain(&cfg, Exec::Sequential).is_err()
        };
        assert!(bad(|c| c.steps = 0));
        assert!(bad(|c| c.lr = 0.0));
        assert!(bad(|c| c.input_scale = -1.0));
        assert!(bad(|c| c.norm = NormKind::None));
        assert!(bad(|c| {
            c.norm = NormKind::Batch;
            c.batch = 1;
        }));
    }

    #[test]
    fn short_run_is_reproducible() {
        let cfg = ToyTrainConfig { steps: 20, ..Default::default() };
        let a = toytrain(&cfg, Exec::Sequential).unwrap();
        assert_eq!(a.loss_curve.len(), 20);
        assert_eq!(a, toytrain(&cfg, Exec::Parallel).unwrap());
    }
}
