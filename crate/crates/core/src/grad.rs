//! Backward pass of the full SMP(n) operator and finite-difference checking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::smp::{BatchNormMode, MomentSpec, Smp};
use crate::tensor::Tensor;
use crate::windows::PoolSpec;

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as denominator.
pub const REL_FLOOR: f64 = 1e-12;
pub const DEFAULT_STEP: f64 = 1e-6;

/// A differentiable map with a vector-Jacobian product.
pub trait Operator: Sync {
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub n_checked: usize,
    pub passed: bool,
}

/// SMP(n) plus normalization as an [`Operator`].
///
/// Batch norm runs in training mode (batch statistics, differentiated through).
/// Max norm can be frozen at a point with [`SmpOperator::surrogate_at`]: the
/// divisors are then constants, which is exactly the map the straight-through
/// backward pass differentiates.
#[derive(Debug, Clone)]
pub struct SmpOperator {
    smp: Smp,
    frozen_max: Option<Vec<f64>>,
    backward_gain: f64,
}

impl SmpOperator {
    pub fn new(smp: Smp) -> Self {
        Self {
            smp,
            frozen_max: None,
            backward_gain: 1.0,
        }
    }

    /// Freezes the max-norm divisors at their values for input `x`.
    pub fn surrogate_at(mut self, x: &Tensor) -> Result<Self> {
        let trace = self.smp.forward_trace(x, BatchNormMode::Train, None)?;
        self.frozen_max = Some(trace.max_divisors());
        Ok(self)
    }

    /// Multiplies every analytic gradient by `1 + delta`. Negative control
    /// for gradient checks only.
    pub fn perturb_backward(mut self, delta: f64) -> Self {
        self.backward_gain = 1.0 + delta;
        self
    }

    fn frozen(&self) -> Option<&[f64]> {
        self.frozen_max.as_deref().filter(|d| !d.is_empty())
    }
}

impl Operator for SmpOperator {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.smp.forward_trace(x, BatchNormMode::Train, self.frozen())?.output)
    }

    fn backward(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        let trace = self.smp.forward_trace(x, BatchNormMode::Train, self.frozen())?;
        let g = self.smp.backward(x, &trace, upstream)?;
        Ok(if self.backward_gain == 1.0 { g } else { g.map(|v| v * self.backward_gain) })
    }
}

/// Input gradient of `<smp_forward(t), upstream>`.
pub fn smp_backward(t: &Tensor, pool: &PoolSpec, spec: &MomentSpec, upstream: &Tensor) -> Result<Tensor> {
    let smp = Smp::new(*pool, *spec);
    let trace = smp.forward_trace(t, BatchNormMode::Train, None)?;
    smp.backward(t, &trace, upstream)
}

/// Compares the analytic backward pass of `op` with central differences of
/// `<op.forward(x), upstream>`, one input element at a time.
pub fn finite_diff_check(op: &impl Operator, x: &Tensor, upstream: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport> {
    finite_diff_check_with(op, x, upstream, h, tol, Exec::default())
}

pub fn finite_diff_check_with(
    op: &impl Operator,
    x: &Tensor,
    upstream: &Tensor,
    h: f64,
    tol: f64,
    exec: Exec,
) -> Result<GradCheckReport> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Spec(format!("finite-difference step must be positive, got {h}")));
    }
    let base = op.forward(x)?;
    let again = op.forward(x)?;
    if let Some(k) = base.data().iter().zip(again.data()).position(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::NonDeterministic(k));
    }
    if upstream.len() != base.len() {
        return Err(Error::shape(upstream.shape(), format!("upstream must match the output shape {:?}", base.shape())));
    }
    let analytic = op.backward(x, upstream)?;
    if analytic.len() != x.len() {
        return Err(Error::shape(analytic.shape(), "backward returned the wrong number of elements"));
    }

    let numeric = exec.map(x.len(), |j| -> Result<f64> {
        let mut xp = x.clone();
        xp.data_mut()[j] += h;
        let fp = op.forward(&xp)?;
        xp.data_mut()[j] = x.data()[j] - h;
        let fm = op.forward(&xp)?;
        // Difference per output first: outputs untouched by x_j cancel exactly.
        let d: f64 = fp
            .data()
            .iter()
            .zip(fm.data())
            .zip(upstream.data())
            .map(|((p, m), u)| u * (p - m))
            .sum();
        Ok(d / (2.0 * h))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        n_checked: x.len(),
        passed: false,
    };
    for (j, (num, &ana)) in numeric.into_iter().zip(analytic.data()).enumerate() {
        let num = num?;
        let abs = (ana - num).abs();
        let rel = abs / ana.abs().max(num.abs()).max(REL_FLOOR);
        // NaN errors always count as worst.
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = rel;
            report.worst_index = j;
        }
        report.max_abs_error = report.max_abs_error.max(abs);
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Max-abs input gradient for each moment order `1..=spec.order()`, with a
/// one-hot upstream on the first output element of that order (sample 0,
/// channel 0, first window).
pub fn gradient_magnitude_profile(x: &Tensor, pool: &PoolSpec, spec: &MomentSpec) -> Result<Vec<f64>> {
    let smp = Smp::new(*pool, *spec);
    let trace = smp.forward_trace(x, BatchNormMode::Train, None)?;
    let shape = trace.shape;
    (1..=spec.order())
        .map(|i| {
            let mut up = Tensor::zeros(shape.output_shape())?;
            up.data_mut()[shape.offset(0, i, 0, 0)] = 1.0;
            let g = smp.backward(x, &trace, &up)?;
            Ok(g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::NormKind;

    struct Constant;

    impl Operator for Constant {
        fn forward(&self, _: &Tensor) -> Result<Tensor> {
            Tensor::new(vec![2], vec![1.0, -3.0])
        }
        fn backward(&self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
            Tensor::zeros(x.shape().to_vec())
        }
    }

    struct Flaky(std::sync::atomic::AtomicU64);

    impl Operator for Flaky {
        fn forward(&self, _: &Tensor) -> Result<Tensor> {
            let k = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Tensor::new(vec![1], vec![k as f64])
        }
        fn backward(&self, x: &Tensor, _: &Tensor) -> Result<Tensor> {
            Tensor::zeros(x.shape().to_vec())
        }
    }

    #[test]
    fn constant_operator_passes() {
        let x = Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let u = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let r = finite_diff_check(&Constant, &x, &u, 1e-6, 1e-9).unwrap();
        assert!(r.passed);
        assert_eq!((r.max_rel_error, r.max_abs_error, r.n_checked), (0.0, 0.0, 3));
    }

    #[test]
    fn nondeterminism_is_detected() {
        let x = Tensor::new(vec![1], vec![0.0]).unwrap();
        let u = Tensor::new(vec![1], vec![1.0]).unwrap();
        let op = Flaky(Default::default());
        assert!(matches!(finite_diff_check(&op, &x, &u, 1e-6, 1e-6), Err(Error::NonDeterministic(0))));
    }

    #[test]
    fn mean_pool_gradient_is_one_quarter() {
        let x = Tensor::from_fn(vec![1, 1, 4, 4], |i| (i as f64).sin()).unwrap();
        let pool = PoolSpec::new(2, 2).with_stride(2, 2);
        let up = Tensor::full(vec![1, 1, 2, 2], 1.0).unwrap();
        let g = smp_backward(&x, &pool, &MomentSpec::sap(), &up).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn variance_gradient_vanishes_on_solid_input() {
        let x = Tensor::full(vec![1, 2, 4, 4], 3.5).unwrap();
        let pool = PoolSpec::new(2, 2).with_stride(2, 2);
        let spec = MomentSpec::new(2, NormKind::None).unwrap();
        let mut up = Tensor::zeros(vec![1, 4, 2, 2]).unwrap();
        up.data_mut()[8..].iter_mut().for_each(|v| *v = 1.0);
        let g = smp_backward(&x, &pool, &spec, &up).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Tensor::zeros(vec![1, 1, 4, 4]).unwrap();
        let up = Tensor::zeros(vec![1, 1, 3, 3]).unwrap();
        assert!(smp_backward(&x, &PoolSpec::new(2, 2).with_stride(2, 2), &MomentSpec::sap(), &up).is_err());
    }

    #[test]
    fn perturbed_backward_fails_the_check() {
        let x = Tensor::from_fn(vec![1, 2, 5, 5], |i| ((i * 37) % 11) as f64 / 5.0).unwrap();
        let smp = Smp::new(PoolSpec::new(3, 3), MomentSpec::sap());
        let up = Tensor::from_fn(vec![1, 2, 3, 3], |i| 1.0 + i as f64).unwrap();
        let good = finite_diff_check(&SmpOperator::new(smp), &x, &up, 1e-6, 1e-9).unwrap();
        assert!(good.passed, "{good:?}");
        let bad = finite_diff_check(&SmpOperator::new(smp).perturb_backward(1e-3), &x, &up, 1e-6, 1e-6).unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn solid_input_has_flat_profile_above_order_one() {
        let x = Tensor::full(vec![1, 1, 4, 4], -2.0).unwrap();
        let p = gradient_magnitude_profile(&x, &PoolSpec::new(2, 2), &MomentSpec::unnormalized(4).unwrap()).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0], 0.25);
        assert!(p[1..].iter().all(|&v| v == 0.0));
    }
}
