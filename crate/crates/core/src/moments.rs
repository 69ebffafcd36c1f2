//! Mean and central moments of a finite set of values.
//!
//! Moments are population statistics, computed in two passes: the mean first,
//! then the centered power sums. For a window `x_1..x_m` with mean `mu`,
//!
//! ```text
//! m1 = (1/m) sum x_j
//! mi = (1/m) sum (x_j - mu)^i        for i = 2..4
//! ```
//!
//! and the partial derivatives are
//!
//! ```text
//! d m1 / d x_j = 1/m
//! d mi / d x_j = (i/m) * ((x_j - mu)^(i-1) - m(i-1))   for i >= 2, with m(1) := 0
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest supported moment order.
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentVector {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
    pub count: usize,
}

impl MomentVector {
    /// Moment of order `i` (1..=4).
    pub fn get(&self, i: usize) -> f64 {
        match i {
            1 => self.m1,
            2 => self.m2,
            3 => self.m3,
            4 => self.m4,
            _ => panic!("moment order {i} out of range"),
        }
    }

    pub fn as_array(&self) -> [f64; MAX_ORDER] {
        [self.m1, self.m2, self.m3, self.m4]
    }

    /// Central moment used in the gradient recurrence, where order 1 is 0.
    fn centered(&self, i: usize) -> f64 {
        if i == 1 {
            0.0
        } else {
            self.get(i)
        }
    }
}

/// Two-point windows are symmetric about their mean, so m3 and its gradient
/// vanish identically. Rounding would otherwise leave ~1e-15 residue.
fn third_vanishes(count: usize, order: usize) -> bool {
    count == 2 && order >= 3
}

pub(crate) fn check_order(order: usize) -> Result<()> {
    if (1..=MAX_ORDER).contains(&order) {
        Ok(())
    } else {
        Err(Error::Spec(format!("moment order must be in 1..=4, got {order}")))
    }
}

/// Moments up to `order`; higher orders are left at 0.
pub fn central_moments(values: &[f64], order: usize) -> Result<MomentVector> {
    check_order(order)?;
    if values.is_empty() {
        return Err(Error::Empty("central moments of an empty window"));
    }
    Ok(moments_unchecked(values.iter().copied(), values.len(), order))
}

/// Two-pass moments over an iterator that can be replayed.
pub(crate) fn moments_unchecked<I>(values: I, count: usize, order: usize) -> MomentVector
where
    I: Iterator<Item = f64> + Clone,
{
    let inv = 1.0 / count as f64;
    let mean = values.clone().sum::<f64>() * inv;
    let mut mv = MomentVector {
        m1: mean,
        count,
        ..Default::default()
    };
    if order < 2 {
        return mv;
    }
    let (mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0);
    for x in values {
        let d = x - mean;
        let d2 = d * d;
        s2 += d2;
        if order >= 3 {
            s3 += d2 * d;
        }
        if order >= 4 {
            s4 += d2 * d2;
        }
    }
    mv.m2 = s2 * inv;
    mv.m3 = if third_vanishes(count, order) { 0.0 } else { s3 * inv };
    mv.m4 = s4 * inv;
    mv
}

/// `grads[i - 1][j]` is the partial derivative of the order-`i` moment with
/// respect to `values[j]`, for `i in 1..=order`.
pub fn moment_gradients(values: &[f64], order: usize) -> Result<Vec<Vec<f64>>> {
    let mv = central_moments(values, order)?;
    let inv = 1.0 / values.len() as f64;
    Ok((1..=order)
        .map(|i| {
            if i == 1 {
                return vec![inv; values.len()];
            }
            if i == 3 && third_vanishes(values.len(), order) {
                return vec![0.0; values.len()];
            }
            let scale = i as f64 * inv;
            let prev = mv.centered(i - 1);
            values
                .iter()
                .map(|&x| scale * ((x - mv.m1).powi(i as i32 - 1) - prev))
                .collect()
        })
        .collect())
}

/// Vector-Jacobian product of the moment map for one window: for each value,
/// `sum_i upstream[i-1] * d mi / d x_j`, written into `out`.
pub(crate) fn moment_vjp_into<'a, I>(values: I, mv: &MomentVector, order: usize, upstream: &[f64; MAX_ORDER], out: &mut [f64])
where
    I: Iterator<Item = &'a f64>,
{
    let inv = 1.0 / mv.count as f64;
    let g1 = upstream[0] * inv;
    let c2 = 2.0 * inv * upstream[1];
    let c3 = if third_vanishes(mv.count, order) { 0.0 } else { 3.0 * inv * upstream[2] };
    let c4 = 4.0 * inv * upstream[3];
    // Constant parts of the recurrence: (i/m) * m(i-1).
    let k = if order >= 3 { c3 * mv.m2 } else { 0.0 } + if order >= 4 { c4 * mv.m3 } else { 0.0 };
    for (o, &x) in out.iter_mut().zip(values) {
        let d = x - mv.m1;
        let mut g = g1;
        if order >= 2 {
            g += c2 * d;
        }
        if order >= 3 {
            let d2 = d * d;
            g += c3 * d2;
            if order >= 4 {
                g += c4 * d2 * d;
            }
            g -= k;
        }
        *o = g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const CHECKER: [f64; 9] = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];

    #[test]
    fn checkerboard_moments() {
        let mv = central_moments(&CHECKER, 4).unwrap();
        assert_relative_eq!(mv.m1, 5.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(mv.m2, 20.0 / 81.0, epsilon = 1e-15);
        assert_relative_eq!(mv.m3, -20.0 / 729.0, epsilon = 1e-15);
        assert_relative_eq!(mv.m4, 3780.0 / 59049.0, epsilon = 1e-15);
        assert_eq!(mv.count, 9);
    }

    #[test]
    fn solid_and_two_point() {
        let mv = central_moments(&[7.25; 9], 4).unwrap();
        assert_eq!(mv.as_array(), [7.25, 0.0, 0.0, 0.0]);

        let mv = central_moments(&[0.0, 1.0], 4).unwrap();
        assert_eq!(mv.as_array(), [0.5, 0.25, 0.0, 0.0625]);

        let pair = [-7.776756846415164, 3.1];
        assert_eq!(central_moments(&pair, 4).unwrap().m3, 0.0);
        assert!(moment_gradients(&pair, 3).unwrap()[2].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn lower_orders_leave_the_rest_zero() {
        let mv = central_moments(&CHECKER, 2).unwrap();
        assert_eq!((mv.m3, mv.m4), (0.0, 0.0));
        let mv = central_moments(&[3.0], 4).unwrap();
        assert_eq!(mv.as_array(), [3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(central_moments(&[], 2), Err(Error::Empty(_))));
        assert!(central_moments(&[1.0], 0).is_err());
        assert!(central_moments(&[1.0], 5).is_err());
        assert!(moment_gradients(&[], 1).is_err());
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let g = moment_gradients(&CHECKER, 1).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g[0].iter().all(|&v| v == 1.0 / 9.0));
    }

    #[test]
    fn constant_input_has_zero_central_gradients() {
        let g = moment_gradients(&[2.5; 6], 4).unwrap();
        for order in &g[1..] {
            assert!(order.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vjp_matches_explicit_gradients() {
        let values = [0.3, -1.2, 2.0, 0.7, 0.7, -0.1];
        let up = [0.5, -2.0, 1.5, 0.25];
        for order in 1..=4 {
            let grads = moment_gradients(&values, order).unwrap();
            let mv = central_moments(&values, order).unwrap();
            let mut out = [0.0; 6];
            moment_vjp_into(values.iter(), &mv, order, &up, &mut out);
            for j in 0..values.len() {
                let expect: f64 = (0..order).map(|i| up[i] * grads[i][j]).sum();
                assert_relative_eq!(out[j], expect, epsilon = 1e-13);
            }
        }
    }
}
