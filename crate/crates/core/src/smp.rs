//! Spatial moment pooling SMP(n).
//!
//! For every pooling window SMP(n) emits the mean and the central moments of
//! orders 2..n, so a `(N, C, H, W)` input becomes `(N, n*C, H', W')`. Output
//! channels are moment-major: channels `[(i-1)*C, i*C)` hold the order-`i`
//! moment of input channels `0..C`. SMP(1) is spatial average pooling.
//!
//! Padding is exclusive: padded cells never enter a window's statistics and
//! the moment of a window is taken over its in-bounds cells only.
//!
//! Orders 1 and 2 are emitted raw. Orders >= 3 go through the normalization
//! selected in [`MomentSpec`], optionally after standardization
//! `m3 / (sigma^3 + eps)`, `m4 / (sigma^4 + eps)`.
//!
//! # Cost model
//!
//! [`op_cost`] counts multiply-accumulates (a fused multiply-add and a bare
//! add both count as one). With `S` the total number of in-bounds window
//! cells over all windows, `W` the number of windows (`N*C*H'*W'`):
//!
//! ```text
//! SAP               S
//! SMP(n)            n * S                      one accumulate per cell per emitted order
//!   + standardize   2 * (n-2) * W              power of sigma and divide, orders >= 3
//!   + layer/batch   4 * (n-2) * W              mean, variance, center, scale
//!   + max           2 * (n-2) * W              abs-max, scale
//! ```
//!
//! so `extra_vs_sap` is `(n-1) * S` plus the per-window terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::moments::{self, MomentVector, MAX_ORDER};
use crate::normalize::{self, BatchNormState, NormAxis, NormGroup, NormKind, DEFAULT_EPS};
use crate::tensor::{dims4_of, Tensor};
use crate::windows::{self, AxisTaps, PoolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    order: usize,
    norm: NormKind,
    eps_norm: f64,
    standardize_pre_norm: bool,
    norm_axis: NormAxis,
    unsafe_no_norm: bool,
}

impl MomentSpec {
    /// Guarded constructor: order >= 3 without normalization is rejected.
    pub fn new(order: usize, norm: NormKind) -> Result<Self> {
        Self::build(order, norm, false)
    }

    /// Unnormalized moments of any order. Orders >= 3 are numerically unsafe
    /// to train through; this is the explicit opt-in.
    pub fn unnormalized(order: usize) -> Result<Self> {
        Self::build(order, NormKind::None, true)
    }

    fn build(order: usize, norm: NormKind, unsafe_no_norm: bool) -> Result<Self> {
        let spec = Self {
            order,
            norm,
            eps_norm: DEFAULT_EPS,
            standardize_pre_norm: false,
            norm_axis: NormAxis::PerOrder,
            unsafe_no_norm,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Mean-only spec, i.e. spatial average pooling.
    pub fn sap() -> Self {
        Self::new(1, NormKind::None).expect("order 1 is always valid")
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        self.eps_norm = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_standardize_pre_norm(mut self, on: bool) -> Self {
        self.standardize_pre_norm = on;
        self
    }

    pub fn with_norm_axis(mut self, axis: NormAxis) -> Self {
        self.norm_axis = axis;
        self
    }

    fn validate(&self) -> Result<()> {
        moments::check_order(self.order)?;
        if !(self.eps_norm > 0.0 && self.eps_norm.is_finite()) {
            return Err(Error::Spec(format!("eps_norm must be positive and finite, got {}", self.eps_norm)));
        }
        if self.order >= 3 && self.norm == NormKind::None && !self.unsafe_no_norm {
            return Err(Error::UnnormalizedGuard { order: self.order });
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    pub fn eps_norm(&self) -> f64 {
        self.eps_norm
    }

    pub fn standardize_pre_norm(&self) -> bool {
        self.standardize_pre_norm
    }

    pub fn norm_axis(&self) -> NormAxis {
        self.norm_axis
    }

    /// Number of normalized moment orders (those >= 3).
    pub fn high_orders(&self) -> usize {
        self.order.saturating_sub(2)
    }

    fn normalizes(&self) -> bool {
        self.norm != NormKind::None && self.order >= 3
    }

    fn standardizes(&self) -> bool {
        self.standardize_pre_norm && self.order >= 3
    }
}

/// Output geometry shared by a forward pass and its backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmpShape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub order: usize,
}

impl SmpShape {
    pub fn cells(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.order * self.channels, self.out_h, self.out_w]
    }

    /// Flat output offset of moment order `i` (1-based) of input channel `c`.
    pub fn offset(&self, n: usize, i: usize, c: usize, cell: usize) -> usize {
        ((n * self.order + i - 1) * self.channels + c) * self.cells() + cell
    }
}

/// How batch norm obtains its statistics.
#[derive(Debug)]
pub enum BatchNormMode<'a> {
    /// Batch statistics, no running state.
    Train,
    /// Batch statistics, blended into the running state.
    TrainTracking(&'a mut BatchNormState),
    /// Running statistics.
    Eval(&'a BatchNormState),
}

/// Map applied to one normalization group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupMap {
    /// Standardize by the group's own mean and variance.
    Layer,
    /// Divide by a fixed divisor.
    Scale { divisor: f64 },
    /// `(x - shift) * scale` with constants from running statistics.
    Affine { shift: f64, scale: f64 },
}

/// Intermediate values of one forward pass, enough to run the backward pass.
#[derive(Debug, Clone)]
pub struct SmpTrace {
    pub shape: SmpShape,
    /// Raw moments, `N*C` planes of `H'*W'` windows.
    pub moments: Vec<MomentVector>,
    /// Output before normalization, in output layout.
    pub pre_norm: Vec<f64>,
    /// Normalization groups as flat output indices, with their maps.
    pub groups: Vec<(Vec<usize>, GroupMap)>,
    pub output: Tensor,
}

impl SmpTrace {
    /// Divisors of the max-norm groups, in group order.
    pub fn max_divisors(&self) -> Vec<f64> {
        self.groups
            .iter()
            .filter_map(|(_, m)| match m {
                GroupMap::Scale { divisor } => Some(*divisor),
                _ => None,
            })
            .collect()
    }
}

/// An SMP(n) layer: pooling geometry, moment spec and execution policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smp {
    pub pool: PoolSpec,
    pub spec: MomentSpec,
    pub exec: Exec,
}

impl Smp {
    pub fn new(pool: PoolSpec, spec: MomentSpec) -> Self {
        Self {
            pool,
            spec,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn shape(&self, input: &[usize]) -> Result<SmpShape> {
        let [batch, channels, height, width] = dims4_of(input)?;
        let (rows, cols) = exclusive_axes(&self.pool, height, width)?;
        Ok(SmpShape {
            batch,
            channels,
            height,
            width,
            out_h: rows.out,
            out_w: cols.out,
            order: self.spec.order,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x, BatchNormMode::Train, None)?.output)
    }

    /// Forward pass keeping intermediates. `frozen_max` replaces the computed
    /// max-norm divisors (one per group), which turns max norm into the
    /// linear surrogate its backward pass differentiates.
    pub fn forward_trace(&self, x: &Tensor, bn: BatchNormMode<'_>, frozen_max: Option<&[f64]>) -> Result<SmpTrace> {
        let shape = self.shape(x.shape())?;
        let spec = &self.spec;
        let moments = pooled_moments(x, &self.pool, &shape, self.exec)?;

        let mut pre_norm = vec![0.0; shape.batch * shape.order * shape.channels * shape.cells()];
        for n in 0..shape.batch {
            for c in 0..shape.channels {
                let plane = &moments[(n * shape.channels + c) * shape.cells()..][..shape.cells()];
                for (cell, mv) in plane.iter().enumerate() {
                    for i in 1..=shape.order {
                        pre_norm[shape.offset(n, i, c, cell)] = emitted(mv, i, spec);
                    }
                }
            }
        }

        let mut output = pre_norm.clone();
        let mut groups = Vec::new();
        if spec.normalizes() {
            let index_sets = norm_groups(&shape, spec);
            if let Some(d) = frozen_max {
                if spec.norm != NormKind::Max || d.len() != index_sets.len() {
                    return Err(Error::Spec("frozen divisors need max norm and one divisor per group".into()));
                }
            }
            let mut bn = bn;
            if spec.norm == NormKind::Batch {
                let tracked = match &bn {
                    BatchNormMode::Eval(state) => Some(state.channels()),
                    BatchNormMode::TrainTracking(state) => Some(state.channels()),
                    BatchNormMode::Train => None,
                };
                if let Some(channels) = tracked.filter(|&c| c != index_sets.len()) {
                    return Err(Error::Spec(format!(
                        "batch norm state tracks {channels} channels, layer has {}",
                        index_sets.len()
                    )));
                }
                if !matches!(bn, BatchNormMode::Eval(_)) && shape.batch < 2 {
                    return Err(Error::BatchTooSmall(shape.batch));
                }
            }
            for (g, idx) in index_sets.into_iter().enumerate() {
                let vals: Vec<f64> = idx.iter().map(|&k| pre_norm[k]).collect();
                let group = NormGroup::new(&vals, spec.eps_norm)?;
                let map = match spec.norm {
                    NormKind::Layer => GroupMap::Layer,
                    NormKind::Max => GroupMap::Scale {
                        divisor: frozen_max.map_or_else(|| group.max_divisor(), |d| d[g]),
                    },
                    NormKind::Batch => match &mut bn {
                        BatchNormMode::Train => GroupMap::Layer,
                        BatchNormMode::TrainTracking(state) => {
                            let (mean, var) = group.stats();
                            state.update(g, mean, var, vals.len());
                            GroupMap::Layer
                        }
                        BatchNormMode::Eval(state) => {
                            let (shift, scale) = state.eval_affine(g, spec.eps_norm);
                            GroupMap::Affine { shift, scale }
                        }
                    },
                    NormKind::None => unreachable!("normalizes() excludes none"),
                };
                let y = apply_map(&group, map);
                for (&k, v) in idx.iter().zip(y) {
                    output[k] = v;
                }
                groups.push((idx, map));
            }
        }

        Ok(SmpTrace {
            shape,
            moments,
            pre_norm,
            groups,
            output: Tensor::new(shape.output_shape(), output)?,
        })
    }

    /// Vector-Jacobian product of the traced forward pass.
    pub fn backward(&self, x: &Tensor, trace: &SmpTrace, upstream: &Tensor) -> Result<Tensor> {
        let shape = trace.shape;
        if upstream.shape() != shape.output_shape().as_slice() {
            return Err(Error::shape(
                upstream.shape(),
                format!("upstream gradient must have the forward output shape {:?}", shape.output_shape()),
            ));
        }
        if x.len() != shape.batch * shape.channels * shape.height * shape.width {
            return Err(Error::shape(x.shape(), "input does not match the traced forward pass"));
        }
        let spec = &self.spec;

        let mut g = upstream.data().to_vec();
        for (idx, map) in &trace.groups {
            let vals: Vec<f64> = idx.iter().map(|&k| trace.pre_norm[k]).collect();
            let ups: Vec<f64> = idx.iter().map(|&k| upstream.data()[k]).collect();
            let group = NormGroup::new(&vals, spec.eps_norm)?;
            let back = match *map {
                GroupMap::Layer => normalize::layer_norm_backward(&group, &ups)?,
                GroupMap::Scale { divisor } => normalize::scale_by(&ups, divisor),
                GroupMap::Affine { scale, .. } => ups.iter().map(|u| u * scale).collect(),
            };
            for (&k, v) in idx.iter().zip(back) {
                g[k] = v;
            }
        }

        // Per-window upstream on the raw moments.
        let cells = shape.cells();
        let window_up: Vec<[f64; MAX_ORDER]> = (0..shape.batch * shape.channels * cells)
            .map(|w| {
                let (n, c, cell) = (w / (shape.channels * cells), (w / cells) % shape.channels, w % cells);
                let mut up = [0.0; MAX_ORDER];
                for i in 1..=shape.order {
                    up[i - 1] = g[shape.offset(n, i, c, cell)];
                }
                if spec.standardizes() {
                    standardize_backward(&trace.moments[w], spec, &mut up);
                }
                up
            })
            .collect();

        let (rows_ax, cols_ax) = exclusive_axes(&self.pool, shape.height, shape.width)?;
        let plane_len = shape.height * shape.width;
        let mut grad = vec![0.0; x.len()];
        self.exec.for_each_chunk(&mut grad, plane_len, |p, out| {
            let plane = &x.data()[p * plane_len..][..plane_len];
            let windows = windows::gather(plane, shape.width, &rows_ax, &cols_ax, 0.0);
            let mut wgrad = windows.zeros_like();
            let mut buf = Vec::with_capacity(windows.cols);
            let mut gbuf = vec![0.0; windows.cols];
            for r in 0..windows.rows {
                let w = p * cells + r;
                let mv = &trace.moments[w];
                match windows.row_mask(r) {
                    None => moments::moment_vjp_into(windows.row(r).iter(), mv, shape.order, &window_up[w], wgrad.row_mut(r)),
                    Some(mask) => {
                        buf.clear();
                        buf.extend(windows.row(r).iter().zip(mask).filter_map(|(&v, &ok)| ok.then_some(v)));
                        moments::moment_vjp_into(buf.iter(), mv, shape.order, &window_up[w], &mut gbuf[..buf.len()]);
                        let mut it = gbuf.iter();
                        for (o, &ok) in wgrad.row_mut(r).iter_mut().zip(mask) {
                            if ok {
                                *o = *it.next().expect("one gradient per valid cell");
                            }
                        }
                    }
                }
            }
            windows::scatter(&wgrad, &rows_ax, &cols_ax, shape.width, out)
                .expect("window matrix gathered with the same geometry");
        });
        Tensor::new(x.shape().to_vec(), grad)
    }
}

fn apply_map(group: &NormGroup, map: GroupMap) -> Vec<f64> {
    match map {
        GroupMap::Layer => normalize::layer_norm(group),
        GroupMap::Scale { divisor } => normalize::scale_by(group.values(), divisor),
        GroupMap::Affine { shift, scale } => group.values().iter().map(|x| (x - shift) * scale).collect(),
    }
}

/// Value emitted for order `i` before normalization.
fn emitted(mv: &MomentVector, i: usize, spec: &MomentSpec) -> f64 {
    let raw = mv.get(i);
    if !spec.standardizes() || i < 3 {
        return raw;
    }
    let m2 = mv.m2;
    let power = if i == 3 { m2 * m2.sqrt() } else { m2 * m2 };
    raw / (power + spec.eps_norm)
}

/// Turns gradients on standardized orders 3 and 4 into gradients on the raw
/// moments, in place.
fn standardize_backward(mv: &MomentVector, spec: &MomentSpec, up: &mut [f64; MAX_ORDER]) {
    let m2 = mv.m2;
    let sigma = m2.sqrt();
    let mut dm2 = 0.0;
    if spec.order >= 3 {
        let d3 = m2 * sigma + spec.eps_norm;
        let g = up[2];
        up[2] = g / d3;
        dm2 -= g * mv.m3 * 1.5 * sigma / (d3 * d3);
    }
    if spec.order >= 4 {
        let d4 = m2 * m2 + spec.eps_norm;
        let g = up[3];
        up[3] = g / d4;
        dm2 -= g * mv.m4 * 2.0 * m2 / (d4 * d4);
    }
    up[1] += dm2;
}

/// Axis tables for exclusive pooling; rejects windows with no in-bounds cell.
fn exclusive_axes(pool: &PoolSpec, h: usize, w: usize) -> Result<(AxisTaps, AxisTaps)> {
    let (rows, cols) = pool.axes(h, w)?;
    for (axis, name) in [(&rows, "height"), (&cols, "width")] {
        if let Some(o) = axis.empty_window() {
            return Err(Error::Geometry(format!(
                "{name}: window {o} covers only padding; exclusive pooling needs at least one input cell"
            )));
        }
    }
    Ok((rows, cols))
}

/// Raw moments of every window, `N*C` planes in order, raster order within.
fn pooled_moments(x: &Tensor, pool: &PoolSpec, shape: &SmpShape, exec: Exec) -> Result<Vec<MomentVector>> {
    let (rows_ax, cols_ax) = exclusive_axes(pool, shape.height, shape.width)?;
    let plane_len = shape.height * shape.width;
    let planes = exec.map(shape.batch * shape.channels, |p| {
        let plane = &x.data()[p * plane_len..][..plane_len];
        let windows = windows::gather(plane, shape.width, &rows_ax, &cols_ax, 0.0);
        (0..windows.rows)
            .map(|r| match windows.row_mask(r) {
                None => moments::moments_unchecked(windows.row(r).iter().copied(), windows.cols, shape.order),
                Some(mask) => {
                    let valid = windows.row(r).iter().zip(mask).filter_map(|(&v, &ok)| ok.then_some(v));
                    let count = mask.iter().filter(|&&ok| ok).count();
                    moments::moments_unchecked(valid, count, shape.order)
                }
            })
            .collect::<Vec<_>>()
    });
    Ok(planes.into_iter().flatten().collect())
}

/// Normalization groups as flat output indices.
fn norm_groups(shape: &SmpShape, spec: &MomentSpec) -> Vec<Vec<usize>> {
    let (nb, ch, cells) = (shape.batch, shape.channels, shape.cells());
    let high = 3..=shape.order;
    let mut groups = Vec::new();
    match (spec.norm, spec.norm_axis) {
        (NormKind::Batch, _) => {
            for i in high {
                for c in 0..ch {
                    groups.push((0..nb).flat_map(|n| (0..cells).map(move |p| shape.offset(n, i, c, p))).collect());
                }
            }
        }
        (_, NormAxis::PerOrder) => {
            for n in 0..nb {
                for i in high.clone() {
                    let start = shape.offset(n, i, 0, 0);
                    groups.push((start..start + ch * cells).collect());
                }
            }
        }
        (_, NormAxis::PerSample) => {
            for n in 0..nb {
                let start = shape.offset(n, 3, 0, 0);
                groups.push((start..start + (shape.order - 2) * ch * cells).collect());
            }
        }
        (_, NormAxis::PerLocation) => {
            for n in 0..nb {
                for i in high.clone() {
                    for p in 0..cells {
                        groups.push((0..ch).map(|c| shape.offset(n, i, c, p)).collect());
                    }
                }
            }
        }
    }
    groups
}

/// SMP(n) forward pass with batch statistics for batch norm.
pub fn smp_forward(t: &Tensor, pool: &PoolSpec, spec: &MomentSpec) -> Result<Tensor> {
    Smp::new(*pool, *spec).forward(t)
}

/// Spatial average pooling with exclusive padding, computed directly from the
/// input without materializing windows.
pub fn sap_forward(t: &Tensor, pool: &PoolSpec) -> Result<Tensor> {
    sap_forward_with(t, pool, Exec::default())
}

pub fn sap_forward_with(t: &Tensor, pool: &PoolSpec, exec: Exec) -> Result<Tensor> {
    let [n, c, h, w] = t.dims4();
    let (rows_ax, cols_ax) = exclusive_axes(pool, h, w)?;
    let cells = rows_ax.out * cols_ax.out;
    let mut out = vec![0.0; n * c * cells];
    exec.for_each_chunk(&mut out, cells, |p, dst| {
        let plane = &t.data()[p * h * w..][..h * w];
        for oh in 0..rows_ax.out {
            for ow in 0..cols_ax.out {
                let mut sum = 0.0;
                let mut count = 0usize;
                for ih in rows_ax.taps(oh).iter().flatten() {
                    for iw in cols_ax.taps(ow).iter().flatten() {
                        sum += plane[ih * w + iw];
                        count += 1;
                    }
                }
                dst[oh * cols_ax.out + ow] = sum * (1.0 / count as f64);
            }
        }
    });
    Tensor::new(vec![n, c, rows_ax.out, cols_ax.out], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCostReport {
    pub mul_add_count: u64,
    pub extra_vs_sap: u64,
}

/// Multiply-accumulate count of one forward pass; see the module docs.
pub fn op_cost(shape: &[usize], pool: &PoolSpec, spec: &MomentSpec) -> Result<OpCostReport> {
    let [n, c, h, w] = dims4_of(shape)?;
    let (rows_ax, cols_ax) = exclusive_axes(pool, h, w)?;
    let valid = |ax: &AxisTaps| -> u64 { (0..ax.out).map(|o| ax.taps(o).iter().flatten().count() as u64).sum() };
    let planes = (n * c) as u64;
    let cells_total = planes * valid(&rows_ax) * valid(&cols_ax);
    let window_count = planes * (rows_ax.out * cols_ax.out) as u64;
    let order = spec.order() as u64;
    let high = spec.high_orders() as u64;

    let sap = cells_total;
    let mut total = order * cells_total;
    if spec.standardizes() {
        total += 2 * high * window_count;
    }
    total += match spec.norm() {
        _ if !spec.normalizes() => 0,
        NormKind::Layer | NormKind::Batch => 4 * high * window_count,
        NormKind::Max => 2 * high * window_count,
        NormKind::None => 0,
    };
    Ok(OpCostReport {
        mul_add_count: total,
        extra_vs_sap: total - sap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: [usize; 4], data: Vec<f64>) -> Tensor {
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    const CHECKER: [f64; 9] = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];

    #[test]
    fn guard_rejects_unnormalized_high_orders() {
        assert!(MomentSpec::new(2, NormKind::None).is_ok());
        for order in [3, 4] {
            assert!(matches!(MomentSpec::new(order, NormKind::None), Err(Error::UnnormalizedGuard { .. })));
            assert!(MomentSpec::unnormalized(order).is_ok());
        }
        assert!(MomentSpec::new(5, NormKind::Layer).is_err());
        assert!(MomentSpec::unnormalized(0).is_err());
        assert!(MomentSpec::sap().with_eps(0.0).is_err());
    }

    #[test]
    fn checkerboard_global_smp4() {
        let x = t4([1, 1, 3, 3], CHECKER.to_vec());
        let y = smp_forward(&x, &PoolSpec::global(3, 3), &MomentSpec::unnormalized(4).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1, 1]);
        let expect = [5.0 / 9.0, 20.0 / 81.0, -20.0 / 729.0, 3780.0 / 59049.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn solid_global_smp4() {
        let x = Tensor::full(vec![1, 1, 3, 3], 7.0).unwrap();
        let y = smp_forward(&x, &PoolSpec::global(3, 3), &MomentSpec::unnormalized(4).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn sap_examples() {
        let x = t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sap_forward(&x, &PoolSpec::global(2, 2)).unwrap().data(), &[2.5]);
        let ramp = Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64).unwrap();
        let y = sap_forward(&ramp, &PoolSpec::new(2, 2).with_stride(2, 2)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn channels_are_moment_major() {
        let x = Tensor::from_fn(vec![1, 2, 2, 2], |i| if i < 4 { i as f64 } else { 10.0 }).unwrap();
        let y = smp_forward(&x, &PoolSpec::global(2, 2), &MomentSpec::new(2, NormKind::None).unwrap()).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1, 1]);
        assert_eq!(y.data(), &[1.5, 10.0, 1.25, 0.0]);
    }

    #[test]
    fn exclusive_padding_ignores_padded_cells() {
        let x = t4([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let pool = PoolSpec::new(2, 2).with_padding(1, 1);
        let y = smp_forward(&x, &pool, &MomentSpec::new(2, NormKind::None).unwrap()).unwrap();
        // corner window holds one cell: mean = value, variance 0
        assert_eq!(y.get4(0, 0, 0, 0), 1.0);
        assert_eq!(y.get4(0, 1, 0, 0), 0.0);
        assert_eq!(y.get4(0, 0, 1, 1), 2.5);
        assert_eq!(y.get4(0, 0, 0, 1), 1.5);
    }

    #[test]
    fn all_padding_window_is_rejected() {
        let x = t4([1, 1, 1, 1], vec![1.0]);
        let pool = PoolSpec::new(2, 1).with_dilation(3, 1).with_padding(2, 0);
        assert!(windows::output_dims(1, 1, &pool).is_ok());
        assert!(matches!(smp_forward(&x, &pool, &MomentSpec::sap()), Err(Error::Geometry(_))));
    }

    #[test]
    fn standardization_divides_by_sigma_powers() {
        let x = t4([1, 1, 3, 3], CHECKER.to_vec());
        let spec = MomentSpec::unnormalized(4).unwrap().with_standardize_pre_norm(true);
        let y = smp_forward(&x, &PoolSpec::global(3, 3), &spec).unwrap();
        let m2: f64 = 20.0 / 81.0;
        let eps = DEFAULT_EPS;
        assert!((y.data()[2] - (-20.0 / 729.0) / (m2.powf(1.5) + eps)).abs() < 1e-14);
        assert!((y.data()[3] - (3780.0 / 59049.0) / (m2 * m2 + eps)).abs() < 1e-14);
        assert_eq!(y.data()[1], m2);
    }

    #[test]
    fn batch_norm_needs_two_samples() {
        let x = Tensor::from_fn(vec![1, 2, 3, 3], |i| (i % 5) as f64).unwrap();
        let spec = MomentSpec::new(3, NormKind::Batch).unwrap();
        assert!(matches!(smp_forward(&x, &PoolSpec::new(2, 2), &spec), Err(Error::BatchTooSmall(1))));
        let state = BatchNormState::new(2);
        let smp = Smp::new(PoolSpec::new(2, 2), spec);
        assert!(smp.forward_trace(&x, BatchNormMode::Eval(&state), None).is_ok());
    }

    #[test]
    fn layer_norm_groups_are_standardized() {
        let x = Tensor::from_fn(vec![2, 3, 6, 6], |i| ((i * 7919) % 97) as f64 / 10.0).unwrap();
        let spec = MomentSpec::new(4, NormKind::Layer).unwrap();
        let y = smp_forward(&x, &PoolSpec::new(3, 3).with_stride(2, 2), &spec).unwrap();
        let cells = 4;
        for n in 0..2 {
            for i in 3..=4 {
                let start = ((n * 4 + i - 1) * 3) * cells;
                let g = &y.data()[start..start + 3 * cells];
                let mean: f64 = g.iter().sum::<f64>() / g.len() as f64;
                let var: f64 = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.len() as f64;
                assert!(mean.abs() < 1e-10);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn cost_examples() {
        let pool = PoolSpec::global(4, 4);
        let sap = op_cost(&[1, 2, 4, 4], &pool, &MomentSpec::sap()).unwrap();
        assert_eq!(sap, OpCostReport { mul_add_count: 32, extra_vs_sap: 0 });
        let smp2 = op_cost(&[1, 2, 4, 4], &pool, &MomentSpec::new(2, NormKind::None).unwrap()).unwrap();
        assert_eq!(smp2.extra_vs_sap, 32);
        let smp4 = op_cost(&[1, 2, 4, 4], &pool, &MomentSpec::new(4, NormKind::Layer).unwrap()).unwrap();
        assert_eq!(smp4.extra_vs_sap, 3 * 32 + 4 * 2 * 2);
    }

    #[test]
    fn cost_is_monotone_in_order() {
        let pool = PoolSpec::new(3, 3).with_padding(1, 1).with_stride(2, 2);
        for norm in [NormKind::Layer, NormKind::Max, NormKind::Batch] {
            let costs: Vec<u64> = (1..=4)
                .map(|n| op_cost(&[2, 3, 9, 9], &pool, &MomentSpec::new(n, norm).unwrap()).unwrap().mul_add_count)
                .collect();
            assert!(costs.windows(2).all(|w| w[0] < w[1]), "{costs:?}");
        }
    }

    #[test]
    fn cost_extra_is_linear_in_feature_size() {
        let spec = MomentSpec::new(2, NormKind::None).unwrap();
        let base = op_cost(&[1, 8, 5, 7], &PoolSpec::global(5, 7), &spec).unwrap().extra_vs_sap;
        let double_c = op_cost(&[1, 16, 5, 7], &PoolSpec::global(5, 7), &spec).unwrap().extra_vs_sap;
        let double_hw = op_cost(&[1, 8, 10, 7], &PoolSpec::global(10, 7), &spec).unwrap().extra_vs_sap;
        assert_eq!(double_c, 2 * base);
        assert_eq!(double_hw, 2 * base);
        assert_eq!(base, 8 * 5 * 7);
    }
}
