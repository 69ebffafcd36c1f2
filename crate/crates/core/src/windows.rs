//! Pooling-window geometry and im2col / col2im.
//!
//! A pooling window uses exactly the same geometry as a convolution window
//! (kernel, stride, padding, dilation). Windows are extracted into the rows of
//! a [`WindowMatrix`]; [`col2im_accumulate`] is the adjoint scatter-add used by
//! backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation_h: usize,
    pub dilation_w: usize,
}

impl PoolSpec {
    /// `kh x kw` kernel with stride 1, no padding and no dilation.
    pub fn new(kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            kernel_h,
            kernel_w,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
            dilation_h: 1,
            dilation_w: 1,
        }
    }

    /// One window covering a whole `h x w` plane.
    pub fn global(h: usize, w: usize) -> Self {
        Self::new(h, w)
    }

    pub fn with_stride(mut self, h: usize, w: usize) -> Self {
        self.stride_h = h;
        self.stride_w = w;
        self
    }

    pub fn with_padding(mut self, h: usize, w: usize) -> Self {
        self.pad_h = h;
        self.pad_w = w;
        self
    }

    pub fn with_dilation(mut self, h: usize, w: usize) -> Self {
        self.dilation_h = h;
        self.dilation_w = w;
        self
    }

    pub fn window_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub(crate) fn axes(&self, h: usize, w: usize) -> Result<(AxisTaps, AxisTaps)> {
        let rows = AxisTaps::new(h, self.kernel_h, self.stride_h, self.pad_h, self.dilation_h, "height")?;
        let cols = AxisTaps::new(w, self.kernel_w, self.stride_w, self.pad_w, self.dilation_w, "width")?;
        Ok((rows, cols))
    }
}

fn axis_extent(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize, axis: &str) -> Result<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return Err(Error::Geometry(format!(
            "{axis}: kernel, stride and dilation must be >= 1 (got kernel {kernel}, stride {stride}, dilation {dilation})"
        )));
    }
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * pad;
    if span > padded {
        return Err(Error::Geometry(format!(
            "{axis}: effective kernel extent {span} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - span) / stride + 1)
}

/// Output extents `(h_out, w_out)` of a pooling over an `h x w` plane.
pub fn output_dims(h: usize, w: usize, spec: &PoolSpec) -> Result<(usize, usize)> {
    Ok((
        axis_extent(h, spec.kernel_h, spec.stride_h, spec.pad_h, spec.dilation_h, "height")?,
        axis_extent(w, spec.kernel_w, spec.stride_w, spec.pad_w, spec.dilation_w, "width")?,
    ))
}

/// Input coordinate of every (output index, tap) pair along one axis;
/// `None` marks a padding position.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps {
    pub out: usize,
    pub kernel: usize,
    pos: Vec<Option<usize>>,
}

impl AxisTaps {
    fn new(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize, axis: &str) -> Result<Self> {
        let out = axis_extent(input, kernel, stride, pad, dilation, axis)?;
        let mut pos = Vec::with_capacity(out * kernel);
        for o in 0..out {
            for t in 0..kernel {
                let p = (o * stride + t * dilation) as isize - pad as isize;
                pos.push((p >= 0 && (p as usize) < input).then_some(p as usize));
            }
        }
        Ok(Self { out, kernel, pos })
    }

    #[inline]
    pub fn taps(&self, o: usize) -> &[Option<usize>] {
        &self.pos[o * self.kernel..(o + 1) * self.kernel]
    }

    pub fn has_padding(&self) -> bool {
        self.pos.iter().any(Option::is_none)
    }

    /// First output index whose window has no in-bounds tap, if any.
    pub fn empty_window(&self) -> Option<usize> {
        (0..self.out).find(|&o| self.taps(o).iter().all(Option::is_none))
    }
}

/// Flattened pooling windows of one plane, one window per row in raster order
/// of the output positions.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    /// Per-entry validity; `None` when no window touches padding.
    pub mask: Option<Vec<bool>>,
    pub out_h: usize,
    pub out_w: usize,
}

impl WindowMatrix {
    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mask(&self, r: usize) -> Option<&[bool]> {
        self.mask
            .as_deref()
            .map(|m| &m[r * self.cols..(r + 1) * self.cols])
    }

    /// In-bounds values of row `r`, in raster order within the window.
    pub fn valid_row(&self, r: usize) -> Vec<f64> {
        match self.row_mask(r) {
            None => self.row(r).to_vec(),
            Some(mask) => self
                .row(r)
                .iter()
                .zip(mask)
                .filter_map(|(&v, &ok)| ok.then_some(v))
                .collect(),
        }
    }
}

/// Extracts the windows of one `h x w` plane.
pub fn im2col_plane(plane: &[f64], h: usize, w: usize, spec: &PoolSpec, pad_value: f64) -> Result<WindowMatrix> {
    let (rows_ax, cols_ax) = spec.axes(h, w)?;
    Ok(gather(plane, w, &rows_ax, &cols_ax, pad_value))
}

pub(crate) fn gather(plane: &[f64], w: usize, rows_ax: &AxisTaps, cols_ax: &AxisTaps, pad_value: f64) -> WindowMatrix {
    let cols = rows_ax.kernel * cols_ax.kernel;
    let rows = rows_ax.out * cols_ax.out;
    let padded = rows_ax.has_padding() || cols_ax.has_padding();
    let mut data = Vec::with_capacity(rows * cols);
    let mut mask = padded.then(|| Vec::with_capacity(rows * cols));
    for oh in 0..rows_ax.out {
        let taps_h = rows_ax.taps(oh);
        for ow in 0..cols_ax.out {
            let taps_w = cols_ax.taps(ow);
            for &ih in taps_h {
                for &iw in taps_w {
                    let at = ih.zip(iw).map(|(ih, iw)| ih * w + iw);
                    data.push(at.map_or(pad_value, |i| plane[i]));
                    if let Some(m) = mask.as_mut() {
                        m.push(at.is_some());
                    }
                }
            }
        }
    }
    WindowMatrix {
        rows,
        cols,
        data,
        mask,
        out_h: rows_ax.out,
        out_w: cols_ax.out,
    }
}

/// im2col of a single-sample tensor: one [`WindowMatrix`] per channel.
pub fn im2col(t: &Tensor, spec: &PoolSpec, pad_value: f64) -> Result<Vec<WindowMatrix>> {
    let [n, c, h, w] = t.dims4();
    if n != 1 {
        return Err(Error::shape(t.shape(), "im2col expects a single sample (C, H, W)"));
    }
    let (rows_ax, cols_ax) = spec.axes(h, w)?;
    Ok(t.data()
        .chunks_exact(h * w)
        .take(c)
        .map(|plane| gather(plane, w, &rows_ax, &cols_ax, pad_value))
        .collect())
}

/// Adds every window gradient of `grad` back onto its input position in
/// `out` (an `h x w` plane). Padding positions are dropped.
pub fn col2im_plane(grad: &WindowMatrix, spec: &PoolSpec, h: usize, w: usize, out: &mut [f64]) -> Result<()> {
    let (rows_ax, cols_ax) = spec.axes(h, w)?;
    scatter(grad, &rows_ax, &cols_ax, w, out)
}

pub(crate) fn scatter(grad: &WindowMatrix, rows_ax: &AxisTaps, cols_ax: &AxisTaps, w: usize, out: &mut [f64]) -> Result<()> {
    let expected_cols = rows_ax.kernel * cols_ax.kernel;
    if grad.out_h != rows_ax.out || grad.out_w != cols_ax.out || grad.cols != expected_cols
        || grad.data.len() != grad.rows * grad.cols || grad.rows != rows_ax.out * cols_ax.out
    {
        return Err(Error::Geometry(format!(
            "window matrix {}x{} over {}x{} outputs does not match geometry ({}x{} outputs, {} taps)",
            grad.rows, grad.cols, grad.out_h, grad.out_w, rows_ax.out, cols_ax.out, expected_cols
        )));
    }
    let mut values = grad.data.iter();
    for oh in 0..rows_ax.out {
        for ow in 0..cols_ax.out {
            for &ih in rows_ax.taps(oh) {
                for &iw in cols_ax.taps(ow) {
                    let g = *values.next().expect("length checked");
                    if let (Some(ih), Some(iw)) = (ih, iw) {
                        out[ih * w + iw] += g;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Adjoint of [`im2col`]: scatter-adds per-channel window gradients into a
/// `(C, H, W)` tensor.
pub fn col2im_accumulate(grads: &[WindowMatrix], spec: &PoolSpec, h: usize, w: usize) -> Result<Tensor> {
    if grads.is_empty() {
        return Err(Error::Empty("col2im needs at least one channel"));
    }
    let (rows_ax, cols_ax) = spec.axes(h, w)?;
    let mut out = Tensor::zeros(vec![grads.len(), h, w])?;
    for (g, plane) in grads.iter().zip(out.data_mut().chunks_exact_mut(h * w)) {
        scatter(g, &rows_ax, &cols_ax, w, plane)?;
    }
    Ok(out)
}
