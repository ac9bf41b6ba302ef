//! Dense NHWC kernels shared by the encoders and the decoder.
//!
//! Tensors are `Array4<f64>` laid out batch × height × width × channels in
//! standard (row-major) order. Convolution weights are stored as a
//! `[kernel * kernel * c_in, c_out]` matrix whose rows run over
//! `(ky, kx, c_in)`, so a convolution is an im2col followed by one GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

fn im2col(
    x: ArrayView3<'_, f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
    cols: &mut ArrayViewMut2<'_, f64>,
) {
    let (h, w, c) = x.dim();
    let oh = conv_out_len(h, kernel, stride, pad);
    let ow = conv_out_len(w, kernel, stride, pad);
    debug_assert_eq!(cols.dim(), (oh * ow, kernel * kernel * c));
    cols.fill(0.0);
    let xs = x.as_slice().expect("standard layout input");
    for oy in 0..oh {
        for ox in 0..ow {
            let mut row = cols.row_mut(oy * ow + ox);
            let row = row.as_slice_mut().expect("contiguous row");
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = (ky * kernel + kx) * c;
                    row[dst..dst + c].copy_from_slice(&xs[src..src + c]);
                }
            }
        }
    }
}

/// Zero-padded 2-D convolution without bias.
pub fn conv2d(
    x: &Array4<f64>,
    weight: &Array2<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array4<f64> {
    let (b, h, w, c) = x.dim();
    assert_eq!(weight.nrows(), kernel * kernel * c, "conv weight / input width mismatch");
    let cout = weight.ncols();
    let oh = conv_out_len(h, kernel, stride, pad);
    let ow = conv_out_len(w, kernel, stride, pad);

    if kernel == 1 && stride == 1 && pad == 0 {
        let flat = x
            .view()
            .into_shape_with_order((b * h * w, c))
            .expect("standard layout");
        let out = flat.dot(weight);
        return out.into_shape_with_order((b, h, w, cout)).expect("reshape");
    }

    let mut out = Array4::<f64>::zeros((b, oh, ow, cout));
    let mut cols = Array2::<f64>::zeros((oh * ow, kernel * kernel * c));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        let xb = xb.as_standard_layout();
        im2col(xb.view(), kernel, stride, pad, &mut cols.view_mut());
        let mut ob = out.index_axis_mut(Axis(0), bi);
        let mut ob = ob
            .view_mut()
            .into_shape_with_order((oh * ow, cout))
            .expect("standard layout");
        general_mat_mul(1.0, &cols, weight, 0.0, &mut ob);
    }
    out
}

/// Gradient of a bias-free convolution with respect to its weight matrix.
pub fn conv2d_weight_grad(
    x: &Array4<f64>,
    dout: &Array4<f64>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Array2<f64> {
    let (b, h, w, c) = x.dim();
    let (_, oh, ow, cout) = dout.dim();
    let mut grad = Array2::<f64>::zeros((kernel * kernel * c, cout));

    if kernel == 1 && stride == 1 && pad == 0 {
        let flat = x
            .view()
            .into_shape_with_order((b * h * w, c))
            .expect("standard layout");
        let dflat = dout
            .view()
            .into_shape_with_order((b * oh * ow, cout))
            .expect("standard layout");
        general_mat_mul(1.0, &flat.t(), &dflat, 0.0, &mut grad);
        return grad;
    }

    let mut cols = Array2::<f64>::zeros((oh * ow, kernel * kernel * c));
    for bi in 0..b {
        let xb = x.index_axis(Axis(0), bi);
        let xb = xb.as_standard_layout();
        im2col(xb.view(), kernel, stride, pad, &mut cols.view_mut());
        let db = dout.index_axis(Axis(0), bi);
        let db = db
            .into_shape_with_order((oh * ow, cout))
            .expect("standard layout");
        general_mat_mul(1.0, &cols.t(), &db, 1.0, &mut grad);
    }
    grad
}

/// Input gradient of a 1×1 convolution.
pub fn conv1x1_input_grad(dout: &Array4<f64>, weight: &Array2<f64>) -> Array4<f64> {
    let (b, h, w, cout) = dout.dim();
    let flat = dout
        .view()
        .into_shape_with_order((b * h * w, cout))
        .expect("standard layout");
    let dx = flat.dot(&weight.t());
    let cin = weight.nrows();
    dx.into_shape_with_order((b, h, w, cin)).expect("reshape")
}

/// Whether batch-norm layers normalize with batch statistics (and update
/// their running estimates) or with the frozen running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Saved activations needed by [`BatchNorm::backward`].
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes the rows of `x` (one row per spatial sample, one column per
    /// channel) with the frozen running statistics.
    pub fn forward_eval(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = Zip::from(&self.gamma)
            .and(&self.running_var)
            .map_collect(|g, v| g / (v + self.eps).sqrt());
        let shift = Zip::from(&self.beta)
            .and(&self.running_mean)
            .and(&scale)
            .map_collect(|b, m, s| b - m * s);
        let mut y = x.to_owned();
        for mut row in y.rows_mut() {
            Zip::from(&mut row)
                .and(&scale)
                .and(&shift)
                .for_each(|v, s, t| *v = *v * s + t);
        }
        y
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates (unbiased variance, exponential moving average).
    pub fn forward_train(&mut self, x: ArrayView2<'_, f64>) -> (Array2<f64>, BnCache) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            Zip::from(&mut var)
                .and(&row)
                .and(&mean)
                .for_each(|v, xi, m| *v += (xi - m) * (xi - m));
        }
        var /= n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());

        let mut xhat = x.to_owned();
        for mut row in xhat.rows_mut() {
            Zip::from(&mut row)
                .and(&mean)
                .and(&inv_std)
                .for_each(|v, m, s| *v = (*v - m) * s);
        }
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            Zip::from(&mut row)
                .and(&self.gamma)
                .and(&self.beta)
                .for_each(|v, g, b| *v = *v * g + b);
        }

        let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, b| *r = (1.0 - m) * *r + m * b);
        Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, b| *r = (1.0 - m) * *r + m * b * unbiased);

        (y, BnCache { xhat, inv_std })
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(
        &self,
        dy: ArrayView2<'_, f64>,
        cache: &BnCache,
    ) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
        let mean_dy = &dbeta / n;
        let mean_dy_xhat = &dgamma / n;
        let mut dx = dy.to_owned();
        for (mut row, xrow) in dx.rows_mut().into_iter().zip(cache.xhat.rows()) {
            Zip::from(&mut row)
                .and(&xrow)
                .and(&self.gamma)
                .and(&cache.inv_std)
                .and(&mean_dy)
                .and(&mean_dy_xhat)
                .for_each(|d, xh, g, s, mdy, mdx| {
                    *d = g * s * (*d - mdy - xh * mdx);
                });
        }
        (dx, dgamma, dbeta)
    }
}

pub fn relu_inplace(x: &mut Array4<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward_inplace(grad: &mut Array4<f64>, output: &Array4<f64>) {
    Zip::from(grad).and(output).for_each(|g, &y| {
        if y <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Parameter-free resampling kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

type Taps = Vec<[(usize, f64); 2]>;

/// Per-output-index source taps along one axis. Bilinear uses half-pixel
/// centers (`align_corners = false`); nearest picks `floor(o * in / out)`.
fn axis_taps(in_len: usize, out_len: usize, mode: Interpolation) -> Taps {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| match mode {
            Interpolation::Nearest => {
                let src = ((o as f64 * scale).floor() as usize).min(in_len - 1);
                [(src, 1.0), (src, 0.0)]
            }
            Interpolation::Bilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                let l1 = src - i0 as f64;
                [(i0, 1.0 - l1), (i1, l1)]
            }
        })
        .collect()
}

/// Resizes the two spatial axes of an NHWC tensor.
pub fn resize(x: &Array4<f64>, out_h: usize, out_w: usize, mode: Interpolation) -> Array4<f64> {
    let (b, h, w, c) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let ty = axis_taps(h, out_h, mode);
    let tx = axis_taps(w, out_w, mode);
    let mut out = Array4::<f64>::zeros((b, out_h, out_w, c));
    let xs = x.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for bi in 0..b {
        for (oy, ytaps) in ty.iter().enumerate() {
            for (ox, xtaps) in tx.iter().enumerate() {
                let dst = ((bi * out_h + oy) * out_w + ox) * c;
                for &(iy, wy) in ytaps {
                    if wy == 0.0 {
                        continue;
                    }
                    for &(ix, wx) in xtaps {
                        let wgt = wy * wx;
                        if wgt == 0.0 {
                            continue;
                        }
                        let src = ((bi * h + iy) * w + ix) * c;
                        for k in 0..c {
                            os[dst + k] += wgt * xs[src + k];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`resize`]: maps a gradient at the output size back to the
/// input size `(in_h, in_w)`.
pub fn resize_backward(
    dy: &Array4<f64>,
    in_h: usize,
    in_w: usize,
    mode: Interpolation,
) -> Array4<f64> {
    let (b, out_h, out_w, c) = dy.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return dy.clone();
    }
    let ty = axis_taps(in_h, out_h, mode);
    let tx = axis_taps(in_w, out_w, mode);
    let mut dx = Array4::<f64>::zeros((b, in_h, in_w, c));
    let ds = dy.as_slice().expect("standard layout");
    let xs = dx.as_slice_mut().expect("standard layout");
    for bi in 0..b {
        for (oy, ytaps) in ty.iter().enumerate() {
            for (ox, xtaps) in tx.iter().enumerate() {
                let src = ((bi * out_h + oy) * out_w + ox) * c;
                for &(iy, wy) in ytaps {
                    if wy == 0.0 {
                        continue;
                    }
                    for &(ix, wx) in xtaps {
                        let wgt = wy * wx;
                        if wgt == 0.0 {
                            continue;
                        }
                        let dst = ((bi * in_h + iy) * in_w + ix) * c;
                        for k in 0..c {
                            xs[dst + k] += wgt * ds[src + k];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Non-overlapping average pooling with window = stride = `factor`.
pub fn avg_pool(x: &Array4<f64>, factor: usize) -> Array4<f64> {
    let (b, h, w, c) = x.dim();
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Array4::<f64>::zeros((b, oh, ow, c));
    let norm = 1.0 / (factor * factor) as f64;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..factor {
                    for dx in 0..factor {
                        let src = x.slice(ndarray::s![bi, oy * factor + dy, ox * factor + dx, ..]);
                        let mut dst = out.slice_mut(ndarray::s![bi, oy, ox, ..]);
                        dst.scaled_add(norm, &src);
                    }
                }
            }
        }
    }
    out
}

/// Row-major `[rows, cols]` view of an NHWC tensor, one row per pixel.
pub fn as_rows(x: &Array4<f64>) -> ArrayView2<'_, f64> {
    let (b, h, w, c) = x.dim();
    x.view()
        .into_shape_with_order((b * h * w, c))
        .expect("standard layout")
}

pub fn from_rows(rows: Array2<f64>, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    rows.into_shape_with_order(shape).expect("row count matches shape")
}
