use std::collections::BTreeMap;

use super::LayerGrads;
use crate::error::{Error, Result};
use crate::tensor::{gemm, Mat, Tensor};

/// Valid (unpadded) 2-D cross-correlation with per-output-channel bias.
///
/// Weights are `[out_ch, in_ch, kh, kw]`; input and output are NCHW.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dValid<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
    pub stride: (usize, usize),
}

struct Geometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// One input channel and one kernel row: every patch matrix is a
    /// strided view of an input row, so no unrolling is needed.
    fn row_kernel(&self) -> bool {
        self.ci == 1 && self.kh == 1
    }
}

/// Output extent of a valid window sweep.
pub fn valid_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > input {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

impl<'a> Conv2dValid<'a> {
    pub fn new(weight: &'a Tensor, bias: &'a Tensor, stride: (usize, usize)) -> Self {
        Self {
            weight,
            bias,
            stride,
        }
    }

    /// `dst = bias + W · patches(x_s)` for one sample.
    fn sample_forward(&self, g: &Geometry, x_s: &[f64], cols: &mut [f64], dst: &mut [f64]) {
        let (k, p) = (g.patch_len(), g.positions());
        for (o, row) in dst.chunks_exact_mut(p).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        let w = Mat::row_major(self.weight.data(), k);
        if g.row_kernel() {
            for y in 0..g.oh {
                let src = &x_s[y * self.stride.0 * g.w..][..g.w];
                gemm(g.co, k, g.ow, 1.0, w, Mat::windows(src, self.stride.1), 1.0, &mut dst[y * g.ow..], p);
            }
        } else {
            im2col(x_s, g, self.stride, cols);
            gemm(g.co, k, p, 1.0, w, Mat::row_major(cols, p), 1.0, dst, p);
        }
    }

    /// `grad_w += go_s · patches(x_s)ᵀ` for one sample.
    fn sample_weight_grad(&self, g: &Geometry, x_s: &[f64], go_s: &[f64], cols: &mut [f64], grad_w: &mut [f64]) {
        let (k, p) = (g.patch_len(), g.positions());
        if g.row_kernel() {
            for y in 0..g.oh {
                let src = &x_s[y * self.stride.0 * g.w..][..g.w];
                let b = Mat {
                    data: src,
                    row_stride: self.stride.1 as isize,
                    col_stride: 1,
                };
                gemm(g.co, g.ow, k, 1.0, Mat::strided(go_s, y * g.ow, p), b, 1.0, grad_w, k);
            }
        } else {
            im2col(x_s, g, self.stride, cols);
            gemm(g.co, p, k, 1.0, Mat::row_major(go_s, p), Mat::transposed(cols, p), 1.0, grad_w, k);
        }
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        let &[n, ci, h, w] = x.shape() else {
            return Err(Error::shape(format!("conv input must be NCHW, got {:?}", x.shape())));
        };
        let &[co, wci, kh, kw] = self.weight.shape() else {
            return Err(Error::shape(format!(
                "conv weight must be [out, in, kh, kw], got {:?}",
                self.weight.shape()
            )));
        };
        if wci != ci {
            return Err(Error::shape(format!(
                "conv weight expects {wci} input channels, input has {ci}"
            )));
        }
        if self.bias.shape() != [co] {
            return Err(Error::shape(format!(
                "conv bias {:?} does not match {co} output channels",
                self.bias.shape()
            )));
        }
        let (sh, sw) = self.stride;
        let oh = valid_extent(h, kh, sh);
        let ow = valid_extent(w, kw, sw);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::shape(format!(
                "kernel ({kh},{kw}) stride ({sh},{sw}) does not fit input ({h},{w})"
            )));
        };
        Ok(Geometry {
            n,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            oh,
            ow,
        })
    }

    pub fn output_shape(&self, x: &Tensor) -> Result<[usize; 4]> {
        let g = self.geometry(x)?;
        Ok([g.n, g.co, g.oh, g.ow])
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let (k, p) = (g.patch_len(), g.positions());
        let mut out = Tensor::zeros(&[g.n, g.co, g.oh, g.ow]);
        let mut cols = if g.row_kernel() { Vec::new() } else { vec![0.0; k * p] };
        let in_len = g.ci * g.h * g.w;
        let out_len = g.co * p;
        for s in 0..g.n {
            let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
            self.sample_forward(&g, &x.data()[s * in_len..(s + 1) * in_len], &mut cols, dst);
        }
        Ok(out)
    }

    /// Gradients of the forward map. The input gradient is skipped when
    /// `want_input` is false (first layer during training).
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor, want_input: bool) -> Result<LayerGrads> {
        let g = self.geometry(x)?;
        if grad_out.shape() != [g.n, g.co, g.oh, g.ow] {
            return Err(Error::shape(format!(
                "conv grad_out {:?} does not match output {:?}",
                grad_out.shape(),
                [g.n, g.co, g.oh, g.ow]
            )));
        }
        let (k, p) = (g.patch_len(), g.positions());
        let in_len = g.ci * g.h * g.w;
        let out_len = g.co * p;
        let mut grad_w = Tensor::zeros(self.weight.shape());
        let mut grad_b = Tensor::zeros(&[g.co]);
        let mut grad_x = want_input.then(|| Tensor::zeros(x.shape()));
        let mut cols = if g.row_kernel() { Vec::new() } else { vec![0.0; k * p] };
        let mut dcols = if want_input { vec![0.0; k * p] } else { Vec::new() };
        for s in 0..g.n {
            let go = &grad_out.data()[s * out_len..(s + 1) * out_len];
            for (o, row) in go.chunks_exact(p).enumerate() {
                grad_b.data_mut()[o] += row.iter().sum::<f64>();
            }
            self.sample_weight_grad(&g, &x.data()[s * in_len..(s + 1) * in_len], go, &mut cols, grad_w.data_mut());
            if let Some(gx) = grad_x.as_mut() {
                gemm(
                    k,
                    g.co,
                    p,
                    1.0,
                    Mat::transposed(self.weight.data(), k),
                    Mat::row_major(go, p),
                    0.0,
                    &mut dcols,
                    p,
                );
                col2im_add(
                    &dcols,
                    &g,
                    self.stride,
                    &mut gx.data_mut()[s * in_len..(s + 1) * in_len],
                );
            }
        }
        let mut grad_params = BTreeMap::new();
        grad_params.insert("weight", grad_w);
        grad_params.insert("bias", grad_b);
        Ok(LayerGrads {
            grad_input: grad_x,
            grad_params,
        })
    }
    /// Fused `avgpool_width(leaky_relu(conv(x)), window)`.
    ///
    /// Returns `(pooled, pre_activation)`; the pre-activation is what
    /// [`Conv2dValid::backward_act_pool`] needs. Working one sample at a time
    /// keeps the activation in cache instead of materializing it.
    pub fn forward_act_pool(&self, x: &Tensor, slope: f64, window: usize) -> Result<(Tensor, Tensor)> {
        let g = self.geometry(x)?;
        if window == 0 || window > g.ow {
            return Err(Error::shape(format!("pool window {window} invalid for width {}", g.ow)));
        }
        let (k, p) = (g.patch_len(), g.positions());
        let pw = g.ow / window;
        let scale = 1.0 / window as f64;
        let mut pre = Tensor::zeros(&[g.n, g.co, g.oh, g.ow]);
        let mut pooled = Vec::with_capacity(g.n * g.co * g.oh * pw);
        let mut cols = if g.row_kernel() { Vec::new() } else { vec![0.0; k * p] };
        let in_len = g.ci * g.h * g.w;
        let out_len = g.co * p;
        for s in 0..g.n {
            let dst = &mut pre.data_mut()[s * out_len..(s + 1) * out_len];
            self.sample_forward(&g, &x.data()[s * in_len..(s + 1) * in_len], &mut cols, dst);
            for row in dst.chunks_exact(g.ow) {
                pooled.extend(row[..pw * window].chunks_exact(window).map(|win| {
                    win.iter().map(|&v| if v > 0.0 { v } else { slope * v }).sum::<f64>() * scale
                }));
            }
        }
        Ok((Tensor::from_vec(&[g.n, g.co, g.oh, pw], pooled)?, pre))
    }

    /// Backward of [`Conv2dValid::forward_act_pool`].
    pub fn backward_act_pool(
        &self,
        x: &Tensor,
        pre: &Tensor,
        grad_pooled: &Tensor,
        slope: f64,
        window: usize,
        want_input: bool,
    ) -> Result<LayerGrads> {
        let g = self.geometry(x)?;
        if pre.shape() != [g.n, g.co, g.oh, g.ow] {
            return Err(Error::shape("pre-activation does not match conv output"));
        }
        let pw = g.ow / window.max(1);
        if window == 0 || grad_pooled.shape() != [g.n, g.co, g.oh, pw] {
            return Err(Error::shape(format!(
                "pooled grad {:?} does not match [{}, {}, {}, {pw}]",
                grad_pooled.shape(),
                g.n,
                g.co,
                g.oh
            )));
        }
        let (k, p) = (g.patch_len(), g.positions());
        let in_len = g.ci * g.h * g.w;
        let out_len = g.co * p;
        let scale = 1.0 / window as f64;
        let mut grad_w = Tensor::zeros(self.weight.shape());
        let mut grad_b = Tensor::zeros(&[g.co]);
        let mut grad_x = want_input.then(|| Tensor::zeros(x.shape()));
        let mut cols = if g.row_kernel() { Vec::new() } else { vec![0.0; k * p] };
        let mut dcols = if want_input { vec![0.0; k * p] } else { Vec::new() };
        let mut go = vec![0.0; out_len];
        for s in 0..g.n {
            let pre_s = &pre.data()[s * out_len..(s + 1) * out_len];
            let gp_s = &grad_pooled.data()[s * g.co * g.oh * pw..(s + 1) * g.co * g.oh * pw];
            for ((dst, src), gp) in go.chunks_exact_mut(g.ow).zip(pre_s.chunks_exact(g.ow)).zip(gp_s.chunks_exact(pw)) {
                for ((dw, sw), &gv) in dst.chunks_exact_mut(window).zip(src.chunks_exact(window)).zip(gp) {
                    for (d, &v) in dw.iter_mut().zip(sw) {
                        *d = if v > 0.0 { gv * scale } else { slope * gv * scale };
                    }
                }
                dst[pw * window..].fill(0.0);
            }
            for (o, row) in go.chunks_exact(p).enumerate() {
                grad_b.data_mut()[o] += row.iter().sum::<f64>();
            }
            self.sample_weight_grad(&g, &x.data()[s * in_len..(s + 1) * in_len], &go, &mut cols, grad_w.data_mut());
            if let Some(gx) = grad_x.as_mut() {
                gemm(k, g.co, p, 1.0, Mat::transposed(self.weight.data(), k), Mat::row_major(&go, p), 0.0, &mut dcols, p);
                col2im_add(&dcols, &g, self.stride, &mut gx.data_mut()[s * in_len..(s + 1) * in_len]);
            }
        }
        let mut grad_params = BTreeMap::new();
        grad_params.insert("weight", grad_w);
        grad_params.insert("bias", grad_b);
        Ok(LayerGrads {
            grad_input: grad_x,
            grad_params,
        })
    }
}

/// Unrolls one sample `[ci, h, w]` into patch rows `[ci*kh*kw, oh*ow]`.
fn im2col(x: &[f64], g: &Geometry, (sh, sw): (usize, usize), cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.ci {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = &mut cols[r * p..(r + 1) * p];
                for y in 0..g.oh {
                    let src = &x[(c * g.h + y * sh + i) * g.w..][..g.w];
                    let dst = &mut row[y * g.ow..(y + 1) * g.ow];
                    if sw == 1 {
                        dst.copy_from_slice(&src[j..j + g.ow]);
                    } else {
                        for (xo, d) in dst.iter_mut().enumerate() {
                            *d = src[xo * sw + j];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &Geometry, (sh, sw): (usize, usize), x: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.ci {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let r = (c * g.kh + i) * g.kw + j;
                let row = &cols[r * p..(r + 1) * p];
                for y in 0..g.oh {
                    let dst = &mut x[(c * g.h + y * sh + i) * g.w..][..g.w];
                    let src = &row[y * g.ow..(y + 1) * g.ow];
                    for (xo, v) in src.iter().enumerate() {
                        dst[xo * sw + j] += v;
                    }
                }
            }
        }
    }
}
