use rand::Rng;

use super::graph::{batch_of, Op};
use super::{gemm, Graph, Mode, Scalar, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPlacement {
    /// Both sides.
    Symmetric,
    /// Top rows and left columns only.
    Leading,
}

pub(crate) struct Conv2dCtx {
    input: Var,
    kernel: Var,
    bias: Var,
    geo: ConvGeometry,
}

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    sv: usize,
    sh: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }
}

fn same_out(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(len);
    (out, total / 2)
}

/// Images (leading-axis slices) per im2col chunk, keeping the patch buffer
/// a few megabytes at most.
fn chunk_images(g: &ConvGeometry) -> usize {
    (2048 / (g.ho * g.wo).max(1)).max(1)
}

/// Patch matrix for images `n0..n1`.
fn im2col<S: Scalar>(x: &[S], g: &ConvGeometry, n0: usize, n1: usize) -> Vec<S> {
    let patch = g.patch();
    let mut cols = vec![S::zero(); (n1 - n0) * g.ho * g.wo * patch];
    for n in n0..n1 {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((n - n0) * g.ho + oy) * g.wo + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.sv + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.sh + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
            }
        }
    }
    cols
}

/// Scatters the patch matrix of images `n0..n1` back onto `x`, adding.
fn col2im_add<S: Scalar>(cols: &[S], g: &ConvGeometry, n0: usize, n1: usize, x: &mut [S]) {
    let patch = g.patch();
    for n in n0..n1 {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = ((n - n0) * g.ho + oy) * g.wo + ox;
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.sv + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.sh + kx) as isize - g.pad_left as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((n * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        for c in 0..g.cin {
                            x[dst + c] = x[dst + c] + src[off + c];
                        }
                    }
                }
            }
        }
    }
}

fn column_sums<S: Scalar>(m: &[S], cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); cols];
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

impl Conv2dCtx {
    pub(crate) fn backward<S: Scalar>(&self, g: &Graph<S>, gy: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let geo = &self.geo;
        let x = g.value(self.input).data();
        let k = g.value(self.kernel).data();
        let mut out = Vec::with_capacity(3);
        let patch = geo.patch();
        let (need_k, need_x) = (g.requires_grad(self.kernel), g.requires_grad(self.input));
        let mut dk = vec![S::zero(); if need_k { patch * geo.cout } else { 0 }];
        let mut dx = vec![S::zero(); if need_x { x.len() } else { 0 }];
        if need_k || need_x {
            let per = geo.ho * geo.wo;
            let step = chunk_images(geo);
            let mut n0 = 0;
            while n0 < geo.n {
                let n1 = (n0 + step).min(geo.n);
                let rows = (n1 - n0) * per;
                let gy_c = &gy.data()[n0 * per * geo.cout..n1 * per * geo.cout];
                if need_k {
                    let cols = im2col(x, geo, n0, n1);
                    gemm(true, false, patch, geo.cout, rows, S::one(), &cols, gy_c, S::one(), &mut dk);
                }
                if need_x {
                    let mut dcols = vec![S::zero(); rows * patch];
                    gemm(false, true, rows, patch, geo.cout, S::one(), gy_c, k, S::zero(), &mut dcols);
                    col2im_add(&dcols, geo, n0, n1, &mut dx);
                }
                n0 = n1;
            }
        }
        if need_k {
            out.push((self.kernel, Tensor::from_parts(g.shape(self.kernel).to_vec(), dk)));
        }
        if g.requires_grad(self.bias) {
            out.push((
                self.bias,
                Tensor::from_parts(vec![geo.cout], column_sums(gy.data(), geo.cout)),
            ));
        }
        if need_x {
            out.push((self.input, Tensor::from_parts(g.shape(self.input).to_vec(), dx)));
        }
        out
    }
}

/// Batch statistics from a train-mode batch normalization, to be folded into
/// the running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> BatchNormStats<S> {
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn fold_into(&self, running_mean: &mut Tensor<S>, running_var: &mut Tensor<S>, momentum: S) {
        let keep = S::one() - momentum;
        for (r, &b) in running_mean.data_mut().iter_mut().zip(&self.mean) {
            *r = momentum * *r + keep * b;
        }
        for (r, &b) in running_var.data_mut().iter_mut().zip(&self.var) {
            *r = momentum * *r + keep * b;
        }
    }
}

pub(crate) struct BatchNormCtx<S> {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    train: bool,
}

impl<S: Scalar> BatchNormCtx<S> {
    pub(crate) fn backward(&self, g: &Graph<S>, gy: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let c = self.inv_std.len();
        let m = gy.len() / c;
        let gamma = g.value(self.gamma).data();
        let mut sum_dy = vec![S::zero(); c];
        let mut sum_dy_xhat = vec![S::zero(); c];
        for (dy, xh) in gy.data().chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
            for ch in 0..c {
                sum_dy[ch] = sum_dy[ch] + dy[ch];
                sum_dy_xhat[ch] = sum_dy_xhat[ch] + dy[ch] * xh[ch];
            }
        }
        let mut out = Vec::with_capacity(3);
        if g.requires_grad(self.input) {
            let mf = S::from_usize(m).unwrap();
            let scale: Vec<S> = (0..c)
                .map(|ch| {
                    if self.train {
                        gamma[ch] * self.inv_std[ch] / mf
                    } else {
                        gamma[ch] * self.inv_std[ch]
                    }
                })
                .collect();
            let mut dx = Vec::with_capacity(gy.len());
            for (dy, xh) in gy.data().chunks_exact(c).zip(self.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    dx.push(if self.train {
                        scale[ch] * (mf * dy[ch] - sum_dy[ch] - xh[ch] * sum_dy_xhat[ch])
                    } else {
                        scale[ch] * dy[ch]
                    });
                }
            }
            out.push((self.input, Tensor::from_parts(g.shape(self.input).to_vec(), dx)));
        }
        if g.requires_grad(self.gamma) {
            out.push((self.gamma, Tensor::from_parts(vec![c], sum_dy_xhat)));
        }
        if g.requires_grad(self.beta) {
            out.push((self.beta, Tensor::from_parts(vec![c], sum_dy)));
        }
        out
    }
}

pub(crate) fn dense_backward<S: Scalar>(
    g: &Graph<S>,
    input: Var,
    weights: Var,
    bias: Var,
    gy: &Tensor<S>,
) -> Vec<(Var, Tensor<S>)> {
    let w = g.value(weights);
    let (d, k) = (w.shape()[0], w.shape()[1]);
    let rows = gy.len() / k;
    let mut out = Vec::with_capacity(3);
    if g.requires_grad(weights) {
        let mut dw = vec![S::zero(); d * k];
        gemm(true, false, d, k, rows, S::one(), g.value(input).data(), gy.data(), S::zero(), &mut dw);
        out.push((weights, Tensor::from_parts(vec![d, k], dw)));
    }
    if g.requires_grad(bias) {
        out.push((bias, Tensor::from_parts(vec![k], column_sums(gy.data(), k))));
    }
    if g.requires_grad(input) {
        let mut dx = vec![S::zero(); rows * d];
        gemm(false, true, rows, d, k, S::one(), gy.data(), w.data(), S::zero(), &mut dx);
        out.push((input, Tensor::from_parts(g.shape(input).to_vec(), dx)));
    }
    out
}

fn spatial(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    if shape.len() < 3 {
        return Err(Error::dim(format!("{what} expects [.., H, W, C], got {shape:?}")));
    }
    let r = shape.len();
    Ok((batch_of(shape, 3), shape[r - 3], shape[r - 2], shape[r - 1]))
}

pub(crate) fn upsample_backward<S: Scalar>(in_shape: &[usize], scale: (usize, usize), gy: &Tensor<S>) -> Vec<S> {
    let (n, h, w, c) = spatial(in_shape, "upsample").expect("validated in forward");
    let (ho, wo) = (h * scale.0, w * scale.1);
    let mut dx = vec![S::zero(); n * h * w * c];
    let g = gy.data();
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let src = ((b * ho + oy) * wo + ox) * c;
                let dst = ((b * h + oy / scale.0) * w + ox / scale.1) * c;
                for ch in 0..c {
                    dx[dst + ch] = dx[dst + ch] + g[src + ch];
                }
            }
        }
    }
    dx
}

pub(crate) fn zero_pad_backward<S: Scalar>(
    in_shape: &[usize],
    out_shape: &[usize],
    top: usize,
    left: usize,
    gy: &Tensor<S>,
) -> Vec<S> {
    let (n, h, w, c) = spatial(in_shape, "zero_pad").expect("validated in forward");
    let (_, ho, wo, _) = spatial(out_shape, "zero_pad").expect("validated in forward");
    let mut dx = Vec::with_capacity(n * h * w * c);
    for b in 0..n {
        for y in 0..h {
            let src = ((b * ho + y + top) * wo + left) * c;
            dx.extend_from_slice(&gy.data()[src..src + w * c]);
        }
    }
    dx
}

impl<S: Scalar> Graph<S> {
    /// Time-distributed 2D convolution over `[.., H, W, Cin]` with a
    /// `[kh, kw, Cin, Cout]` kernel. All leading axes are treated as batch.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Var> {
        let (n, h, w, cin) = spatial(self.shape(input), "conv2d")?;
        let ks = self.shape(kernel);
        if ks.len() != 4 {
            return Err(Error::dim(format!("conv2d kernel must be rank 4, got {ks:?}")));
        }
        let (kh, kw, kcin, cout) = (ks[0], ks[1], ks[2], ks[3]);
        if kcin != cin {
            return Err(Error::dim(format!(
                "conv2d kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::dim(format!(
                "conv2d bias must be [{cout}], got {:?}",
                self.shape(bias)
            )));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Same => {
                let (ho, pt) = same_out(h, kh, stride.0);
                let (wo, pl) = same_out(w, kw, stride.1);
                (ho, wo, pt, pl)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::dim(format!(
                        "valid conv2d needs at least {kh}x{kw} input, got {h}x{w}"
                    )));
                }
                ((h - kh) / stride.0 + 1, (w - kw) / stride.1 + 1, 0, 0)
            }
        };
        let geo = ConvGeometry {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            ho,
            wo,
            sv: stride.0,
            sh: stride.1,
            pad_top,
            pad_left,
        };
        let mut y = vec![S::zero(); geo.rows() * cout];
        let b = self.value(bias).data();
        for row in y.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
        let (x, kd) = (self.value(input).data(), self.value(kernel).data());
        let per = ho * wo;
        let step = chunk_images(&geo);
        let mut n0 = 0;
        while n0 < n {
            let n1 = (n0 + step).min(n);
            let cols = im2col(x, &geo, n0, n1);
            let y_c = &mut y[n0 * per * cout..n1 * per * cout];
            gemm(false, false, (n1 - n0) * per, cout, geo.patch(), S::one(), &cols, kd, S::one(), y_c);
            n0 = n1;
        }
        let mut shape = self.shape(input).to_vec();
        let r = shape.len();
        shape[r - 3] = ho;
        shape[r - 2] = wo;
        shape[r - 1] = cout;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, y),
            rg,
            Op::Conv2d(Conv2dCtx {
                input,
                kernel,
                bias,
                geo,
            }),
        ))
    }

    /// Per-channel batch normalization; the channel axis is the last one.
    ///
    /// In train mode the batch statistics are returned so the caller can
    /// update its running statistics.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<S>,
        running_var: &Tensor<S>,
        mode: Mode,
    ) -> Result<(Var, Option<BatchNormStats<S>>)> {
        let c = *self
            .shape(input)
            .last()
            .ok_or_else(|| Error::dim("batch_norm on rank-0 input"))?;
        for (name, t) in [
            ("gamma", self.shape(gamma)),
            ("beta", self.shape(beta)),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if t != [c] {
                return Err(Error::dim(format!("batch_norm {name} must be [{c}], got {t:?}")));
            }
        }
        let x = self.value(input).data();
        let m = x.len() / c;
        let eps = S::lit(BN_EPSILON);
        let (mean, var, stats) = match mode {
            Mode::Train => {
                let mf = S::from_usize(m).unwrap();
                let mut mean = vec![S::zero(); c];
                for row in x.chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m = *m + v;
                    }
                }
                mean.iter_mut().for_each(|v| *v = *v / mf);
                let mut var = vec![S::zero(); c];
                for row in x.chunks_exact(c) {
                    for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                        let d = v - m;
                        *s = *s + d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / mf);
                let stats = BatchNormStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            Mode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec(), None),
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for row in x.chunks_exact(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                y.push(gm[ch] * xh + bt[ch]);
            }
        }
        let shape = self.shape(input).to_vec();
        let rg = self.any_grad(&[input, gamma, beta]);
        let v = self.push(
            Tensor::from_parts(shape, y),
            rg,
            Op::BatchNorm(Box::new(BatchNormCtx {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            })),
        );
        Ok((v, stats))
    }

    pub fn leaky_relu(&mut self, input: Var, alpha: S) -> Var {
        let y = self
            .value(input)
            .data()
            .iter()
            .map(|&x| if x >= S::zero() { x } else { alpha * x })
            .collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Tensor::from_parts(shape, y), rg, Op::LeakyRelu { input, alpha })
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train
    /// time, so infer mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(input);
        }
        let scale = S::lit(1.0 / (1.0 - rate));
        // Drop when a uniform u32 falls below rate · 2^32.
        let cut = (rate * 4_294_967_296.0) as u64;
        let mut draws = vec![0u32; self.value(input).len()];
        rng.fill(draws.as_mut_slice());
        let mask: Vec<S> = draws
            .iter()
            .map(|&u| if (u as u64) < cut { S::zero() } else { scale })
            .collect();
        let y = self
            .value(input)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::Dropout { input, mask }))
    }

    /// Affine map over the last axis: `[.., D] x [D, K] + [K] -> [.., K]`.
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let ws = self.shape(weights);
        if ws.len() != 2 {
            return Err(Error::dim(format!("dense weights must be rank 2, got {ws:?}")));
        }
        let (d, k) = (ws[0], ws[1]);
        let is = self.shape(input);
        if is.last() != Some(&d) {
            return Err(Error::dim(format!("dense expects last axis {d}, input is {is:?}")));
        }
        if self.shape(bias) != [k] {
            return Err(Error::dim(format!("dense bias must be [{k}], got {:?}", self.shape(bias))));
        }
        let rows = self.value(input).len() / d;
        let mut y = vec![S::zero(); rows * k];
        for row in y.chunks_exact_mut(k) {
            row.copy_from_slice(self.value(bias).data());
        }
        gemm(false, false, rows, k, d, S::one(), self.value(input).data(), self.value(weights).data(), S::one(), &mut y);
        let mut shape = is.to_vec();
        *shape.last_mut().unwrap() = k;
        let rg = self.any_grad(&[input, weights, bias]);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::Dense { input, weights, bias }))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let y = self.value(input).data().iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Tensor::from_parts(shape, y), rg, Op::Sigmoid { input })
    }

    /// Nearest-neighbour upsampling of `[.., H, W, C]`.
    pub fn upsample2d(&mut self, input: Var, scale: (usize, usize)) -> Result<Var> {
        if scale.0 == 0 || scale.1 == 0 {
            return Err(Error::dim("upsample scale must be >= 1"));
        }
        let (n, h, w, c) = spatial(self.shape(input), "upsample2d")?;
        let (ho, wo) = (h * scale.0, w * scale.1);
        let x = self.value(input).data();
        let mut y = Vec::with_capacity(n * ho * wo * c);
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let src = ((b * h + oy / scale.0) * w + ox / scale.1) * c;
                    y.extend_from_slice(&x[src..src + c]);
                }
            }
        }
        let mut shape = self.shape(input).to_vec();
        let r = shape.len();
        shape[r - 3] = ho;
        shape[r - 2] = wo;
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::Upsample { input, scale }))
    }

    /// Zero padding of the two spatial axes of `[.., H, W, C]`.
    pub fn zero_pad2d(&mut self, input: Var, pad: (usize, usize), placement: PadPlacement) -> Result<Var> {
        let (n, h, w, c) = spatial(self.shape(input), "zero_pad2d")?;
        let (top, left, ho, wo) = match placement {
            PadPlacement::Leading => (pad.0, pad.1, h + pad.0, w + pad.1),
            PadPlacement::Symmetric => (pad.0, pad.1, h + 2 * pad.0, w + 2 * pad.1),
        };
        let x = self.value(input).data();
        let mut y = vec![S::zero(); n * ho * wo * c];
        for b in 0..n {
            for iy in 0..h {
                let src = (b * h + iy) * w * c;
                let dst = ((b * ho + iy + top) * wo + left) * c;
                y[dst..dst + w * c].copy_from_slice(&x[src..src + w * c]);
            }
        }
        let mut shape = self.shape(input).to_vec();
        let r = shape.len();
        shape[r - 3] = ho;
        shape[r - 2] = wo;
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::ZeroPad { input, top, left }))
    }

    /// `[D] -> [n, D]`, or `[B, D] -> [B, n, D]`.
    pub fn repeat_vector(&mut self, input: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::dim("repeat count must be >= 1"));
        }
        let is = self.shape(input).to_vec();
        if is.is_empty() || is.len() > 2 {
            return Err(Error::dim(format!("repeat_vector expects [D] or [B, D], got {is:?}")));
        }
        let d = *is.last().unwrap();
        let x = self.value(input).data();
        let mut y = Vec::with_capacity(x.len() * n);
        for row in x.chunks_exact(d) {
            for _ in 0..n {
                y.extend_from_slice(row);
            }
        }
        let shape = if is.len() == 1 { vec![n, d] } else { vec![is[0], n, d] };
        let rg = self.requires_grad(input);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::Repeat { input, n }))
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(input).clone().reshape(shape)?;
        let rg = self.requires_grad(input);
        Ok(self.push(t, rg, Op::Reshape { input }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, y), rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: S) -> Var {
        let y = self.value(input).data().iter().map(|&x| x * factor).collect();
        let shape = self.shape(input).to_vec();
        let rg = self.requires_grad(input);
        self.push(Tensor::from_parts(shape, y), rg, Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        let rg = self.requires_grad(input);
        self.push(Tensor::scalar(s), rg, Op::Sum { input })
    }

    /// `sum_i w_i x_i / n` over a length-`n` vector.
    pub fn weighted_mean(&mut self, input: Var, weights: &[S]) -> Result<Var> {
        let x = self.value(input).data();
        if x.len() != weights.len() {
            return Err(Error::dim(format!(
                "weighted_mean: {} values, {} weights",
                x.len(),
                weights.len()
            )));
        }
        let n = S::from_usize(x.len()).unwrap();
        let s = x.iter().zip(weights).map(|(&x, &w)| x * w).sum::<S>() / n;
        let rg = self.requires_grad(input);
        Ok(self.push(
            Tensor::scalar(s),
            rg,
            Op::WeightedMean {
                input,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Per-sample masked mean squared error.
    ///
    /// `mask` covers one sample; `recon` and `target` hold `B` samples back
    /// to back. The result has shape `[B]`, each entry the mean over the
    /// masked positions only.
    pub fn masked_mse(&mut self, recon: Var, target: &Tensor<S>, mask: &[bool]) -> Result<Var> {
        let r = self.value(recon);
        if r.len() != target.len() {
            return Err(Error::dim(format!(
                "masked_mse: reconstruction {:?} vs target {:?}",
                r.shape(),
                target.shape()
            )));
        }
        if mask.is_empty() || !r.len().is_multiple_of(mask.len()) {
            return Err(Error::dim(format!(
                "masked_mse: mask of {} does not tile {} values",
                mask.len(),
                r.len()
            )));
        }
        let cells = mask.iter().filter(|&&m| m).count();
        if cells == 0 {
            return Err(Error::dim("masked_mse: empty mask"));
        }
        let per = mask.len();
        let losses = masked_sq_means(r.data(), target.data(), mask, cells);
        let batch = r.len() / per;
        let rg = self.requires_grad(recon);
        Ok(self.push(
            Tensor::from_parts(vec![batch], losses),
            rg,
            Op::MaskedMse {
                recon,
                target: target.data().to_vec(),
                mask: mask.to_vec(),
                cells,
            },
        ))
    }

    /// Per-sample binary cross-entropy on probabilities clamped to
    /// `[eps, 1 - eps]`. With `full == false` only the `-y ln p` term is
    /// kept. Output shape `[B]`.
    pub fn bce(&mut self, prob: Var, labels: &[S], eps: S, full: bool) -> Result<Var> {
        let p = self.value(prob).data();
        if p.len() != labels.len() {
            return Err(Error::dim(format!(
                "bce: {} predictions, {} labels",
                p.len(),
                labels.len()
            )));
        }
        let y = p
            .iter()
            .zip(labels)
            .map(|(&p, &y)| bce_term(y, p, eps, full))
            .collect();
        let rg = self.requires_grad(prob);
        Ok(self.push(
            Tensor::from_parts(vec![labels.len()], y),
            rg,
            Op::Bce {
                prob,
                labels: labels.to_vec(),
                eps,
                full,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn bce_term<S: Scalar>(y: S, p: S, eps: S, full: bool) -> S {
    let p = p.max(eps).min(S::one() - eps);
    let mut l = -y * p.ln();
    if full {
        l = l - (S::one() - y) * (S::one() - p).ln();
    }
    l
}

pub(crate) fn masked_sq_means<S: Scalar>(recon: &[S], target: &[S], mask: &[bool], cells: usize) -> Vec<S> {
    let per = mask.len();
    let denom = S::from_usize(cells).unwrap();
    recon
        .chunks_exact(per)
        .zip(target.chunks_exact(per))
        .map(|(r, t)| {
            r.iter()
                .zip(t)
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|((&r, &t), _)| (r - t) * (r - t))
                .sum::<S>()
                / denom
        })
        .collect()
}
