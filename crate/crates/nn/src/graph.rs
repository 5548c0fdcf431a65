//! Tape-based reverse-mode differentiation over [`Tensor`] operations.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! never copied onto the tape: ops refer to them by [`ParamId`] and
//! [`Graph::backward`] accumulates into the gradients held by the
//! [`ParamStore`].

use crate::kernels::{bilinear_taps, col2im, gemm, im2col, ConvGeom};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::{NnError, Result, Tensor};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Conv2d {
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        dilation: usize,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        mean: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Relu(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    UpsampleNearest {
        x: Var,
        fh: usize,
        fw: usize,
    },
    ResizeBilinear(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    GlobalAvgPool(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
}

impl Graph {
    /// `training` selects batch statistics (and running-stat updates) in
    /// batch norm; evaluation mode uses the frozen running statistics.
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn into_value(mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros([0, 0, 0, 0]))
    }

    /// Stride-1, same-padded square convolution.
    pub fn conv2d(
        &mut self,
        store: &ParamStore,
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        dilation: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let w = &store.param(weight).value;
        let [n, c, h, wd] = xv.shape();
        let [co, ci, kh, kw] = w.shape();
        if ci != c {
            return Err(NnError::Shape(format!(
                "conv `{}` expects {ci} input channels, got {c}",
                store.param(weight).name
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(NnError::Shape(format!(
                "conv `{}` needs an odd square kernel, got {kh}x{kw}",
                store.param(weight).name
            )));
        }
        let g = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: kh,
            dilation: dilation.max(1),
        };
        let plane = g.plane();
        let rows = g.rows();
        let chunk = g.chunk(n);
        let mut out = Tensor::zeros([n, co, h, wd]);
        let mut col = vec![0.0f32; rows * chunk * plane];
        let mut res = vec![0.0f32; co * chunk * plane];
        let mut start = 0;
        while start < n {
            let nb = chunk.min(n - start);
            let ld = nb * plane;
            for i in 0..nb {
                im2col(xv.item(start + i), &g, &mut col, ld, i * plane);
            }
            gemm(
                co,
                rows,
                ld,
                w.data(),
                (rows, 1),
                &col,
                (ld, 1),
                0.0,
                &mut res,
                (ld, 1),
            );
            for i in 0..nb {
                let dst = out.item_mut(start + i);
                for o in 0..co {
                    dst[o * plane..(o + 1) * plane]
                        .copy_from_slice(&res[o * ld + i * plane..o * ld + (i + 1) * plane]);
                }
            }
            start += nb;
        }
        if let Some(b) = bias {
            let bv = store.param(b).value.data();
            for item in 0..n {
                let dst = out.item_mut(item);
                for (o, bo) in bv.iter().enumerate().take(co) {
                    dst[o * plane..(o + 1) * plane]
                        .iter_mut()
                        .for_each(|v| *v += *bo);
                }
            }
        }
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                weight,
                bias,
                dilation: g.dilation,
            },
            true,
        ))
    }

    /// Per-channel batch normalisation with affine `gamma`/`beta`.
    pub fn batch_norm(
        &mut self,
        store: &mut ParamStore,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: BufferId,
        running_var: BufferId,
    ) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if store.param(gamma).value.len() != c {
            return Err(NnError::Shape(format!(
                "batch norm `{}` expects {} channels, got {c}",
                store.param(gamma).name,
                store.param(gamma).value.len()
            )));
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let (mean, inv_std) = if self.training {
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            for ch in 0..c {
                let mut s = 0.0f64;
                for item in 0..n {
                    s += xv.item(item)[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|&v| v as f64)
                        .sum::<f64>();
                }
                let m = s / count;
                let mut ss = 0.0f64;
                for item in 0..n {
                    ss += xv.item(item)[ch * plane..(ch + 1) * plane]
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ch] = m as f32;
                var[ch] = (ss / count) as f32;
            }
            let unbiased = if count > 1.0 {
                count / (count - 1.0)
            } else {
                1.0
            } as f32;
            let rm = store.buffer_mut(running_mean).value.data_mut();
            for (r, m) in rm.iter_mut().zip(&mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = store.buffer_mut(running_var).value.data_mut();
            for (r, v) in rv.iter_mut().zip(&var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbiased;
            }
            let inv: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            (mean, inv)
        } else {
            let mean = store.buffer(running_mean).value.data().to_vec();
            let inv: Vec<f32> = store
                .buffer(running_var)
                .value
                .data()
                .iter()
                .map(|v| 1.0 / (v.max(0.0) + BN_EPS).sqrt())
                .collect();
            (mean, inv)
        };
        let gv = store.param(gamma).value.data();
        let bv = store.param(beta).value.data();
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        for item in 0..n {
            let src = xv.item(item);
            let dst = out.item_mut(item);
            for ch in 0..c {
                let scale = gv[ch] * inv_std[ch];
                let shift = bv[ch] - mean[ch] * scale;
                for (d, s) in dst[ch * plane..(ch + 1) * plane]
                    .iter_mut()
                    .zip(&src[ch * plane..(ch + 1) * plane])
                {
                    *d = s * scale + shift;
                }
            }
        }
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            },
            true,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// 2x2 max pooling with stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if h % 2 != 0 || w % 2 != 0 {
            let (dim, len) = if h % 2 != 0 { ("height", h) } else { ("width", w) };
            return Err(NnError::Shape(format!(
                "max pooling needs even spatial dims; {dim} is {len}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let src = xv.data();
        let dst = out.data_mut();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let i0 = base + 2 * y * w + 2 * xo;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    dst[o] = src[best];
                    argmax.push(best as u32);
                    o += 1;
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn upsample_nearest(&mut self, x: Var, fh: usize, fw: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let (oh, ow) = (h * fh, w * fw);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let src = xv.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            for y in 0..oh {
                let srow = &src[plane * h * w + (y / fh) * w..][..w];
                let drow = &mut dst[plane * oh * ow + y * ow..][..ow];
                for (xo, d) in drow.iter_mut().enumerate() {
                    *d = srow[xo / fw];
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::UpsampleNearest { x, fh, fw }, ng)
    }

    /// Half-pixel bilinear resampling to `h x w`.
    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xv = self.value(x);
        let [n, c, ih, iw] = xv.shape();
        let ty = bilinear_taps(ih, h);
        let tx = bilinear_taps(iw, w);
        let mut out = Tensor::zeros([n, c, h, w]);
        let src = xv.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            let s = &src[plane * ih * iw..(plane + 1) * ih * iw];
            let d = &mut dst[plane * h * w..(plane + 1) * h * w];
            for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
                let wy = wy as f32;
                for (xo, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let wx = wx as f32;
                    let top = s[y0 * iw + x0] * (1.0 - wx) + s[y0 * iw + x1] * wx;
                    let bot = s[y1 * iw + x0] * (1.0 - wx) + s[y1 * iw + x1] * wx;
                    d[y * w + xo] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::ResizeBilinear(x), ng)
    }

    /// Channel-wise concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self
            .nodes
            .get(xs.first().map(|v| v.0).unwrap_or(usize::MAX))
            .ok_or_else(|| NnError::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.value.shape();
        let mut total = 0;
        for v in xs {
            let [vn, vc, vh, vw] = self.value(*v).shape();
            if (vn, vh, vw) != (n, h, w) {
                return Err(NnError::Shape(format!(
                    "concat operands disagree: {:?} vs {:?}",
                    [n, h, w],
                    [vn, vh, vw]
                )));
            }
            total += vc;
        }
        let plane = h * w;
        let mut out = Tensor::zeros([n, total, h, w]);
        for item in 0..n {
            let mut off = 0;
            for v in xs {
                let src = self.value(*v).item(item);
                let dst = out.item_mut(item);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
            debug_assert_eq!(off, total * plane);
        }
        let ng = xs.iter().any(|v| self.needs(*v));
        Ok(self.push(out, Op::Concat(xs.to_vec()), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::Shape(format!(
                "add operands disagree: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Spatial mean, producing `[n, c, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let plane = h * w;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for item in 0..n {
            let src = xv.item(item);
            for ch in 0..c {
                let s: f64 = src[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum();
                out.item_mut(item)[ch] = (s / plane as f64) as f32;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::GlobalAvgPool(x), ng)
    }

    /// Back-propagate `seed` (the gradient of the objective with respect to
    /// `output`) through the tape, accumulating parameter gradients in
    /// `store`. Gradients of [`Graph::variable`] leaves are returned.
    pub fn backward(
        &self,
        output: Var,
        seed: Tensor,
        store: &mut ParamStore,
    ) -> Result<Vec<(Var, Tensor)>> {
        if seed.shape() != self.value(output).shape() {
            return Err(NnError::Shape(format!(
                "seed gradient {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut leaves = Vec::new();
        for idx in (0..=output.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    if node.needs_grad {
                        leaves.push((Var(idx), gy));
                    }
                }
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    dilation,
                } => {
                    let dx = self.conv_backward(*x, *weight, *bias, *dilation, &gy, store);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let dx = self.bn_backward(*x, *gamma, *beta, mean, inv_std, &gy, store);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let mut dx = gy;
                        for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                            if *y <= 0.0 {
                                *d = 0.0;
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    if self.needs(*x) {
                        let mut dx = Tensor::zeros(self.value(*x).shape());
                        let d = dx.data_mut();
                        for (g, &i) in gy.data().iter().zip(argmax) {
                            d[i as usize] += *g;
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::UpsampleNearest { x, fh, fw } => {
                    if self.needs(*x) {
                        let [n, c, h, w] = self.value(*x).shape();
                        let (oh, ow) = (h * fh, w * fw);
                        let mut dx = Tensor::zeros([n, c, h, w]);
                        let d = dx.data_mut();
                        let g = gy.data();
                        for plane in 0..n * c {
                            for y in 0..oh {
                                let grow = &g[plane * oh * ow + y * ow..][..ow];
                                let drow = &mut d[plane * h * w + (y / fh) * w..][..w];
                                for (xo, v) in grow.iter().enumerate() {
                                    drow[xo / fw] += *v;
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::ResizeBilinear(x) => {
                    if self.needs(*x) {
                        let [n, c, ih, iw] = self.value(*x).shape();
                        let [_, _, h, w] = gy.shape();
                        let ty = bilinear_taps(ih, h);
                        let tx = bilinear_taps(iw, w);
                        let mut dx = Tensor::zeros([n, c, ih, iw]);
                        let d = dx.data_mut();
                        let g = gy.data();
                        for plane in 0..n * c {
                            let dp = &mut d[plane * ih * iw..(plane + 1) * ih * iw];
                            let gp = &g[plane * h * w..(plane + 1) * h * w];
                            for (y, &(y0, y1, wy)) in ty.iter().enumerate() {
                                let wy = wy as f32;
                                for (xo, &(x0, x1, wx)) in tx.iter().enumerate() {
                                    let wx = wx as f32;
                                    let v = gp[y * w + xo];
                                    dp[y0 * iw + x0] += v * (1.0 - wy) * (1.0 - wx);
                                    dp[y0 * iw + x1] += v * (1.0 - wy) * wx;
                                    dp[y1 * iw + x0] += v * wy * (1.0 - wx);
                                    dp[y1 * iw + x1] += v * wy * wx;
                                }
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Concat(xs) => {
                    let n = gy.batch();
                    let mut off = 0;
                    for v in xs {
                        let shape = self.value(*v).shape();
                        let len = shape[1] * shape[2] * shape[3];
                        if self.needs(*v) {
                            let mut dx = Tensor::zeros(shape);
                            for item in 0..n {
                                dx.item_mut(item)
                                    .copy_from_slice(&gy.item(item)[off..off + len]);
                            }
                            accumulate(&mut grads, *v, dx);
                        }
                        off += len;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, gy.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, gy);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    if self.needs(*x) {
                        let [n, c, h, w] = self.value(*x).shape();
                        let plane = h * w;
                        let mut dx = Tensor::zeros([n, c, h, w]);
                        for item in 0..n {
                            for ch in 0..c {
                                let v = gy.item(item)[ch] / plane as f32;
                                dx.item_mut(item)[ch * plane..(ch + 1) * plane].fill(v);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
            }
        }
        leaves.reverse();
        Ok(leaves)
    }

    fn conv_backward(
        &self,
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        dilation: usize,
        gy: &Tensor,
        store: &mut ParamStore,
    ) -> Option<Tensor> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let [co, _, k, _] = store.param(weight).value.shape();
        let g = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            dilation,
        };
        let plane = g.plane();
        let rows = g.rows();
        let chunk = g.chunk(n);
        let want_dx = self.needs(x);

        if let Some(b) = bias {
            let db = store.param_mut(b).grad.data_mut();
            for item in 0..n {
                let src = gy.item(item);
                for (o, d) in db.iter_mut().enumerate().take(co) {
                    *d += src[o * plane..(o + 1) * plane].iter().sum::<f32>();
                }
            }
        }

        let mut dx = want_dx.then(|| Tensor::zeros([n, c, h, w]));
        let mut col = vec![0.0f32; rows * chunk * plane];
        let mut dy = vec![0.0f32; co * chunk * plane];
        let mut dcol = if want_dx {
            vec![0.0f32; rows * chunk * plane]
        } else {
            Vec::new()
        };
        let mut start = 0;
        while start < n {
            let nb = chunk.min(n - start);
            let ld = nb * plane;
            for i in 0..nb {
                im2col(xv.item(start + i), &g, &mut col, ld, i * plane);
                let src = gy.item(start + i);
                for o in 0..co {
                    dy[o * ld + i * plane..o * ld + (i + 1) * plane]
                        .copy_from_slice(&src[o * plane..(o + 1) * plane]);
                }
            }
            {
                let param = store.param_mut(weight);
                gemm(
                    co,
                    ld,
                    rows,
                    &dy,
                    (ld, 1),
                    &col,
                    (1, ld),
                    1.0,
                    param.grad.data_mut(),
                    (rows, 1),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let wv = store.param(weight).value.data();
                gemm(
                    rows,
                    co,
                    ld,
                    wv,
                    (1, rows),
                    &dy,
                    (ld, 1),
                    0.0,
                    &mut dcol,
                    (ld, 1),
                );
                for i in 0..nb {
                    col2im(&dcol, &g, ld, i * plane, dx.item_mut(start + i));
                }
            }
            start += nb;
        }
        dx
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_backward(
        &self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        mean: &[f32],
        inv_std: &[f32],
        gy: &Tensor,
        store: &mut ParamStore,
    ) -> Option<Tensor> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for item in 0..n {
            let xs = xv.item(item);
            let gs = gy.item(item);
            for ch in 0..c {
                let (m, is) = (mean[ch], inv_std[ch]);
                for (xvv, g) in xs[ch * plane..(ch + 1) * plane]
                    .iter()
                    .zip(&gs[ch * plane..(ch + 1) * plane])
                {
                    let xhat = (xvv - m) * is;
                    dgamma[ch] += (*g * xhat) as f64;
                    dbeta[ch] += *g as f64;
                }
            }
        }
        for (d, v) in store.param_mut(gamma).grad.data_mut().iter_mut().zip(&dgamma) {
            *d += *v as f32;
        }
        for (d, v) in store.param_mut(beta).grad.data_mut().iter_mut().zip(&dbeta) {
            *d += *v as f32;
        }
        if !self.needs(x) {
            return None;
        }
        let gv = store.param(gamma).value.data();
        let mut dx = Tensor::zeros([n, c, h, w]);
        for item in 0..n {
            let xs = xv.item(item);
            let gs = gy.item(item);
            let ds = dx.item_mut(item);
            for ch in 0..c {
                let (m, is) = (mean[ch], inv_std[ch]);
                let scale = gv[ch] * is;
                let range = ch * plane..(ch + 1) * plane;
                if self.training {
                    let mean_dy = (dbeta[ch] / count) as f32;
                    let mean_dy_xhat = (dgamma[ch] / count) as f32;
                    for ((d, xvv), g) in ds[range.clone()]
                        .iter_mut()
                        .zip(&xs[range.clone()])
                        .zip(&gs[range.clone()])
                    {
                        let xhat = (xvv - m) * is;
                        *d = scale * (g - mean_dy - xhat * mean_dy_xhat);
                    }
                } else {
                    for (d, g) in ds[range.clone()].iter_mut().zip(&gs[range.clone()]) {
                        *d = scale * g;
                    }
                }
            }
        }
        Some(dx)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
