//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operator evaluates eagerly, appends a node holding its output and
//! whatever it needs for the backward rule, and returns a [`Var`] handle.
//! Nodes only ever reference earlier nodes, so walking the tape backwards is
//! a valid topological order.

use crate::error::{Error, Result};
use crate::kernels::{col2im, compensated_sum, gemm, im2col, Window};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics source for [`Tape::batch_norm2d`].
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch { eps: f64 },
    /// Normalize with fixed (running) statistics.
    Fixed { mean: &'a [T], var: &'a [T], eps: f64 },
}

/// Per-channel mean and biased variance observed by a batch-statistics pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, padding: usize },
    ConvTranspose2d { input: Var, kernel: Var, stride: usize, padding: usize },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    BatchNorm2d { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, batch: bool },
    LeakyRelu { input: Var, slope: T },
    Sigmoid { input: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Sum { input: Var },
    BinaryCrossEntropy { pred: Var, target: Vec<T>, weight: Vec<T>, eps: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op, lhs_name: "lhs", lhs: a.to_vec(), rhs_name: "rhs", rhs: b.to_vec() });
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.value.grad = None);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Stride-1 2-d convolution with symmetric zero padding.
    ///
    /// `kernel` is `[c_out, c_in, kh, kw]`, `bias` is `[c_out]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        let x = self.value(input);
        let k = self.value(kernel);
        let (n, cin, h, w) = x.dims4("conv2d")?;
        let (cout, kcin, kh, kw) = k.dims4("conv2d")?;
        if kcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs_name: "input",
                lhs: x.shape().to_vec(),
                rhs_name: "kernel",
                rhs: k.shape().to_vec(),
            });
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::invalid(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
            ));
        }
        if let Some(b) = bias {
            let bs = self.value(b).shape();
            if bs != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs_name: "kernel",
                    lhs: k.shape().to_vec(),
                    rhs_name: "bias",
                    rhs: bs.to_vec(),
                });
            }
        }
        let g = Window { channels: cin, height: h, width: w, kernel_h: kh, kernel_w: kw, padding, stride: 1 };
        let (oh, ow) = (g.out_height(), g.out_width());
        let (kdim, plane) = (g.col_rows(), oh * ow);
        let mut out = vec![T::zero(); n * cout * plane];
        let mut col = vec![T::zero(); kdim * plane];
        for b in 0..n {
            im2col(&x.data()[b * cin * h * w..(b + 1) * cin * h * w], &g, &mut col);
            gemm(cout, kdim, plane, k.data(), false, &col, false, &mut out[b * cout * plane..(b + 1) * cout * plane], false);
        }
        if let Some(bv) = bias {
            let bd = self.value(bv).data();
            for (i, chunk) in out.chunks_mut(plane).enumerate() {
                let bias = bd[i % cout];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let needs = self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, padding }, needs))
    }

    /// Transposed 2-d convolution, the adjoint of a strided convolution with
    /// the same geometry. `kernel` is `[c_in, c_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("conv_transpose2d", "stride must be at least 1"));
        }
        let x = self.value(input);
        let k = self.value(kernel);
        let (n, cin, h, w) = x.dims4("conv_transpose2d")?;
        let (kcin, cout, kh, kw) = k.dims4("conv_transpose2d")?;
        if kcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                lhs_name: "input",
                lhs: x.shape().to_vec(),
                rhs_name: "kernel",
                rhs: k.shape().to_vec(),
            });
        }
        let oh = (h as isize - 1) * stride as isize - 2 * padding as isize + kh as isize;
        let ow = (w as isize - 1) * stride as isize - 2 * padding as isize + kw as isize;
        if h == 0 || w == 0 || oh <= 0 || ow <= 0 {
            return Err(Error::invalid("conv_transpose2d", format!("non-positive output extent {oh}x{ow}")));
        }
        let (oh, ow) = (oh as usize, ow as usize);
        let g = Window { channels: cout, height: oh, width: ow, kernel_h: kh, kernel_w: kw, padding, stride };
        let kdim = g.col_rows();
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let mut col = vec![T::zero(); kdim * h * w];
        for b in 0..n {
            gemm(kdim, cin, h * w, k.data(), true, &x.data()[b * cin * h * w..(b + 1) * cin * h * w], false, &mut col, false);
            col2im(&col, &g, &mut out[b * cout * oh * ow..(b + 1) * cout * oh * ow]);
        }
        let needs = self.needs(input) || self.needs(kernel);
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, stride, padding }, needs))
    }

    /// Max pooling. Trailing rows/columns that do not fill a window are
    /// dropped. Ties resolve to the lowest linear index.
    pub fn max_pool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("max_pool2d")?;
        if window == 0 || stride == 0 {
            return Err(Error::invalid("max_pool2d", "window and stride must be positive"));
        }
        if window > h || window > w {
            return Err(Error::invalid("max_pool2d", format!("window {window} exceeds spatial extent {h}x{w}")));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let d = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let needs = self.needs(input);
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2d { input, argmax }, needs))
    }

    /// Per-channel batch normalization followed by the affine map
    /// `gamma * xhat + beta`. With [`NormStats::Batch`] the statistics are taken
    /// over `(n, h, w)` and returned so the caller can update running averages.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4("batch_norm2d")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.value(v).shape();
            if s != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch_norm2d",
                    lhs_name: "input",
                    lhs: x.shape().to_vec(),
                    rhs_name: name,
                    rhs: s.to_vec(),
                });
            }
        }
        let plane = h * w;
        let count = (n * plane) as f64;
        let d = x.data();
        let (mean, var, eps, batch) = match stats {
            NormStats::Batch { eps } => {
                if count == 0.0 {
                    return Err(Error::invalid("batch_norm2d", "empty batch"));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ch in 0..c {
                    let planes = || (0..n).flat_map(|b| d[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter());
                    let m = compensated_sum(planes().map(|v| v.as_f64())) / count;
                    let sq = compensated_sum(planes().map(|v| (v.as_f64() - m).powi(2)));
                    mean[ch] = m;
                    var[ch] = sq / count;
                }
                (mean, var, eps, true)
            }
            NormStats::Fixed { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::invalid(
                        "batch_norm2d",
                        format!("running stats cover {} channels, input has {c}", mean.len()),
                    ));
                }
                (mean.iter().map(|v| v.as_f64()).collect(), var.iter().map(|v| v.as_f64()).collect(), eps, false)
            }
        };
        if eps <= 0.0 {
            return Err(Error::invalid("batch_norm2d", "epsilon must be positive"));
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::from_f64(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64(m)).collect();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); d.len()];
        let mut out = vec![T::zero(); d.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                let (m, s, g, bb) = (mean_t[ch], inv_std[ch], gd[ch], bd[ch]);
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&d[r]) {
                    *xh = (v - m) * s;
                    *o = g * *xh + bb;
                }
            }
        }
        let observed = batch.then(|| BatchStats { mean: mean_t, var: var.iter().map(|&v| T::from_f64(v)).collect() });
        let needs = self.needs(input) || self.needs(gamma) || self.needs(beta);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let var_out = self.push(value, Op::BatchNorm2d { input, gamma, beta, xhat, inv_std, batch }, needs);
        Ok((var_out, observed))
    }

    /// `x` for positive inputs, `slope * x` otherwise.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        let needs = self.needs(input);
        self.push(value, Op::LeakyRelu { input, slope }, needs)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        let needs = self.needs(input);
        self.push(value, Op::Sigmoid { input }, needs)
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (na, ca, ha, wa) = ta.dims4("concat_channels")?;
        let (nb, cb, hb, wb) = tb.dims4("concat_channels")?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs_name: "a",
                lhs: ta.shape().to_vec(),
                rhs_name: "b",
                rhs: tb.shape().to_vec(),
            });
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for n in 0..na {
            out.extend_from_slice(&ta.data()[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&tb.data()[n * cb * plane..(n + 1) * cb * plane]);
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![na, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Op::Concat { a, b }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape("add", ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape("mul", ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("shape preserved");
        let needs = self.needs(input);
        self.push(value, Op::Scale { input, factor }, needs)
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        let needs = self.needs(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, needs)
    }

    /// Weighted binary cross-entropy summed over all elements:
    /// `-Σ w_j [y_j log p_j + (1 - y_j) log(1 - p_j)]`, with `p` clamped to
    /// `[eps, 1 - eps]` before the logs.
    pub fn binary_cross_entropy(&mut self, pred: Var, target: Vec<T>, weight: Vec<T>, eps: T) -> Result<Var> {
        let p = self.value(pred);
        if target.len() != p.numel() || weight.len() != p.numel() {
            return Err(Error::ShapeMismatch {
                op: "binary_cross_entropy",
                lhs_name: "pred",
                lhs: p.shape().to_vec(),
                rhs_name: "target",
                rhs: vec![target.len()],
            });
        }
        let one = T::one();
        let loss = -compensated_sum(p.data().iter().zip(&target).zip(&weight).map(|((&pv, &y), &wt)| {
            let pc = pv.max(eps).min(one - eps);
            (wt * (y * pc.ln() + (one - y) * (one - pc).ln())).as_f64()
        }));
        let needs = self.needs(pred);
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::BinaryCrossEntropy { pred, target, weight, eps }, needs))
    }

    /// Back-propagates from a scalar `loss`, accumulating into the `grad`
    /// field of every reachable leaf that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::invalid("backward", format!("loss must be scalar, got shape {:?}", root.shape())));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut self.nodes[i];
                if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Vec<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, padding } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (n, cin, h, w) = x.dims4("conv2d")?;
                let (cout, _, kh, kw) = k.dims4("conv2d")?;
                let geo = Window { channels: cin, height: h, width: w, kernel_h: kh, kernel_w: kw, padding: *padding, stride: 1 };
                let (kdim, plane) = (geo.col_rows(), geo.col_cols());
                let want_x = self.needs(*input);
                let want_k = self.needs(*kernel);
                let mut dx = vec![T::zero(); if want_x { x.numel() } else { 0 }];
                let mut dk = vec![T::zero(); if want_k { k.numel() } else { 0 }];
                let mut col = vec![T::zero(); kdim * plane];
                // The input gradient is a "full" correlation of the output
                // gradient with the flipped, channel-transposed kernel. That
                // unfolds c_out rather than c_in channels, which is cheaper
                // whenever a layer narrows; it needs square kernels and
                // padding below the kernel extent.
                let flipped = (want_x && kh == kw && *padding < kh).then(|| {
                    let kd = k.data();
                    let mut f = vec![T::zero(); k.numel()];
                    for co in 0..cout {
                        for ci in 0..cin {
                            for y in 0..kh {
                                for xx in 0..kw {
                                    f[((ci * cout + co) * kh + y) * kw + xx] = kd[((co * cin + ci) * kh + kh - 1 - y) * kw + kw - 1 - xx];
                                }
                            }
                        }
                    }
                    let (oh, ow) = (geo.out_height(), geo.out_width());
                    let back = Window { channels: cout, height: oh, width: ow, kernel_h: kh, kernel_w: kw, padding: kh - 1 - *padding, stride: 1 };
                    (f, back, vec![T::zero(); back.col_rows() * h * w])
                });
                let mut flipped = flipped;
                for b in 0..n {
                    let gb = &g[b * cout * plane..(b + 1) * cout * plane];
                    if want_k {
                        im2col(&x.data()[b * cin * h * w..(b + 1) * cin * h * w], &geo, &mut col);
                        gemm(cout, plane, kdim, gb, false, &col, true, &mut dk, true);
                    }
                    if want_x {
                        let dxb = &mut dx[b * cin * h * w..(b + 1) * cin * h * w];
                        match flipped.as_mut() {
                            Some((f, back, gcol)) => {
                                im2col(gb, back, gcol);
                                gemm(cin, back.col_rows(), h * w, f, false, gcol, false, dxb, false);
                            }
                            None => {
                                gemm(kdim, cout, plane, k.data(), true, gb, false, &mut col, false);
                                col2im(&col, &geo, dxb);
                            }
                        }
                    }
                }
                if let Some(bv) = bias {
                    let mut db = vec![T::zero(); cout];
                    for (j, chunk) in g.chunks(plane).enumerate() {
                        db[j % cout] += chunk.iter().copied().sum::<T>();
                    }
                    send(*bv, db);
                }
                if want_k {
                    send(*kernel, dk);
                }
                if want_x {
                    send(*input, dx);
                }
            }
            Op::ConvTranspose2d { input, kernel, stride, padding } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (n, cin, h, w) = x.dims4("conv_transpose2d")?;
                let (_, cout, kh, kw) = k.dims4("conv_transpose2d")?;
                let (_, _, oh, ow) = node.value.dims4("conv_transpose2d")?;
                let geo = Window { channels: cout, height: oh, width: ow, kernel_h: kh, kernel_w: kw, padding: *padding, stride: *stride };
                let kdim = geo.col_rows();
                let want_x = self.needs(*input);
                let want_k = self.needs(*kernel);
                let mut dx = vec![T::zero(); if want_x { x.numel() } else { 0 }];
                let mut dk = vec![T::zero(); if want_k { k.numel() } else { 0 }];
                let mut col = vec![T::zero(); kdim * h * w];
                for b in 0..n {
                    im2col(&g[b * cout * oh * ow..(b + 1) * cout * oh * ow], &geo, &mut col);
                    if want_x {
                        gemm(cin, kdim, h * w, k.data(), false, &col, false, &mut dx[b * cin * h * w..(b + 1) * cin * h * w], false);
                    }
                    if want_k {
                        gemm(cin, h * w, kdim, &x.data()[b * cin * h * w..(b + 1) * cin * h * w], false, &col, true, &mut dk, true);
                    }
                }
                if want_k {
                    send(*kernel, dk);
                }
                if want_x {
                    send(*input, dx);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                send(*input, dx);
            }
            Op::BatchNorm2d { input, gamma, beta, xhat, inv_std, batch } => {
                let (n, c, h, w) = node.value.dims4("batch_norm2d")?;
                let plane = h * w;
                let count = T::from_f64((n * plane) as f64);
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                        for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                            dgamma[ch] += gv * xh;
                            dbeta[ch] += gv;
                        }
                    }
                }
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); g.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let r = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                            let scale = gd[ch] * inv_std[ch];
                            if *batch {
                                let (sum_g, sum_gx) = (dbeta[ch] / count, dgamma[ch] / count);
                                for ((d, &gv), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                    *d = scale * (gv - sum_g - xh * sum_gx);
                                }
                            } else {
                                for (d, &gv) in dx[r.clone()].iter_mut().zip(&g[r]) {
                                    *d = scale * gv;
                                }
                            }
                        }
                    }
                    send(*input, dx);
                }
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let dx = x.iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { *slope * gv }).collect();
                send(*input, dx);
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let dx = y.iter().zip(g).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
                send(*input, dx);
            }
            Op::Concat { a, b } => {
                let (n, c, h, w) = node.value.dims4("concat_channels")?;
                let ca = self.value(*a).shape()[1];
                let cb = c - ca;
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for s in 0..n {
                    let base = s * c * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + c * plane]);
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Add { a, b } => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Mul { a, b } => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                send(*a, g.iter().zip(db).map(|(&gv, &y)| gv * y).collect());
                send(*b, g.iter().zip(da).map(|(&gv, &x)| gv * x).collect());
            }
            Op::Scale { input, factor } => {
                send(*input, g.iter().map(|&gv| gv * *factor).collect());
            }
            Op::Sum { input } => {
                send(*input, vec![g[0]; self.value(*input).numel()]);
            }
            Op::BinaryCrossEntropy { pred, target, weight, eps } => {
                let one = T::one();
                let p = self.value(*pred).data();
                let dx = p
                    .iter()
                    .zip(target)
                    .zip(weight)
                    .map(|((&pv, &y), &wt)| {
                        // clamped region has zero slope
                        if pv < *eps || pv > one - *eps {
                            T::zero()
                        } else {
                            g[0] * wt * ((one - y) / (one - pv) - y / pv)
                        }
                    })
                    .collect();
                send(*pred, dx);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_the_window() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let k = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, Some(b), 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64 - 3.5).collect();
        let x = tape.leaf(t(&[1, 1, 3, 4], &data));
        let k = tape.leaf(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, k, None, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 3, 4, 4]));
        let k = tape.leaf(Tensor::zeros(&[2, 2, 3, 3]));
        let msg = tape.conv2d(x, k, None, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn transposed_conv_output_extent() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 8, 8]));
        let k = tape.leaf(Tensor::zeros(&[2, 3, 4, 4]));
        let y = tape.conv_transpose2d(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3, 16, 16]);

        let k1 = tape.leaf(Tensor::zeros(&[2, 3, 1, 1]));
        let x1 = tape.leaf(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(tape.conv_transpose2d(x1, k1, 1, 1).is_err());
        assert!(tape.conv_transpose2d(x, k, 0, 1).is_err());
    }

    #[test]
    fn conv_then_transposed_conv_restores_extent() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 12, 10]));
        let k = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let y = tape.conv2d(x, k, None, 1).unwrap();
        let kt = tape.leaf(Tensor::zeros(&[1, 1, 3, 3]));
        let z = tape.conv_transpose2d(y, kt, 1, 1).unwrap();
        assert_eq!(tape.value(z).shape(), tape.value(x).shape());
    }

    #[test]
    fn max_pool_picks_max_and_lowest_index_on_ties() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).with_grad());
        let y = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);

        let c = tape.leaf(Tensor::full(&[1, 1, 4, 4], 7.0).with_grad());
        let y = tape.max_pool2d(c, 2, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 7.0));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let g = tape.grad(c).unwrap();
        let hot: Vec<usize> = g.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(hot, vec![0, 2, 8, 10]);
    }

    #[test]
    fn max_pool_truncates_and_rejects_oversized_windows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 5, 3]));
        let y = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 1]);
        let small = tape.leaf(Tensor::zeros(&[1, 1, 1, 4]));
        assert!(tape.max_pool2d(small, 2, 2).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.leaky_relu(x, 0.1);
        assert_eq!(tape.value(y).data(), &[-0.1, 0.0, 2.0]);
        let z = tape.leaky_relu(x, 1.0);
        assert_eq!(tape.value(z).data(), tape.value(x).data());
    }

    #[test]
    fn sigmoid_range_and_center() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[5], &[0.0, -10.0, -20.0, -40.0, 800.0]));
        let s = tape.sigmoid(x);
        let y = tape.value(s).data().to_vec();
        assert_eq!(y[0], 0.5);
        assert!(y[1] > y[2] && y[2] > y[3] && y[3] > 0.0);
        assert!(y[4] <= 1.0 && y[4].is_finite());
    }

    #[test]
    fn concat_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3, 4, 5]));
        let b = tape.leaf(Tensor::zeros(&[2, 1, 4, 5]));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 4, 4, 5]);

        let empty = tape.leaf(Tensor::zeros(&[2, 0, 4, 5]));
        let same = tape.concat_channels(a, empty).unwrap();
        assert_eq!(tape.value(same), tape.value(a));

        let off = tape.leaf(Tensor::zeros(&[2, 1, 4, 6]));
        assert!(tape.concat_channels(a, off).is_err());
    }

    #[test]
    fn batch_norm_normalizes_each_channel() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| ((i * 37 % 11) as f64) * 0.7 + (i / 32) as f64).collect();
        let x = tape.leaf(t(&[2, 3, 4, 4], &data));
        for (g, b) in [(1.0, 0.0), (2.0, 3.0)] {
            let gamma = tape.leaf(Tensor::full(&[3], g));
            let beta = tape.leaf(Tensor::full(&[3], b));
            let (y, stats) = tape.batch_norm2d(x, gamma, beta, NormStats::Batch { eps: 1e-5 }).unwrap();
            assert!(stats.is_some());
            let yd = tape.value(y).data();
            for ch in 0..3 {
                let vals: Vec<f64> = (0..2).flat_map(|n| yd[(n * 3 + ch) * 16..(n * 3 + ch + 1) * 16].to_vec()).collect();
                let m = vals.iter().sum::<f64>() / 32.0;
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 32.0;
                assert!((m - b).abs() < 1e-6);
                assert!((v.sqrt() - g).abs() < 1e-4 * g);
            }
        }
    }

    #[test]
    fn backward_simple_losses() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[1.0, -2.0, 3.0, 0.5]).with_grad());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[1.0, -2.0, 3.0, 0.5]).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shared_subexpression_doubles_gradient() {
        let data = [0.3, -1.2, 2.0];
        let f = |tape: &mut Tape<f64>, x: Var| {
            let s = tape.sigmoid(x);
            let p = tape.mul(s, x).unwrap();
            tape.sum(p)
        };
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &data).with_grad());
        let y = f(&mut tape, x);
        tape.backward(y).unwrap();
        let single = tape.grad(x).unwrap().to_vec();

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &data).with_grad());
        let y = f(&mut tape, x);
        let both = tape.add(y, y).unwrap();
        tape.backward(both).unwrap();
        for (d, s) in tape.grad(x).unwrap().iter().zip(&single) {
            assert!((d - 2.0 * s).abs() < 1e-14);
        }
    }
}
