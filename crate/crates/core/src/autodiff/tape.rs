use super::linalg::{gemm, ConvGeometry};
use super::params::{ParamId, ParamStore};
use super::{AutodiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, geom: ConvGeometry },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeometry },
    Relu(Var),
    Sigmoid(Var),
    Softmax { x: Var, segments: Vec<usize> },
    LogSoftmax { x: Var, segments: Vec<usize> },
    Log(Var),
    Exp(Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients, summed over every time a parameter was bound.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, g)| (*id, g))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }
}

/// Records a forward computation so it can be differentiated once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &str, detail: String) -> AutodiffError {
    AutodiffError::Shape(format!("{op}: {detail}"))
}

/// Splits a shape into (outer, axis extent, inner) element counts.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(op_name));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.push("leaf", value, Op::Leaf, true)
    }

    /// Binds the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var, AutodiffError> {
        self.push("param", store.get(id).value.clone(), Op::Param(id), true)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push("add", v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push("sub", v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push("mul", v, Op::Mul(a, b), rg)
    }

    /// Adds `bias[c]` to every element whose axis-1 index is `c`; covers both
    /// `[batch, features] + [features]` and `[batch, channels, h, w] + [channels]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let xs = self.value(x).shape();
        let bs = self.value(bias).shape();
        if xs.len() < 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(shape_err("add_bias", format!("{xs:?} + {bs:?}")));
        }
        let (outer, c, inner) = split_axis(xs, 1);
        let mut v = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        let data = v.data_mut();
        for o in 0..outer {
            for (ci, bv) in b.iter().enumerate().take(c) {
                let start = (o * c + ci) * inner;
                data[start..start + inner].iter_mut().for_each(|e| *e += bv);
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push("add_bias", v, Op::AddBias(x, bias), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        self.push("matmul", Tensor::new(&[m, n], out)?, Op::MatMul(a, b), rg)
    }

    /// Cross-correlation of `x: [B, C_in, H, W]` with `w: [C_out, C_in, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] {
            return Err(shape_err("conv2d", format!("input {xs:?}, weight {ws:?}")));
        }
        let geom = ConvGeometry::forward(xs[1], xs[2], xs[3], (ws[2], ws[3]), stride, padding)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {ws:?} does not fit {xs:?}")))?;
        let (batch, c_out) = (xs[0], ws[0]);
        let (k, l) = (geom.col_rows(), geom.col_cols());
        let in_len = xs[1] * xs[2] * xs[3];
        let mut cols = vec![0.0; k * l];
        let mut out = vec![0.0; batch * c_out * l];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        for b in 0..batch {
            geom.im2col(&xd[b * in_len..(b + 1) * in_len], &mut cols);
            gemm(c_out, k, l, wd, false, &cols, false, &mut out[b * c_out * l..(b + 1) * c_out * l], 0.0);
        }
        let v = Tensor::new(&[batch, c_out, geom.out_h, geom.out_w], out)?;
        let rg = self.rg(&[x, w]);
        self.push("conv2d", v, Op::Conv2d { x, w, geom }, rg)
    }

    /// Transposed convolution of `x: [B, C_in, H, W]` with
    /// `w: [C_in, C_out, kh, kw]`; the output size is
    /// `(H - 1) * stride - 2 * padding + kh` (no output padding).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[0] != xs[1] {
            return Err(shape_err("conv_transpose2d", format!("input {xs:?}, weight {ws:?}")));
        }
        let (kh, kw) = (ws[2], ws[3]);
        let out_h = ((xs[2] - 1) * stride.0 + kh)
            .checked_sub(2 * padding.0)
            .ok_or_else(|| shape_err("conv_transpose2d", "padding too large".into()))?;
        let out_w = ((xs[3] - 1) * stride.1 + kw)
            .checked_sub(2 * padding.1)
            .ok_or_else(|| shape_err("conv_transpose2d", "padding too large".into()))?;
        let c_out = ws[1];
        let geom = ConvGeometry::forward(c_out, out_h, out_w, (kh, kw), stride, padding)
            .filter(|g| g.out_h == xs[2] && g.out_w == xs[3])
            .ok_or_else(|| shape_err("conv_transpose2d", format!("inconsistent geometry {xs:?} / {ws:?}")))?;
        let (batch, c_in) = (xs[0], xs[1]);
        let (k, l) = (geom.col_rows(), geom.col_cols());
        let out_len = c_out * out_h * out_w;
        let mut cols = vec![0.0; k * l];
        let mut out = vec![0.0; batch * out_len];
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        for b in 0..batch {
            gemm(k, c_in, l, wd, true, &xd[b * c_in * l..(b + 1) * c_in * l], false, &mut cols, 0.0);
            geom.col2im(&cols, &mut out[b * out_len..(b + 1) * out_len]);
        }
        let v = Tensor::new(&[batch, c_out, out_h, out_w], out)?;
        let rg = self.rg(&[x, w]);
        self.push("conv_transpose2d", v, Op::ConvTranspose2d { x, w, geom }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|a| a.max(0.0));
        let rg = self.rg(&[x]);
        self.push("relu", v, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|a| {
            if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(&[x]);
        self.push("sigmoid", v, Op::Sigmoid(x), rg)
    }

    fn check_segments(&self, op: &str, x: Var, segments: &[usize]) -> Result<(), AutodiffError> {
        let shape = self.value(x).shape();
        let last = shape.last().copied().unwrap_or(1);
        if segments.iter().sum::<usize>() != last || segments.contains(&0) {
            return Err(shape_err(op, format!("segments {segments:?} do not tile last axis of {shape:?}")));
        }
        Ok(())
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let last = *self.value(x).shape().last().unwrap_or(&1);
        self.softmax_segments(x, &[last])
    }

    /// Independent softmaxes over consecutive segments of the last axis.
    pub fn softmax_segments(&mut self, x: Var, segments: &[usize]) -> Result<Var, AutodiffError> {
        self.check_segments("softmax", x, segments)?;
        let mut v = self.value(x).clone();
        for_each_segment(v.data_mut(), segments, |seg| {
            let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in seg.iter_mut() {
                *e = (*e - max).exp();
                total += *e;
            }
            seg.iter_mut().for_each(|e| *e /= total);
        });
        let rg = self.rg(&[x]);
        self.push("softmax", v, Op::Softmax { x, segments: segments.to_vec() }, rg)
    }

    /// Log-softmax over consecutive segments of the last axis.
    pub fn log_softmax_segments(&mut self, x: Var, segments: &[usize]) -> Result<Var, AutodiffError> {
        self.check_segments("log_softmax", x, segments)?;
        let mut v = self.value(x).clone();
        for_each_segment(v.data_mut(), segments, |seg| {
            let max = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + seg.iter().map(|e| (e - max).exp()).sum::<f64>().ln();
            seg.iter_mut().for_each(|e| *e -= lse);
        });
        let rg = self.rg(&[x]);
        self.push("log_softmax", v, Op::LogSoftmax { x, segments: segments.to_vec() }, rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(f64::ln);
        let rg = self.rg(&[x]);
        self.push("log", v, Op::Log(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push("exp", v, Op::Exp(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(f64::abs);
        let rg = self.rg(&[x]);
        self.push("abs", v, Op::Abs(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|a| a * c);
        let rg = self.rg(&[x]);
        self.push("scale", v, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|a| a + c);
        let rg = self.rg(&[x]);
        self.push("add_scalar", v, Op::AddScalar(x), rg)
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var, AutodiffError> {
        let v = self.value(x).map(|a| a.max(floor));
        let rg = self.rg(&[x]);
        self.push("clamp_min", v, Op::ClampMin(x, floor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push("sum", v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.rg(&[x]);
        self.push("mean", v, Op::Mean(x), rg)
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let shape = t.shape();
        if shape.is_empty() {
            return Err(shape_err("sum_last", "scalar input".into()));
        }
        let last = shape[shape.len() - 1];
        let out_shape = &shape[..shape.len() - 1];
        let data = t.data().chunks(last).map(|c| c.iter().sum()).collect();
        let v = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[x]);
        self.push("sum_last", v, Op::SumLast(x), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = inputs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(&shape, out)?;
        let rg = self.rg(inputs);
        self.push("concat", v, Op::Concat { inputs: inputs.to_vec(), axis }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push("reshape", v, Op::Reshape(x), rg)
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(shape_err("slice", format!("{start}..{} on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, extent, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(&out_shape, out)?;
        let rg = self.rg(&[x]);
        self.push("slice", v, Op::Slice { x, axis, start }, rg)
    }

    /// Reverse-mode sweep from a scalar `loss`. The tape is consumed: its
    /// recorded values are dropped and any further use is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(AutodiffError::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut params: Vec<(ParamId, Tensor)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads, &mut params)?;
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        params.sort_by_key(|(id, _)| *id);
        self.nodes.clear();
        self.consumed = true;
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        params: &mut Vec<(ParamId, Tensor)>,
    ) -> Result<(), AutodiffError> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match params.iter_mut().find(|(p, _)| p == id) {
                Some((_, existing)) => existing.add_assign(g),
                None => params.push((*id, g.clone())),
            },
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddBias(x, bias) => {
                acc(*x, g.clone());
                if needs(*bias) {
                    let (outer, c, inner) = split_axis(g.shape(), 1);
                    let mut gb = vec![0.0; c];
                    for o in 0..outer {
                        for (ci, slot) in gb.iter_mut().enumerate() {
                            let start = (o * c + ci) * inner;
                            *slot += g.data()[start..start + inner].iter().sum::<f64>();
                        }
                    }
                    acc(*bias, Tensor::new(&[c], gb)?);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, bv.data(), true, &mut ga, 0.0);
                    acc(*a, Tensor::new(&[m, k], ga)?);
                }
                if needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g.data(), false, &mut gb, 0.0);
                    acc(*b, Tensor::new(&[k, n], gb)?);
                }
            }
            Op::Conv2d { x, w, geom } => {
                let (xv, wv) = (val(*x), val(*w));
                let batch = xv.shape()[0];
                let c_out = wv.shape()[0];
                let (k, l) = (geom.col_rows(), geom.col_cols());
                let in_len = xv.numel() / batch;
                let mut cols = vec![0.0; k * l];
                let mut gx = if needs(*x) { Some(vec![0.0; xv.numel()]) } else { None };
                let mut gw = if needs(*w) { Some(vec![0.0; wv.numel()]) } else { None };
                for b in 0..batch {
                    let gb = &g.data()[b * c_out * l..(b + 1) * c_out * l];
                    if let Some(gw) = gw.as_mut() {
                        geom.im2col(&xv.data()[b * in_len..(b + 1) * in_len], &mut cols);
                        gemm(c_out, l, k, gb, false, &cols, true, gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(k, c_out, l, wv.data(), true, gb, false, &mut cols, 0.0);
                        geom.col2im(&cols, &mut gx[b * in_len..(b + 1) * in_len]);
                    }
                }
                if let Some(gx) = gx {
                    acc(*x, Tensor::new(xv.shape(), gx)?);
                }
                if let Some(gw) = gw {
                    acc(*w, Tensor::new(wv.shape(), gw)?);
                }
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let (xv, wv) = (val(*x), val(*w));
                let batch = xv.shape()[0];
                let c_in = xv.shape()[1];
                let (k, l) = (geom.col_rows(), geom.col_cols());
                let out_len = g.numel() / batch;
                let mut cols = vec![0.0; k * l];
                let mut gx = if needs(*x) { Some(vec![0.0; xv.numel()]) } else { None };
                let mut gw = if needs(*w) { Some(vec![0.0; wv.numel()]) } else { None };
                for b in 0..batch {
                    geom.im2col(&g.data()[b * out_len..(b + 1) * out_len], &mut cols);
                    if let Some(gx) = gx.as_mut() {
                        gemm(c_in, k, l, wv.data(), false, &cols, false, &mut gx[b * c_in * l..(b + 1) * c_in * l], 0.0);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gemm(c_in, l, k, &xv.data()[b * c_in * l..(b + 1) * c_in * l], false, &cols, true, gw, 1.0);
                    }
                }
                if let Some(gx) = gx {
                    acc(*x, Tensor::new(xv.shape(), gx)?);
                }
                if let Some(gw) = gw {
                    acc(*w, Tensor::new(wv.shape(), gw)?);
                }
            }
            Op::Relu(x) => acc(*x, g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Softmax { x, segments } => {
                let y = &node.value;
                let mut gx = g.zip_map(y, |gv, yv| gv * yv);
                let mut offset = 0;
                let ydata = y.data();
                for_each_segment(gx.data_mut(), segments, |seg| {
                    let ys = &ydata[offset..offset + seg.len()];
                    let dot: f64 = seg.iter().sum();
                    for (e, yv) in seg.iter_mut().zip(ys) {
                        *e -= yv * dot;
                    }
                    offset += seg.len();
                });
                acc(*x, gx);
            }
            Op::LogSoftmax { x, segments } => {
                let y = &node.value;
                let mut gx = g.clone();
                let mut offset = 0;
                let ydata = y.data();
                for_each_segment(gx.data_mut(), segments, |seg| {
                    let ys = &ydata[offset..offset + seg.len()];
                    let total: f64 = seg.iter().sum();
                    for (e, yv) in seg.iter_mut().zip(ys) {
                        *e -= yv.exp() * total;
                    }
                    offset += seg.len();
                });
                acc(*x, gx);
            }
            Op::Log(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv / xv)),
            Op::Exp(x) => acc(*x, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Abs(x) => acc(*x, g.zip_map(val(*x), |gv, xv| gv * sign(xv))),
            Op::Scale(x, c) => acc(*x, g.map(|gv| gv * c)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::ClampMin(x, floor) => acc(*x, g.zip_map(val(*x), |gv, xv| if xv > *floor { gv } else { 0.0 })),
            Op::Sum(x) => acc(*x, Tensor::full(val(*x).shape(), g.item())),
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                acc(*x, Tensor::full(val(*x).shape(), g.item() / n));
            }
            Op::SumLast(x) => {
                let xs = val(*x).shape();
                let last = xs[xs.len() - 1];
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv, last)).collect();
                acc(*x, Tensor::new(xs, data)?);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let vs = val(*v).shape();
                    let len = vs[*axis];
                    if needs(*v) {
                        let mut out = Vec::with_capacity(val(*v).numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            out.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        acc(*v, Tensor::new(vs, out)?);
                    }
                    offset += len;
                }
            }
            Op::Reshape(x) => acc(*x, g.reshaped(val(*x).shape())?),
            Op::Slice { x, axis, start } => {
                let xs = val(*x).shape();
                let (outer, extent, inner) = split_axis(xs, *axis);
                let len = g.shape()[*axis];
                let mut out = vec![0.0; val(*x).numel()];
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    out[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                acc(*x, Tensor::new(xs, out)?);
            }
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Applies `f` to each segment of every row of the last axis.
fn for_each_segment(data: &mut [f64], segments: &[usize], mut f: impl FnMut(&mut [f64])) {
    let row: usize = segments.iter().sum();
    for chunk in data.chunks_mut(row) {
        let mut rest = chunk;
        for &s in segments {
            let (seg, tail) = rest.split_at_mut(s);
            f(seg);
            rest = tail;
        }
    }
}
