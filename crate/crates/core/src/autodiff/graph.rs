//! Tape-based reverse-mode differentiation.
//!
//! Every forward call appends a node to the tape; nodes are only ever
//! appended, so the tape order is a topological order of the computation.
//! [`Graph::backward`] walks it once in reverse.

use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    /// Zero padding added on each spatial border.
    pub padding: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Conv2d { input: Var, kernels: Var, bias: Option<Var>, spec: Conv2dSpec },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Softmax(Var),
    CrossEntropy { probs: Var, label: usize },
    Distance(Var, Var),
    UnitNormalize { input: Var, norm: f64 },
    Dot(Var, Var),
    Sum(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

/// Below this norm the normalizer divides by the clamp instead.
pub const UNIT_NORM_EPS: f64 = 1e-12;

/// Recorded computation over a borrowed parameter set.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(param_count: usize) -> Self {
        Self {
            grads: vec![None; param_count],
        }
    }

    /// Gradient of `id`; `None` means the loss does not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, zeros when unreachable.
    pub fn dense(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_assign(t),
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.grads.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        match &self.nodes[var.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    /// Which branch the forward pass took at every kink: the sign of each
    /// ReLU input and the winner of each pooling window. Two passes with
    /// equal patterns lie on the same smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => pattern.extend(self.value(*a).data().iter().map(|x| usize::from(*x > 0.0))),
                Op::MaxPool2d { argmax, .. } => pattern.extend_from_slice(argmax),
                _ => {}
            }
        }
        pattern
    }

    fn push(&mut self, op: &'static str, value: Tensor, record: Op) -> Result<Var, AutodiffError> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: record,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<Var, AutodiffError> {
        self.push("constant", tensor, Op::Constant)
    }

    /// Leaf bound to a stored parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = da[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, bv) in row.iter_mut().zip(&db[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect())
            .expect("same length")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let t = self.map(a, |x| x * factor);
        self.push("scale", t, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var, AutodiffError> {
        let t = self.map(a, |x| x + offset);
        self.push("add_scalar", t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.map(a, |x| if x > 0.0 { x } else { 0.0 });
        self.push("relu", t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.map(a, sigmoid);
        self.push("sigmoid", t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.map(a, f64::tanh);
        self.push("tanh", t, Op::Tanh(a))
    }

    /// `weight [out, in] · input [in] + bias [out]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, AutodiffError> {
        let (x, w) = (self.value(input), self.value(weight));
        let ws = w.shape();
        if ws.len() != 2 || x.len() != ws[1] {
            return Err(mismatch("fully_connected", w, x));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let xd = x.data();
        let mut out: Vec<f64> = w
            .data()
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = bias {
            let bt = self.value(b);
            if bt.len() != rows {
                return Err(mismatch("fully_connected", w, bt));
            }
            for (o, bv) in out.iter_mut().zip(bt.data()) {
                *o += bv;
            }
        }
        self.push("fully_connected", Tensor::vector(out), Op::Linear { input, weight, bias })
    }

    /// Cross-correlation of `input [C, H, W]` with `kernels [O, C, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var, AutodiffError> {
        let (x, k) = (self.value(input), self.value(kernels));
        let (xs, ks) = (x.shape(), k.shape());
        if xs.len() != 3 || ks.len() != 4 || xs[0] != ks[1] {
            return Err(mismatch("conv2d", x, k));
        }
        if spec.stride == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        let geo = ConvGeometry::new(xs, ks, spec).ok_or_else(|| mismatch("conv2d", x, k))?;
        let mut out = vec![0.0; geo.out_c * geo.out_h * geo.out_w];
        conv_forward(&geo, x.data(), k.data(), &mut out);
        if let Some(b) = bias {
            let bt = self.value(b);
            if bt.len() != geo.out_c {
                return Err(mismatch("conv2d", k, bt));
            }
            let plane = geo.out_h * geo.out_w;
            for (o, bv) in bt.data().iter().enumerate() {
                out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += bv);
            }
        }
        let t = Tensor::new(vec![geo.out_c, geo.out_h, geo.out_w], out)?;
        self.push("conv2d", t, Op::Conv2d { input, kernels, bias, spec })
    }

    /// Non-overlapping max pooling of `[C, H, W]`; trailing remainders are dropped.
    /// Ties resolve to the first maximum in row-major window order.
    pub fn maxpool2d(&mut self, input: Var, window: (usize, usize)) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let xs = x.shape();
        let (ph, pw) = window;
        if xs.len() != 3 || ph == 0 || pw == 0 || xs[1] < ph || xs[2] < pw {
            return Err(AutodiffError::ShapeMismatch {
                op: "maxpool2d",
                left: xs.to_vec(),
                right: vec![ph, pw],
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / ph, w / pw);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dy in 0..ph {
                        let base = ch * h * w + (oy * ph + dy) * w + ox * pw;
                        for dx in 0..pw {
                            let v = xd[base + dx];
                            if best == usize::MAX || v > best_v {
                                best = base + dx;
                                best_v = v;
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], out)?;
        self.push("maxpool2d", t, Op::MaxPool2d { input, argmax })
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let t = self.value(input).clone().reshape(shape)?;
        self.push("reshape", t, Op::Reshape(input))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let n = self.value(input).len();
        self.reshape(input, vec![n])
    }

    /// Concatenation of flattened inputs.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if inputs.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                reason: "no inputs".into(),
            });
        }
        let mut data = Vec::new();
        for v in inputs {
            data.extend_from_slice(self.value(*v).data());
        }
        self.push("concat", Tensor::vector(data), Op::Concat(inputs.to_vec()))
    }

    /// Contiguous range `[start, start + len)` of the flattened input.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        if start + len > x.len() || len == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "slice",
                reason: format!("range {start}..{} outside length {}", start + len, x.len()),
            });
        }
        let t = Tensor::vector(x.data()[start..start + len].to_vec());
        self.push("slice", t, Op::Slice { input, start })
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let t = Tensor::new(x.shape().to_vec(), exps.into_iter().map(|e| e / z).collect())?;
        self.push("softmax", t, Op::Softmax(input))
    }

    /// Negative log-probability of `label`.
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var, AutodiffError> {
        let p = self.value(probs);
        if label >= p.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "cross_entropy",
                reason: format!("label {label} outside {} classes", p.len()),
            });
        }
        let t = Tensor::scalar(-p.data()[label].ln());
        self.push("cross_entropy", t, Op::CrossEntropy { probs, label })
    }

    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(mismatch("euclidean_distance", ta, tb));
        }
        let d = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        self.push("euclidean_distance", Tensor::scalar(d), Op::Distance(a, b))
    }

    /// `x / max(‖x‖, UNIT_NORM_EPS)`.
    pub fn unit_normalize(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let x = self.value(input);
        let norm = x.norm();
        // An overflowed norm would silently map the input to zeros.
        if !norm.is_finite() {
            return Err(AutodiffError::NonFinite { op: "unit_normalize" });
        }
        let norm = norm.max(UNIT_NORM_EPS);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v / norm).collect())?;
        self.push("unit_normalize", t, Op::UnitNormalize { input, norm })
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(mismatch("dot", ta, tb));
        }
        let d = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push("dot", Tensor::scalar(d), Op::Dot(a, b))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, AutodiffError> {
        let s = self.value(input).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(input))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean(&mut self, scalars: &[Var]) -> Result<Var, AutodiffError> {
        let all = self.concat(scalars)?;
        let total = self.sum(all)?;
        self.scale(total, 1.0 / scalars.len() as f64)
    }

    /// Reverse sweep from the scalar `loss`; returns gradients for every
    /// parameter reachable from it.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyGraph);
        }
        if loss.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(loss.0));
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        let mut out = Gradients::empty(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = self.value(Var(idx));
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.grads[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let (da, db, dg) = (ta.data(), tb.data(), g.data());
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &dg[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            let av = da[i * k + p];
                            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, k], ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![k, n], gb)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = scaled(&g, -1.0);
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, zip_with(&g, tb, |gv, bv| gv * bv));
                    accumulate(&mut grads, *b, zip_with(&g, ta, |gv, av| gv * av));
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, scaled(&g, *f)),
                Op::AddScalar(a) | Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(shape)?);
                }
                Op::Relu(a) => {
                    let ga = zip_with(&g, y, |gv, yv| if yv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, zip_with(&g, y, |gv, yv| gv * yv * (1.0 - yv)));
                }
                Op::Tanh(a) => {
                    accumulate(&mut grads, *a, zip_with(&g, y, |gv, yv| gv * (1.0 - yv * yv)));
                }
                Op::Linear { input, weight, bias } => {
                    let (x, w) = (self.value(*input), self.value(*weight));
                    let cols = w.shape()[1];
                    let (xd, wd, gd) = (x.data(), w.data(), g.data());
                    let mut gx = vec![0.0; cols];
                    let mut gw = vec![0.0; wd.len()];
                    for (r, gv) in gd.iter().enumerate() {
                        if *gv == 0.0 {
                            continue;
                        }
                        let wrow = &wd[r * cols..(r + 1) * cols];
                        for (o, wv) in gx.iter_mut().zip(wrow) {
                            *o += gv * wv;
                        }
                        for (o, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xd) {
                            *o = gv * xv;
                        }
                    }
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), gx)?);
                    accumulate(&mut grads, *weight, Tensor::new(w.shape().to_vec(), gw)?);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Conv2d { input, kernels, bias, spec } => {
                    let (x, k) = (self.value(*input), self.value(*kernels));
                    let geo = ConvGeometry::new(x.shape(), k.shape(), *spec).expect("validated in forward");
                    let mut gx = vec![0.0; x.len()];
                    let mut gk = vec![0.0; k.len()];
                    conv_backward(&geo, x.data(), k.data(), g.data(), &mut gx, &mut gk);
                    if let Some(b) = bias {
                        let plane = geo.out_h * geo.out_w;
                        let gb = g.data().chunks_exact(plane).map(|c| c.iter().sum()).collect();
                        accumulate(&mut grads, *b, Tensor::vector(gb));
                    }
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), gx)?);
                    accumulate(&mut grads, *kernels, Tensor::new(k.shape().to_vec(), gk)?);
                }
                Op::MaxPool2d { input, argmax } => {
                    let x = self.value(*input);
                    let mut gx = vec![0.0; x.len()];
                    for (src, gv) in argmax.iter().zip(g.data()) {
                        gx[*src] += gv;
                    }
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), gx)?);
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for v in inputs {
                        let t = self.value(*v);
                        let part = g.data()[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        accumulate(&mut grads, *v, Tensor::new(t.shape().to_vec(), part)?);
                    }
                }
                Op::Slice { input, start } => {
                    let x = self.value(*input);
                    let mut gx = vec![0.0; x.len()];
                    gx[*start..*start + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), gx)?);
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv).sum();
                    accumulate(&mut grads, *a, zip_with(&g, y, |gv, yv| yv * (gv - dot)));
                }
                Op::CrossEntropy { probs, label } => {
                    let p = self.value(*probs);
                    let mut gp = Tensor::zeros(p.shape());
                    gp.data_mut()[*label] = -g.item() / p.data()[*label];
                    accumulate(&mut grads, *probs, gp);
                }
                Op::Distance(a, b) => {
                    let d = y.item();
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let coef = if d > 0.0 { g.item() / d } else { 0.0 };
                    let ga = zip_with(ta, tb, |av, bv| coef * (av - bv));
                    let gb = scaled(&ga, -1.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::UnitNormalize { input, norm } => {
                    let clamped = *norm <= UNIT_NORM_EPS;
                    let proj: f64 = if clamped {
                        0.0
                    } else {
                        g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv).sum()
                    };
                    let ga = zip_with(&g, y, |gv, yv| (gv - yv * proj) / norm);
                    let shape = self.value(*input).shape().to_vec();
                    accumulate(&mut grads, *input, ga.reshape(shape)?);
                }
                Op::Dot(a, b) => {
                    let s = g.item();
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, scaled(tb, s));
                    accumulate(&mut grads, *b, scaled(ta, s));
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.item()));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn scaled(t: &Tensor, f: f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * f).collect()).expect("same length")
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect())
        .expect("same length")
}

struct ConvGeometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(xs: &[usize], ks: &[usize], spec: Conv2dSpec) -> Option<Self> {
        let (in_h, in_w) = (xs[1] + 2 * spec.padding, xs[2] + 2 * spec.padding);
        let (kh, kw) = (ks[2], ks[3]);
        if kh == 0 || kw == 0 || in_h < kh || in_w < kw {
            return None;
        }
        Some(Self {
            in_c: xs[0],
            in_h: xs[1],
            in_w: xs[2],
            out_c: ks[0],
            out_h: (in_h - kh) / spec.stride + 1,
            out_w: (in_w - kw) / spec.stride + 1,
            kh,
            kw,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    /// Output columns `[lo, hi)` whose tap `kj` lands inside the input row.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        // ix = x * stride + kj - pad must lie in [0, in_w)
        let lo = if kj >= self.pad { 0 } else { (self.pad - kj).div_ceil(self.stride) };
        let limit = (self.in_w + self.pad).saturating_sub(kj); // ix < in_w  <=>  x*stride < limit
        let hi = if limit == 0 { 0 } else { ((limit - 1) / self.stride + 1).min(self.out_w) };
        (lo, hi.max(lo))
    }

    fn input_row(&self, y: usize, ki: usize) -> Option<usize> {
        let iy = (y * self.stride + ki).checked_sub(self.pad)?;
        (iy < self.in_h).then_some(iy)
    }
}

fn conv_forward(geo: &ConvGeometry, x: &[f64], k: &[f64], out: &mut [f64]) {
    let (ih, iw, oh, ow) = (geo.in_h, geo.in_w, geo.out_h, geo.out_w);
    for o in 0..geo.out_c {
        for c in 0..geo.in_c {
            for ki in 0..geo.kh {
                for kj in 0..geo.kw {
                    let wv = k[((o * geo.in_c + c) * geo.kh + ki) * geo.kw + kj];
                    if wv == 0.0 {
                        continue;
                    }
                    let (lo, hi) = geo.col_range(kj);
                    for y in 0..oh {
                        let Some(iy) = geo.input_row(y, ki) else { continue };
                        let in_row = &x[(c * ih + iy) * iw..(c * ih + iy + 1) * iw];
                        let out_row = &mut out[(o * oh + y) * ow..(o * oh + y + 1) * ow];
                        if geo.stride == 1 {
                            let start = lo + kj - geo.pad;
                            for (ov, iv) in out_row[lo..hi].iter_mut().zip(&in_row[start..]) {
                                *ov += wv * iv;
                            }
                        } else {
                            for xo in lo..hi {
                                out_row[xo] += wv * in_row[xo * geo.stride + kj - geo.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward(geo: &ConvGeometry, x: &[f64], k: &[f64], g: &[f64], gx: &mut [f64], gk: &mut [f64]) {
    let (ih, iw, oh, ow) = (geo.in_h, geo.in_w, geo.out_h, geo.out_w);
    for o in 0..geo.out_c {
        for c in 0..geo.in_c {
            for ki in 0..geo.kh {
                for kj in 0..geo.kw {
                    let widx = ((o * geo.in_c + c) * geo.kh + ki) * geo.kw + kj;
                    let wv = k[widx];
                    let (lo, hi) = geo.col_range(kj);
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let Some(iy) = geo.input_row(y, ki) else { continue };
                        let row_start = (c * ih + iy) * iw;
                        let g_row = &g[(o * oh + y) * ow..(o * oh + y + 1) * ow];
                        if geo.stride == 1 {
                            let start = row_start + lo + kj - geo.pad;
                            let n = hi - lo;
                            let in_row = &x[start..start + n];
                            let gx_row = &mut gx[start..start + n];
                            for ((gv, iv), gxv) in g_row[lo..hi].iter().zip(in_row).zip(gx_row) {
                                acc += gv * iv;
                                *gxv += wv * gv;
                            }
                        } else {
                            for xo in lo..hi {
                                let ix = row_start + xo * geo.stride + kj - geo.pad;
                                acc += g_row[xo] * x[ix];
                                gx[ix] += wv * g_row[xo];
                            }
                        }
                    }
                    gk[widx] += acc;
                }
            }
        }
    }
}
