use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward behaviour of a gated edge. Forward is the identity either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Pass,
    Block,
}

impl Gate {
    pub fn is_blocked(self) -> bool {
        matches!(self, Gate::Block)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; call reset_grads first")]
    BackwardAlreadyRun,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("graph builder is not deterministic: {0}")]
    NonDeterministic(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

type CustomBackward<T> =
    Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, padding: usize },
    Relu(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Affine { x: Var, weight: Var, bias: Var },
    SoftmaxXent { logits: Var, label: usize, probs: Vec<T> },
    Mse { pred: Var, target: Var },
    Gated { x: Var, gate: Gate },
    ConcatChannels(Var, Var),
    Reshape(Var),
    StepMark(Var),
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    span: usize,
}

/// Wengert list of tensor operations; replayed in reverse by [`Tape::backward`].
///
/// Records are appended in evaluation order, so every operand of record `k`
/// has an index below `k`. A tape belongs to a single thread; run separate
/// tapes to parallelise.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
    corrupt_sigmoid: bool,
    /// Forward values recorded for, or replayed into, blocked gated edges.
    blocked_values: Vec<Tensor<T>>,
    replay_blocked: bool,
    blocked_cursor: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch<T>(op: &'static str, detail: String) -> Result<T> {
    Err(AutodiffError::ShapeMismatch { op, detail })
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            corrupt_sigmoid: false,
            blocked_values: Vec::new(),
            replay_blocked: false,
            blocked_cursor: 0,
        }
    }

    /// Make blocked gated edges output `values`, in creation order, instead of
    /// their live input. Finite differences over such a tape treat blocked
    /// edges as constants, which is what their backward pass assumes.
    pub fn replay_blocked_values(&mut self, values: Vec<Tensor<T>>) {
        self.blocked_values = values;
        self.replay_blocked = true;
    }

    /// Forward values that blocked gated edges produced on this tape, in
    /// creation order.
    pub fn blocked_values(&self) -> &[Tensor<T>] {
        &self.blocked_values
    }

    /// Negative-control fixture: sigmoid backward becomes wrong by a factor
    /// of 1.5. Gradient checks must then fail.
    pub fn corrupt_sigmoid_backward(&mut self) {
        self.corrupt_sigmoid = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, operands: &[Var]) -> Var {
        let requires_grad = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        let span = operands.iter().map(|v| self.nodes[v.0].span).max().unwrap_or(0);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            span,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input; its gradient is populated by `backward`.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            span: 0,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            span: 0,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Number of [`Tape::mark_step`] records on the longest dependency chain
    /// ending at `v`.
    pub fn span(&self, v: Var) -> usize {
        self.nodes[v.0].span
    }

    pub fn max_span(&self) -> usize {
        self.nodes.iter().map(|n| n.span).max().unwrap_or(0)
    }

    /// Identity on `x` that records one recurrent step past `prev`, the
    /// memory it replaces. Spans count time steps only: values arriving from
    /// other layers at the same step do not lengthen the chain.
    pub fn mark_step(&mut self, x: Var, prev: Var) -> Var {
        let value = self.value(x).clone();
        let out = self.push(value, Op::StepMark(x), &[x]);
        self.nodes[out.0].span = self.nodes[prev.0].span + 1;
        out
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(kernel), self.value(bias), padding)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
            &[input, kernel, bias],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    fn check_same(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return mismatch(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("mul", a, b)?;
        let data = zip_with(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(data, Op::Mul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let data = zip_with(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(data, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k), &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `weight · x + bias` for a vector `x`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return mismatch("affine", format!("x {xs:?}, weight {ws:?}, bias {bs:?}"));
        }
        let (d_out, d_in) = (ws[0], ws[1]);
        let (xv, wv, bv) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let out: Vec<T> = (0..d_out)
            .map(|o| {
                let row = &wv[o * d_in..(o + 1) * d_in];
                row.iter().zip(xv).map(|(&w, &v)| w * v).sum::<T>() + bv[o]
            })
            .collect();
        let out = Tensor::new(vec![d_out], out)?;
        Ok(self.push(out, Op::Affine { x, weight, bias }, &[x, weight, bias]))
    }

    /// Cross-entropy of `softmax(logits)` against a class index.
    pub fn softmax_xent(&mut self, logits: Var, label: usize) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 1 {
            return mismatch("softmax_xent", format!("logits must be a vector, got {shape:?}"));
        }
        let classes = shape[0];
        if label >= classes {
            return Err(AutodiffError::LabelOutOfRange { label, classes });
        }
        let z = self.value(logits).data();
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let probs: Vec<T> = exps.iter().map(|&e| e / total).collect();
        let loss = total.ln() + max - z[label];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent {
                logits,
                label,
                probs,
            },
            &[logits],
        ))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_same("mse", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = T::from_usize(p.len().max(1)).unwrap();
        let sq: T = p.iter().zip(t).map(|(&a, &b)| (a - b) * (a - b)).sum();
        Ok(self.push(Tensor::scalar(sq / n), Op::Mse { pred, target }, &[pred, target]))
    }

    /// Identity forward; backward passes or drops the gradient per `gate`.
    pub fn gated_edge(&mut self, x: Var, gate: Gate) -> Var {
        let mut value = self.value(x).clone();
        if gate.is_blocked() {
            if self.replay_blocked {
                if let Some(v) = self.blocked_values.get(self.blocked_cursor).filter(|v| v.shape() == value.shape()) {
                    value = v.clone();
                }
                self.blocked_cursor += 1;
            } else {
                self.blocked_values.push(value.clone());
            }
        }
        self.push(value, Op::Gated { x, gate }, &[x])
    }

    /// Concatenate two `[C, H, W]` tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return mismatch("concat_channels", format!("{sa:?} vs {sb:?}"));
        }
        let shape = vec![sa[0] + sb[0], sa[1], sa[2]];
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ConcatChannels(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    /// Escape hatch for ops the tape does not know: `backward` receives the
    /// operand values, the output value and the upstream gradient, and
    /// returns one gradient per operand.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync + 'static,
    ) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
            inputs,
        )
    }

    /// Drop all gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.shape(loss).to_vec(), T::one());
        self.grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else { continue };
            let contributions = self.node_backward(idx, &g)?;
            self.grads[idx] = Some(g);
            for (var, grad) in contributions {
                if self.nodes[var.0].requires_grad {
                    accumulate(&mut self.grads[var.0], grad);
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let v = |x: Var| &self.nodes[x.0].value;
        let contributions = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let (gi, gk, gb) = conv2d_backward(v(*input), v(*kernel), g, *padding);
                vec![(*input, gi), (*kernel, gk), (*bias, gb)]
            }
            Op::Relu(x) => {
                let gx = zip_with(v(*x), g, |xv, gv| if xv > T::zero() { gv } else { T::zero() });
                vec![(*x, gx)]
            }
            Op::Sigmoid(x) => {
                let k = if self.corrupt_sigmoid { T::of(1.5) } else { T::one() };
                let gx = zip_with(out, g, |s, gv| k * gv * s * (T::one() - s));
                vec![(*x, gx)]
            }
            Op::Mul(a, b) => vec![
                (*a, zip_with(g, v(*b), |gv, bv| gv * bv)),
                (*b, zip_with(g, v(*a), |gv, av| gv * av)),
            ],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Scale(x, k) => vec![(*x, g.map(|gv| gv * *k))],
            Op::Sum(x) => {
                let gv = g.data()[0];
                vec![(*x, Tensor::full(v(*x).shape().to_vec(), gv))]
            }
            Op::Affine { x, weight, bias } => {
                let (xv, wv) = (v(*x).data(), v(*weight).data());
                let (d_out, d_in) = (wv.len() / xv.len(), xv.len());
                let gd = g.data();
                let mut gx = vec![T::zero(); d_in];
                let mut gw = vec![T::zero(); d_out * d_in];
                for o in 0..d_out {
                    let go = gd[o];
                    let row = &wv[o * d_in..(o + 1) * d_in];
                    let grow = &mut gw[o * d_in..(o + 1) * d_in];
                    for i in 0..d_in {
                        gx[i] += go * row[i];
                        grow[i] = go * xv[i];
                    }
                }
                vec![
                    (*x, Tensor::new(vec![d_in], gx)?),
                    (*weight, Tensor::new(vec![d_out, d_in], gw)?),
                    (*bias, g.clone()),
                ]
            }
            Op::SoftmaxXent {
                logits,
                label,
                probs,
            } => {
                let gv = g.data()[0];
                let grad: Vec<T> = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| gv * if k == *label { p - T::one() } else { p })
                    .collect();
                vec![(*logits, Tensor::new(vec![probs.len()], grad)?)]
            }
            Op::Mse { pred, target } => {
                let n = T::from_usize(v(*pred).len().max(1)).unwrap();
                let k = g.data()[0] * T::of(2.0) / n;
                let gp = zip_with(v(*pred), v(*target), |p, t| k * (p - t));
                let gt = gp.map(|x| -x);
                vec![(*pred, gp), (*target, gt)]
            }
            Op::Gated { x, gate } => match gate {
                Gate::Pass => vec![(*x, g.clone())],
                Gate::Block => Vec::new(),
            },
            Op::ConcatChannels(a, b) => {
                let na = v(*a).len();
                let ga = Tensor::new(v(*a).shape().to_vec(), g.data()[..na].to_vec())?;
                let gb = Tensor::new(v(*b).shape().to_vec(), g.data()[na..].to_vec())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Reshape(x) => vec![(*x, g.clone().reshape(v(*x).shape().to_vec())?)],
            Op::StepMark(x) => vec![(*x, g.clone())],
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&x| v(x)).collect();
                inputs.iter().copied().zip(backward(&vals, out, g)).collect()
            }
        };
        Ok(contributions)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, grad: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => *slot = Some(grad),
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_with on equal shapes")
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, padding: usize) -> ConvDims {
    let (is, ks) = (input.shape(), kernel.shape());
    ConvDims {
        c_in: is[0],
        h: is[1],
        w: is[2],
        c_out: ks[0],
        kh: ks[2],
        kw: ks[3],
        oh: is[1] + 2 * padding + 1 - ks[2],
        ow: is[2] + 2 * padding + 1 - ks[3],
    }
}

/// Output rows `y` for which `y + k - pad` lands inside `0..len`.
fn valid_range(len: usize, out: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out);
    (lo, hi.max(lo))
}

fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: usize,
) -> Result<Tensor<T>> {
    let (is, ks, bs) = (input.shape(), kernel.shape(), bias.shape());
    if is.len() != 3 || ks.len() != 4 || bs.len() != 1 {
        return mismatch(
            "conv2d",
            format!("expected input [C,H,W], kernel [O,C,kH,kW], bias [O]; got {is:?}, {ks:?}, {bs:?}"),
        );
    }
    if ks[1] != is[0] {
        return mismatch(
            "conv2d",
            format!("kernel expects {} input channels but input has {}", ks[1], is[0]),
        );
    }
    if bs[0] != ks[0] {
        return mismatch("conv2d", format!("bias has {} entries for {} output channels", bs[0], ks[0]));
    }
    if ks[2] == 0 || ks[3] == 0 {
        return mismatch("conv2d", format!("empty kernel {ks:?}"));
    }
    if is[1] + 2 * padding < ks[2] || is[2] + 2 * padding < ks[3] {
        return mismatch("conv2d", format!("kernel {ks:?} larger than padded input {is:?}"));
    }
    let d = conv_dims(input, kernel, padding);
    let (x, k, b) = (input.data(), kernel.data(), bias.data());
    let mut out = vec![T::zero(); d.c_out * d.oh * d.ow];
    for co in 0..d.c_out {
        let plane = &mut out[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
        plane.iter_mut().for_each(|v| *v = b[co]);
        for ci in 0..d.c_in {
            let xin = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let (y0, y1) = valid_range(d.h, d.oh, ky, padding);
                for kx in 0..d.kw {
                    let kv = k[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                    let (x0, x1) = valid_range(d.w, d.ow, kx, padding);
                    for y in y0..y1 {
                        let iy = y + ky - padding;
                        let orow = &mut plane[y * d.ow..(y + 1) * d.ow];
                        let irow = &xin[iy * d.w..(iy + 1) * d.w];
                        for xo in x0..x1 {
                            orow[xo] += kv * irow[xo + kx - padding];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![d.c_out, d.oh, d.ow], out)?)
}

fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &Tensor<T>,
    padding: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = conv_dims(input, kernel, padding);
    let (x, k, gd) = (input.data(), kernel.data(), g.data());
    let mut gi = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); d.c_out];
    for co in 0..d.c_out {
        let gplane = &gd[co * d.oh * d.ow..(co + 1) * d.oh * d.ow];
        gb[co] = gplane.iter().copied().sum();
        for ci in 0..d.c_in {
            let xin = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            let gin = &mut gi[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let (y0, y1) = valid_range(d.h, d.oh, ky, padding);
                for kx in 0..d.kw {
                    let kidx = ((co * d.c_in + ci) * d.kh + ky) * d.kw + kx;
                    let kv = k[kidx];
                    let (x0, x1) = valid_range(d.w, d.ow, kx, padding);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let iy = y + ky - padding;
                        let grow = &gplane[y * d.ow..(y + 1) * d.ow];
                        let irow = &xin[iy * d.w..(iy + 1) * d.w];
                        let girow = &mut gin[iy * d.w..(iy + 1) * d.w];
                        for xo in x0..x1 {
                            let ix = xo + kx - padding;
                            acc += grow[xo] * irow[ix];
                            girow[ix] += grow[xo] * kv;
                        }
                    }
                    gk[kidx] += acc;
                }
            }
        }
    }
    (
        Tensor::new(input.shape().to_vec(), gi).unwrap(),
        Tensor::new(kernel.shape().to_vec(), gk).unwrap(),
        Tensor::new(vec![d.c_out], gb).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn conv_scaling_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(vec![1, 3, 3]));
        let k = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, k, b, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv_hand_evaluated_cross_correlation() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = tape.constant(t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.conv2d(x, k, b, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[5.0]);
        let k3 = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
        assert!(tape.conv2d(x, k3, b, 0).is_err(), "3x3 kernel on unpadded 2x2 input");
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::zeros(vec![2, 4, 4]));
        let k = tape.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let err = tape.conv2d(x, k, b, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn relu_values_and_dead_region() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[-1.0, -2.0, -0.5, -3.0]));
        let y = tape.relu(x);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_symmetry_and_saturation() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.0, -50.0, 50.0]));
        let y = tape.sigmoid(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.5);
        assert!(v[1].is_finite() && v[1] >= 0.0 && v[1] < 1e-20);
        assert!(v[2].is_finite() && v[2] <= 1.0);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert!(tape.grad(x).unwrap().is_finite());
    }

    #[test]
    fn mul_zero_annihilator_and_product_rule() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn add_zero_is_identity_and_shapes_must_match() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[3], &[1.0, -2.0, 3.5]));
        let z = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.add(a, z).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
        let w = tape.constant(Tensor::zeros(vec![2]));
        assert!(tape.add(a, w).is_err());
        assert!(tape.mul(a, w).is_err());
    }

    #[test]
    fn affine_identity_and_hand_value() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[3.0, 4.0]));
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.affine(x, eye, zb).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
        let w = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
        assert!(tape.affine(x, w, zb).is_err());
    }

    #[test]
    fn xent_uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::<f64>::zeros(vec![4]));
        let l = tape.softmax_xent(z, 2).unwrap();
        assert!((tape.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
        tape.backward(l).unwrap();
        let g = tape.grad(z).unwrap().data();
        assert!((g[2] + 0.75).abs() < 1e-12 && (g[0] - 0.25).abs() < 1e-12);
        assert!(matches!(
            tape.softmax_xent(z, 4),
            Err(AutodiffError::LabelOutOfRange { label: 4, classes: 4 })
        ));
    }

    #[test]
    fn mse_values() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(&[2], &[1.0, 0.0]));
        let q = tape.constant(t(&[2], &[0.0, 0.0]));
        let l = tape.mse(p, q).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.5);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.3, -1.0, 2.0]));
        let x2 = tape.constant(t(&[3], &[0.3, -1.0, 2.0]));
        let l = tape.mse(x, x2).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gated_edge_forward_identity_backward_by_gate() {
        for gate in [Gate::Pass, Gate::Block] {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[2], &[1.5, -2.0]));
            let y = tape.gated_edge(x, gate);
            assert_eq!(tape.value(y), tape.value(x));
            let l = tape.sum(y);
            tape.backward(l).unwrap();
            let expected = if gate == Gate::Pass { 1.0 } else { 0.0 };
            match tape.grad(x) {
                Some(g) => assert!(g.data().iter().all(|&v| v == expected)),
                None => assert_eq!(expected, 0.0),
            }
        }
    }

    #[test]
    fn blocked_edge_plus_direct_use() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let gx = tape.gated_edge(x, Gate::Block);
        let sq = tape.mul(gx, gx).unwrap();
        let direct = tape.mul(x, x).unwrap();
        let y = tape.add(sq, direct).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        // only the ungated x*x contributes: 2x
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_and_shared_operand_accumulate() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.5]));
        let y = tape.mul(x, x).unwrap();
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_contract() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss(_))));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert!(matches!(tape.backward(l), Err(AutodiffError::BackwardAlreadyRun)));
        tape.reset_grads();
        assert!(tape.grad(x).is_none());
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn concat_and_reshape_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::ones(vec![1, 2, 2]));
        let b = tape.leaf(Tensor::full(vec![2, 2, 2], 2.0));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[3, 2, 2]);
        let flat = tape.reshape(c, vec![12]).unwrap();
        let sq = tape.mul(flat, flat).unwrap();
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        assert!(tape.grad(a).unwrap().data().iter().all(|&g| g == 2.0));
        assert!(tape.grad(b).unwrap().data().iter().all(|&g| g == 4.0));
        let bad = tape.constant(Tensor::zeros(vec![1, 3, 2]));
        assert!(tape.concat_channels(a, bad).is_err());
    }

    #[test]
    fn step_marks_count_chain_depth() {
        let mut tape = Tape::new();
        let mut c = tape.leaf(Tensor::<f64>::zeros(vec![1]));
        for _ in 0..4 {
            c = tape.mark_step(c, c);
        }
        let other = tape.constant(Tensor::zeros(vec![1]));
        let mixed = tape.add(other, c).unwrap();
        let other = tape.mark_step(mixed, other);
        assert_eq!(tape.span(c), 4);
        assert_eq!(tape.span(mixed), 4);
        assert_eq!(tape.span(other), 1);
        assert_eq!(tape.max_span(), 4);
    }
}
