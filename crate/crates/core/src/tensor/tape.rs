use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeometry};
use super::{Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Square,
    Huber(f64),
    AddScalar(f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        geometry: ConvGeometry,
    },
    Upsample2x(usize),
    AvgPool2x(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Unary(usize, Unary),
    Concat(Vec<usize>),
    MeanAll(usize),
    SumAll(usize),
    SpatialMean(usize),
    Reshape(usize),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

/// Eager reverse-mode tape. Every primitive evaluates immediately and
/// appends one node; [`Tape::backward`] walks the nodes in reverse.
///
/// A tape is confined to one thread. Parameters live outside the tape and
/// are bound as leaves for each pass.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.borrow().len()).finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(Rc::new(value), Op::Leaf, requires_grad)
    }

    /// Which piece of every piecewise primitive each element landed on, in
    /// recording order. Two evaluations of the same graph with equal patterns
    /// lie in one smooth region, so finite differences between them are
    /// meaningful.
    pub fn piecewise_branches(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for node in nodes.iter() {
            let Op::Unary(src, kind) = node.op else { continue };
            let x = &nodes[src].value;
            match kind {
                Unary::Relu | Unary::LeakyRelu(_) => out.extend(x.data().iter().map(|&v| v > T::zero())),
                Unary::Huber(delta) => out.extend(x.data().iter().map(|v| v.abs() < T::of(delta))),
                Unary::Sigmoid => {
                    let lo = T::min_positive_value();
                    let hi = T::one() - T::epsilon() / T::of(2.0);
                    out.extend(node.value.data().iter().map(|&y| y > lo && y < hi));
                }
                Unary::Square | Unary::AddScalar(_) => {}
            }
        }
        out
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    /// Concatenate 4D tensors along the channel axis.
    pub fn concat_channels<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
        let first = parts.first().ok_or(TensorError::EmptyInput { op: "concat_channels" })?;
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|v| v.value()).collect();
        let [n, _, h, w] = values[0].dims4("concat_channels")?;
        let mut channels = 0;
        for (v, value) in parts.iter().zip(&values) {
            first.same_tape(v)?;
            let [vn, vc, vh, vw] = value.dims4("concat_channels")?;
            for (axis, expected, actual) in [("batch", n, vn), ("height", h, vh), ("width", w, vw)] {
                if expected != actual {
                    return Err(TensorError::Axis {
                        op: "concat_channels",
                        axis,
                        expected,
                        actual,
                    });
                }
            }
            channels += vc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for value in &values {
                data.extend_from_slice(value.item_slice(b));
            }
        }
        let out = Tensor::new(vec![n, channels, h, w], data)?;
        let rg = parts.iter().any(|v| v.requires_grad());
        Ok(self.push(Rc::new(out), Op::Concat(parts.iter().map(|v| v.id).collect()), rg))
    }

    fn push(&self, value: Rc<Tensor<T>>, op: Op, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse sweep from a scalar root. Returns the adjoints of every
    /// leaf that requires a gradient and is reachable from `root`.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>, TensorError> {
        if !std::ptr::eq(root.tape, self) {
            return Err(TensorError::ForeignTape);
        }
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.id + 1];
        let mut visited = 0;
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(vec![T::one()]);
        }
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            propagate(&nodes, node, &g, &mut grads);
        }
        let leaves = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| Tensor::new(nodes[id].value.shape().to_vec(), data).expect("adjoint shape"))
            })
            .collect();
        Ok(Gradients {
            leaves,
            ops_replayed: visited,
        })
    }
}

/// Leaf adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    ops_replayed: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `var`; `None` if it does not require one or is unreachable.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but materialises zeros for unreachable leaves.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    /// Number of non-leaf nodes whose adjoint was propagated.
    pub fn ops_replayed(&self) -> usize {
        self.ops_replayed
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, contribution: Vec<T>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let rg = |id: usize| nodes[id].requires_grad;
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if rg(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if rg(*b) {
                accumulate(grads, *b, g.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if rg(*b) {
                accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                let other = val(*b).data();
                accumulate(grads, *a, g.iter().zip(other).map(|(&g, &o)| g * o).collect());
            }
            if rg(*b) {
                let other = val(*a).data();
                accumulate(grads, *b, g.iter().zip(other).map(|(&g, &o)| g * o).collect());
            }
        }
        Op::Scale(a, s) => {
            if rg(*a) {
                let s = T::of(*s);
                accumulate(grads, *a, g.iter().map(|&v| v * s).collect());
            }
        }
        Op::Unary(a, kind) => {
            if rg(*a) {
                let x = val(*a).data();
                let y = node.value.data();
                let d: Vec<T> = match *kind {
                    Unary::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                    Unary::LeakyRelu(slope) => {
                        let slope = T::of(slope);
                        g.iter()
                            .zip(x)
                            .map(|(&g, &x)| if x > T::zero() { g } else { g * slope })
                            .collect()
                    }
                    Unary::Sigmoid => g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
                    Unary::Square => {
                        let two = T::of(2.0);
                        g.iter().zip(x).map(|(&g, &x)| g * two * x).collect()
                    }
                    Unary::Huber(delta) => {
                        let delta = T::of(delta);
                        g.iter()
                            .zip(x)
                            .map(|(&g, &x)| {
                                if x.abs() < delta {
                                    g * x
                                } else {
                                    g * delta * x.signum()
                                }
                            })
                            .collect()
                    }
                    Unary::AddScalar(_) => g.to_vec(),
                };
                accumulate(grads, *a, d);
            }
        }
        Op::MeanAll(a) | Op::SumAll(a) => {
            if rg(*a) {
                let n = val(*a).len();
                let scale = if matches!(node.op, Op::MeanAll(_)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                accumulate(grads, *a, vec![T::of(g[0].as_f64() * scale); n]);
            }
        }
        Op::SpatialMean(a) => {
            if rg(*a) {
                let input = val(*a);
                let [n, c, h, w] = input.dims4("spatial_mean").expect("checked at record time");
                let plane = h * w;
                let inv = 1.0 / plane as f64;
                let mut d = Vec::with_capacity(n * c * plane);
                for &gv in &g[..n * c] {
                    d.extend(std::iter::repeat_n(T::of(gv.as_f64() * inv), plane));
                }
                accumulate(grads, *a, d);
            }
        }
        Op::Reshape(a) => {
            if rg(*a) {
                accumulate(grads, *a, g.to_vec());
            }
        }
        Op::Upsample2x(a) => {
            if rg(*a) {
                let [n, c, h, w] = val(*a).dims4("upsample2x").expect("checked at record time");
                accumulate(grads, *a, kernels::upsample2x_adjoint(g, n * c, h, w));
            }
        }
        Op::AvgPool2x(a) => {
            if rg(*a) {
                let [n, c, h, w] = val(*a).dims4("avgpool2x").expect("checked at record time");
                accumulate(grads, *a, kernels::avgpool2x_adjoint(g, n * c, h, w));
            }
        }
        Op::Concat(parts) => {
            let [n, _, h, w] = node.value.dims4("concat_channels").expect("checked at record time");
            let plane = h * w;
            let total: usize = node.value.shape()[1];
            let mut offset = 0;
            for &p in parts {
                let c = val(p).shape()[1];
                if rg(p) {
                    let mut d = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        let start = (b * total + offset) * plane;
                        d.extend_from_slice(&g[start..start + c * plane]);
                    }
                    accumulate(grads, p, d);
                }
                offset += c;
            }
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
            geometry,
        } => {
            let want = (rg(*input), rg(*kernel), bias.is_some_and(rg));
            if want == (false, false, false) {
                return;
            }
            let out = kernels::conv2d_backward(geometry, val(*input).data(), val(*kernel).data(), g, want);
            if let Some(d) = out.input {
                accumulate(grads, *input, d);
            }
            if let Some(d) = out.kernel {
                accumulate(grads, *kernel, d);
            }
            if let (Some(d), Some(b)) = (out.bias, bias) {
                accumulate(grads, *b, d);
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a one-element node.
    pub fn item(&self) -> Option<T> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.push(self.value(), Op::Leaf, false)
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<(), TensorError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignTape)
        }
    }

    fn binary(
        &self,
        other: Var<'t, T>,
        op: &'static str,
        make: fn(usize, usize) -> Op,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Rc::new(out), make(self.id, other.id), rg))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Var<'t, T> {
        let k = T::of(s);
        let out = self.value().map(|v| v * k);
        self.tape.push(Rc::new(out), Op::Scale(self.id, s), self.requires_grad())
    }

    fn unary(&self, kind: Unary) -> Var<'t, T> {
        let x = self.value();
        let out = match kind {
            Unary::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Unary::LeakyRelu(slope) => {
                let slope = T::of(slope);
                x.map(|v| if v > T::zero() { v } else { v * slope })
            }
            Unary::Sigmoid => {
                // Clamp keeps the output strictly inside (0, 1) in finite precision.
                let lo = T::min_positive_value();
                let hi = T::one() - T::epsilon() / T::of(2.0);
                x.map(|v| (T::one() / (T::one() + (-v).exp())).max(lo).min(hi))
            }
            Unary::Square => x.map(|v| v * v),
            Unary::Huber(delta) => {
                let delta = T::of(delta);
                let half = T::of(0.5);
                x.map(|r| {
                    let a = r.abs();
                    if a < delta {
                        half * r * r
                    } else {
                        delta * (a - half * delta)
                    }
                })
            }
            Unary::AddScalar(c) => {
                let c = T::of(c);
                x.map(|v| v + c)
            }
        };
        self.tape
            .push(Rc::new(out), Op::Unary(self.id, kind), self.requires_grad())
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(Unary::Relu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t, T> {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Unary::Sigmoid)
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary(Unary::Square)
    }

    /// Elementwise Huber penalty: `r²/2` for `|r| < delta`, else `delta(|r| - delta/2)`.
    pub fn huber(&self, delta: f64) -> Var<'t, T> {
        self.unary(Unary::Huber(delta))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        self.unary(Unary::AddScalar(c))
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let x = self.value();
        let s: f64 = x.data().iter().map(|v| v.as_f64()).sum();
        let out = Tensor::scalar(T::of(s / x.len() as f64));
        self.tape.push(Rc::new(out), Op::MeanAll(self.id), self.requires_grad())
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let x = self.value();
        let s: f64 = x.data().iter().map(|v| v.as_f64()).sum();
        self.tape
            .push(Rc::new(Tensor::scalar(T::of(s))), Op::SumAll(self.id), self.requires_grad())
    }

    /// Mean over H and W: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn spatial_mean(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let [n, c, h, w] = x.dims4("spatial_mean")?;
        let plane = h * w;
        let data = x
            .data()
            .chunks(plane)
            .map(|p| T::of(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
            .collect();
        let out = Tensor::new(vec![n, c, 1, 1], data)?;
        Ok(self.tape.push(Rc::new(out), Op::SpatialMean(self.id), self.requires_grad()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, TensorError> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.push(Rc::new(out), Op::Reshape(self.id), self.requires_grad()))
    }

    pub fn upsample_nearest2x(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let [n, c, h, w] = x.dims4("upsample_nearest2x")?;
        let out = Tensor::new(vec![n, c, 2 * h, 2 * w], kernels::upsample2x(x.data(), n * c, h, w))?;
        Ok(self.tape.push(Rc::new(out), Op::Upsample2x(self.id), self.requires_grad()))
    }

    pub fn avgpool2x(&self) -> Result<Var<'t, T>, TensorError> {
        let x = self.value();
        let [n, c, h, w] = x.dims4("avgpool2x")?;
        for (axis, extent) in [("height", h), ("width", w)] {
            if extent % 2 != 0 {
                return Err(TensorError::OddExtent {
                    op: "avgpool2x",
                    axis,
                    extent,
                });
            }
        }
        let out = Tensor::new(vec![n, c, h / 2, w / 2], kernels::avgpool2x(x.data(), n * c, h, w))?;
        Ok(self.tape.push(Rc::new(out), Op::AvgPool2x(self.id), self.requires_grad()))
    }

    /// Cross-correlation of `[N, C, H, W]` with `[F, C, k, k]` plus optional `[F]` bias.
    ///
    /// Output extent is `floor((H + 2p - k) / stride) + 1`; rows and
    /// columns of padding that no window reaches are ignored.
    pub fn conv2d(
        &self,
        kernel: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&kernel)?;
        if let Some(b) = &bias {
            self.same_tape(b)?;
        }
        let x = self.value();
        let k = kernel.value();
        let [n, c, h, w] = x.dims4("conv2d")?;
        let [f, kc, kh, kw] = k.dims4("conv2d")?;
        if stride == 0 {
            return Err(TensorError::ZeroStride);
        }
        if kc != c {
            return Err(TensorError::Axis {
                op: "conv2d",
                axis: "channel",
                expected: c,
                actual: kc,
            });
        }
        if kh != kw {
            return Err(TensorError::Axis {
                op: "conv2d",
                axis: "kernel width",
                expected: kh,
                actual: kw,
            });
        }
        for (axis, extent) in [("height", h), ("width", w)] {
            if kh > extent + 2 * padding {
                return Err(TensorError::KernelTooLarge {
                    axis,
                    kernel: kh,
                    padded_extent: extent + 2 * padding,
                });
            }
        }
        let bias_value = match &bias {
            Some(b) => {
                let bv = b.value();
                if bv.shape() != [f] {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d bias",
                        lhs: vec![f],
                        rhs: bv.shape().to_vec(),
                    });
                }
                Some(bv)
            }
            None => None,
        };
        let geometry = ConvGeometry {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            filters: f,
            kernel: kh,
            stride,
            padding,
            out_height: (h + 2 * padding - kh) / stride + 1,
            out_width: (w + 2 * padding - kh) / stride + 1,
        };
        let data = kernels::conv2d_forward(&geometry, x.data(), k.data(), bias_value.as_deref().map(|b| b.data()));
        let out = Tensor::new(vec![n, f, geometry.out_height, geometry.out_width], data)?;
        let rg = self.requires_grad() || kernel.requires_grad() || bias.is_some_and(|b| b.requires_grad());
        let op = Op::Conv2d {
            input: self.id,
            kernel: kernel.id,
            bias: bias.map(|b| b.id),
            geometry,
        };
        Ok(self.tape.push(Rc::new(out), op, rg))
    }
}
