use std::sync::atomic::{AtomicUsize, Ordering};

use super::kernels::{self, same_shape, ConvGeometry};
use super::tensor::{numel, Tensor};
use crate::error::{dim_err, Error, Result};

/// Floor applied to inputs of [`Tape::log`].
pub const LOG_FLOOR: f32 = 1e-8;

static TAPES_CREATED: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f32),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Log(Var),
    Softmax(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeometry },
    Linear { x: Var, w: Var, b: Option<Var>, dims: (usize, usize, usize) },
    /// Reduction over one axis (`outer x axis x inner` view) or over everything.
    Reduce { x: Var, kind: Reduction, outer: usize, len: usize, inner: usize, argmax: Vec<usize> },
    Narrow { x: Var, outer: usize, len: usize, inner: usize, start: usize, take: usize },
    /// Picks one index along axis 1 per leading row.
    Select { x: Var, k: usize, inner: usize, picks: Vec<usize> },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of operations supporting reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so replaying them in reverse visits
/// every node after all of its consumers.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        TAPES_CREATED.fetch_add(1, Ordering::Relaxed);
        Self { nodes: Vec::new() }
    }

    /// Number of tapes constructed in this process.
    pub fn instances_created() -> usize {
        TAPES_CREATED.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it is trainable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.node(v).value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("tape nodes hold consistent shapes")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f32> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(dim_err(format!("expected a scalar, got shape {:?}", n.shape)));
        }
        Ok(n.value[0])
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, op, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    /// `s - a`, elementwise.
    pub fn rsub_scalar(&mut self, s: f32, a: Var) -> Var {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::relu, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f32::abs, Op::Abs(a))
    }

    /// Natural log with inputs clamped to at least [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).iter().find(|v| v.is_nan()) {
            return Err(Error::Numeric(format!("log of {bad}")));
        }
        Ok(self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let width = *self
            .shape(a)
            .last()
            .ok_or_else(|| dim_err("softmax of a scalar"))?;
        let value = kernels::softmax_rows(self.value(a), width);
        let rg = self.rg(a);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Softmax(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() || shape.contains(&0) {
            return Err(dim_err(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.filters] {
                return Err(dim_err(format!(
                    "conv2d bias shape {:?}, expected [{}]",
                    self.shape(b),
                    geom.filters
                )));
            }
        }
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &geom,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(geom.out_shape().to_vec(), value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Fully connected layer: `x[N,D]`, `w[M,D]`, `b[M]` to `[N,M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(dim_err(format!("linear: incompatible {xs:?} and {ws:?}")));
        }
        let dims = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [dims.2] {
                return Err(dim_err(format!("linear bias shape {:?}", self.shape(b))));
            }
        }
        let value = kernels::linear_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            dims.0,
            dims.1,
            dims.2,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(vec![dims.0, dims.2], value, Op::Linear { x, w, b, dims }, rg))
    }

    /// Reduces over `axis` (removing it) or over all elements when `axis` is
    /// `None`. Sums accumulate in f64. Max routes gradient to the first
    /// row-major maximum.
    pub fn reduce(&mut self, x: Var, kind: Reduction, axis: Option<usize>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner, out_shape) = match axis {
            None => (1, shape.iter().product(), 1, vec![]),
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::Domain(format!("axis {ax} invalid for shape {shape:?}")));
                }
                let mut out = shape.clone();
                out.remove(ax);
                (
                    shape[..ax].iter().product(),
                    shape[ax],
                    shape[ax + 1..].iter().product(),
                    out,
                )
            }
        };
        if len == 0 {
            return Err(Error::Domain("empty reduction".into()));
        }
        let src = self.value(x);
        let mut value = vec![0.0f32; outer * inner];
        let mut argmax = Vec::new();
        if kind == Reduction::Max {
            argmax = vec![0usize; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| src[(o * len + k) * inner + i];
                let out_idx = o * inner + i;
                match kind {
                    Reduction::Sum | Reduction::Mean => {
                        let s: f64 = (0..len).map(|k| at(k) as f64).sum();
                        value[out_idx] = if kind == Reduction::Mean {
                            (s / len as f64) as f32
                        } else {
                            s as f32
                        };
                    }
                    Reduction::Max => {
                        let mut best = 0;
                        for k in 1..len {
                            if at(k) > at(best) {
                                best = k;
                            }
                        }
                        argmax[out_idx] = best;
                        value[out_idx] = at(best);
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out_shape,
            value,
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Sum, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, Reduction::Mean, None)
    }

    /// Slices `take` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, take: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || take == 0 || start + take > shape[axis] {
            return Err(dim_err(format!(
                "narrow({axis}, {start}, {take}) out of bounds for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x);
        let mut value = Vec::with_capacity(outer * take * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            value.extend_from_slice(&src[base..base + take * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = take;
        let rg = self.rg(x);
        Ok(self.push(
            out_shape,
            value,
            Op::Narrow {
                x,
                outer,
                len,
                inner,
                start,
                take,
            },
            rg,
        ))
    }

    /// For `x` of shape `[N, K, ...]`, returns `[N, ...]` holding
    /// `x[n, picks[n], ...]`.
    pub fn select(&mut self, x: Var, picks: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || shape[0] != picks.len() {
            return Err(dim_err(format!(
                "select: {} picks for shape {shape:?}",
                picks.len()
            )));
        }
        let k = shape[1];
        if let Some(bad) = picks.iter().find(|&&p| p >= k) {
            return Err(dim_err(format!("select: index {bad} out of range {k}")));
        }
        let inner: usize = shape[2..].iter().product();
        let src = self.value(x);
        let mut value = Vec::with_capacity(picks.len() * inner);
        for (n, &p) in picks.iter().enumerate() {
            let base = (n * k + p) * inner;
            value.extend_from_slice(&src[base..base + inner]);
        }
        let mut out_shape = vec![shape[0]];
        out_shape.extend_from_slice(&shape[2..]);
        let rg = self.rg(x);
        Ok(self.push(
            out_shape,
            value,
            Op::Select {
                x,
                k,
                inner,
                picks: picks.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Only nodes that require grad receive
    /// a gradient; frozen leaves still pass gradient through to their
    /// consumers' other inputs.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.node(loss).value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let mut acc = |v: Var, g: Vec<f32>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x),
                slot @ None => *slot = Some(g),
            }
        };
        let map = |v: Var, f: &dyn Fn(f32, f32) -> f32| -> Vec<f32> {
            self.value(v).iter().zip(gout).map(|(x, g)| f(*x, *g)).collect()
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, gout.to_vec());
                acc(*b, gout.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gout.to_vec());
                acc(*b, gout.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, map(*b, &|y, g| y * g));
                }
                if self.rg(*b) {
                    acc(*b, map(*a, &|x, g| x * g));
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, gout.to_vec()),
            Op::MulScalar(a, s) => acc(*a, gout.iter().map(|g| g * s).collect()),
            Op::Sigmoid(a) => {
                let g = node.value.iter().zip(gout).map(|(y, g)| g * y * (1.0 - y)).collect();
                acc(*a, g);
            }
            Op::Relu(a) => acc(*a, map(*a, &|x, g| if x > 0.0 { g } else { 0.0 })),
            Op::Abs(a) => acc(
                *a,
                map(*a, &|x, g| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Log(a) => acc(*a, map(*a, &|x, g| if x >= LOG_FLOOR { g / x } else { 0.0 })),
            Op::Softmax(a) => {
                let width = *node.shape.last().unwrap();
                let mut g = vec![0.0f32; gout.len()];
                for ((y, go), dst) in node
                    .value
                    .chunks(width)
                    .zip(gout.chunks(width))
                    .zip(g.chunks_mut(width))
                {
                    let dot: f64 = y.iter().zip(go).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                    for ((d, yv), gv) in dst.iter_mut().zip(y).zip(go) {
                        *d = yv * (gv - dot as f32);
                    }
                }
                acc(*a, g);
            }
            Op::Conv2d { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let cg = kernels::conv2d_backward(self.value(*x), self.value(*w), gout, geom, need);
                if let Some(g) = cg.x {
                    acc(*x, g);
                }
                if let Some(g) = cg.w {
                    acc(*w, g);
                }
                if let (Some(b), Some(g)) = (b, cg.b) {
                    acc(*b, g);
                }
            }
            Op::Linear { x, w, b, dims } => {
                let need = (self.rg(*x), self.rg(*w), b.is_some_and(|b| self.rg(b)));
                let (gx, gw, gb) = kernels::linear_backward(self.value(*x), self.value(*w), gout, *dims, need);
                if let Some(g) = gx {
                    acc(*x, g);
                }
                if let Some(g) = gw {
                    acc(*w, g);
                }
                if let (Some(b), Some(g)) = (b, gb) {
                    acc(*b, g);
                }
            }
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            } => {
                let mut g = vec![0.0f32; outer * len * inner];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let go = gout[o * inner + i];
                        match kind {
                            Reduction::Sum => (0..*len).for_each(|k| g[(o * len + k) * inner + i] = go),
                            Reduction::Mean => {
                                let v = go / *len as f32;
                                (0..*len).for_each(|k| g[(o * len + k) * inner + i] = v);
                            }
                            Reduction::Max => g[(o * len + argmax[o * inner + i]) * inner + i] = go,
                        }
                    }
                }
                acc(*x, g);
            }
            Op::Narrow {
                x,
                outer,
                len,
                inner,
                start,
                take,
            } => {
                let mut g = vec![0.0f32; outer * len * inner];
                for o in 0..*outer {
                    let dst = (o * len + start) * inner;
                    let src = o * take * inner;
                    g[dst..dst + take * inner].copy_from_slice(&gout[src..src + take * inner]);
                }
                acc(*x, g);
            }
            Op::Select { x, k, inner, picks } => {
                let mut g = vec![0.0f32; picks.len() * k * inner];
                for (n, &p) in picks.iter().enumerate() {
                    let dst = (n * k + p) * inner;
                    g[dst..dst + inner].copy_from_slice(&gout[n * inner..(n + 1) * inner]);
                }
                acc(*x, g);
            }
        }
    }
}
