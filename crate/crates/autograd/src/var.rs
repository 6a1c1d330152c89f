use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::conv::{conv_backward_data, conv_backward_weight, conv_forward, ConvGeom};
use crate::float::Float;
use crate::tensor::{broadcast_shape, reduction_axes, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// A node in a differentiation graph.
///
/// Every operation on `Var`s records how to pull a cotangent back to its
/// inputs, and the pullbacks are themselves written with `Var` operations.
/// Calling [`grad`] with `create_graph = true` therefore yields gradients
/// that can be differentiated again.
#[derive(Clone)]
pub struct Var<T: Float>(Rc<Node<T>>);

struct Node<T: Float> {
    id: u64,
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone)]
enum Op<T: Float> {
    Leaf,
    Add(Var<T>, Var<T>),
    Sub(Var<T>, Var<T>),
    Mul(Var<T>, Var<T>),
    MulConst(Var<T>, Tensor<T>),
    Scale(Var<T>, T),
    AddScalar(Var<T>),
    Powf(Var<T>, T),
    Sqrt(Var<T>),
    SafeRecip(Var<T>),
    Sigmoid(Var<T>),
    Softplus(Var<T>),
    Tanh(Var<T>),
    Sum(Var<T>),
    BroadcastTo(Var<T>),
    Reshape(Var<T>),
    MatMul {
        a: Var<T>,
        b: Var<T>,
        ta: bool,
        tb: bool,
    },
    Conv {
        x: Var<T>,
        w: Var<T>,
        geom: ConvGeom,
    },
    ConvData {
        gy: Var<T>,
        w: Var<T>,
        geom: ConvGeom,
    },
    ConvWeight {
        x: Var<T>,
        gy: Var<T>,
        geom: ConvGeom,
    },
}

impl<T: Float> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![a, b],
            MulConst(a, _)
            | Scale(a, _)
            | AddScalar(a)
            | Powf(a, _)
            | Sqrt(a)
            | SafeRecip(a)
            | Sigmoid(a)
            | Softplus(a)
            | Tanh(a)
            | Sum(a)
            | BroadcastTo(a)
            | Reshape(a) => {
                vec![a]
            }
            MatMul { a, b, .. } => vec![a, b],
            Conv { x, w, .. } => vec![x, w],
            ConvData { gy, w, .. } => vec![gy, w],
            ConvWeight { x, gy, .. } => vec![x, gy],
        }
    }
}

impl<T: Float> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Float> Var<T> {
    fn make(value: Tensor<T>, op: Op<T>) -> Self {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = if requires_grad { op } else { Op::Leaf };
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op,
            requires_grad,
        }))
    }

    /// A value that gradients do not flow into.
    pub fn constant(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            requires_grad: false,
        }))
    }

    /// A differentiable input.
    pub fn leaf(value: Tensor<T>) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            op: Op::Leaf,
            requires_grad: true,
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::make(
            self.value().zip_with(other.value(), |a, b| a + b),
            Op::Add(self.clone(), other.clone()),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::make(
            self.value().zip_with(other.value(), |a, b| a - b),
            Op::Sub(self.clone(), other.clone()),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::make(
            self.value().zip_with(other.value(), |a, b| a * b),
            Op::Mul(self.clone(), other.clone()),
        )
    }

    /// Elementwise product with a same-shaped constant (masks, slopes).
    pub fn mul_const(&self, c: &Tensor<T>) -> Self {
        assert_eq!(self.shape(), c.shape(), "mul_const shape mismatch");
        Self::make(
            self.value().zip_with(c, |a, b| a * b),
            Op::MulConst(self.clone(), c.clone()),
        )
    }

    pub fn scale(&self, s: T) -> Self {
        Self::make(self.value().map(|a| a * s), Op::Scale(self.clone(), s))
    }

    pub fn neg(&self) -> Self {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, s: T) -> Self {
        Self::make(self.value().map(|a| a + s), Op::AddScalar(self.clone()))
    }

    pub fn powf(&self, p: T) -> Self {
        Self::make(self.value().map(|a| a.powf(p)), Op::Powf(self.clone(), p))
    }

    pub fn square(&self) -> Self {
        self.mul(self)
    }

    /// Square root whose derivative is taken as zero at the origin.
    pub fn sqrt(&self) -> Self {
        Self::make(self.value().map(|a| a.sqrt()), Op::Sqrt(self.clone()))
    }

    /// `1/x`, with `0` mapped to `0` (and a zero derivative there).
    pub fn safe_recip(&self) -> Self {
        let f = |a: T| {
            if a == T::zero() {
                T::zero()
            } else {
                T::one() / a
            }
        };
        Self::make(self.value().map(f), Op::SafeRecip(self.clone()))
    }

    pub fn sigmoid(&self) -> Self {
        Self::make(self.value().map(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn softplus(&self) -> Self {
        Self::make(self.value().map(softplus), Op::Softplus(self.clone()))
    }

    pub fn tanh(&self) -> Self {
        Self::make(self.value().map(|a| a.tanh()), Op::Tanh(self.clone()))
    }

    pub fn relu(&self) -> Self {
        self.leaky_relu(T::zero())
    }

    pub fn leaky_relu(&self, slope: T) -> Self {
        let mask = self
            .value()
            .map(|a| if a > T::zero() { T::one() } else { slope });
        self.mul_const(&mask)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Self {
        Self::make(self.value().sum_axes(axes), Op::Sum(self.clone()))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Self {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(T::one() / T::of(count as f64))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum_all(&self) -> Self {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum_axes(&axes).reshape(Vec::<usize>::new())
    }

    pub fn mean_all(&self) -> Self {
        let n = self.value().numel();
        self.sum_all().scale(T::one() / T::of(n as f64))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        Self::make(
            self.value().broadcast_to(shape),
            Op::BroadcastTo(self.clone()),
        )
    }

    /// Sums broadcast dimensions away; inverse of [`Var::broadcast_to`].
    pub fn sum_to(&self, shape: &[usize]) -> Self {
        if self.shape() == shape {
            return self.clone();
        }
        let axes = reduction_axes(self.shape(), shape);
        self.sum_axes(&axes).reshape(shape.to_vec())
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        if self.shape() == shape.as_slice() {
            return self.clone();
        }
        Self::make(self.value().reshape(shape), Op::Reshape(self.clone()))
    }

    /// 2-D product `op(a)·op(b)` where `op` optionally transposes.
    pub fn matmul_t(&self, other: &Self, ta: bool, tb: bool) -> Self {
        Self::make(
            self.value().matmul(other.value(), ta, tb),
            Op::MatMul {
                a: self.clone(),
                b: other.clone(),
                ta,
                tb,
            },
        )
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(other, false, false)
    }

    pub fn conv2d(&self, w: &Self, geom: ConvGeom) -> Self {
        Self::make(
            conv_forward(self.value(), w.value(), &geom),
            Op::Conv {
                x: self.clone(),
                w: w.clone(),
                geom,
            },
        )
    }

    /// Transposed convolution: `self` is shaped like the output of the
    /// forward convolution described by `geom`.
    pub fn conv2d_transpose(&self, w: &Self, geom: ConvGeom) -> Self {
        Self::make(
            conv_backward_data(self.value(), w.value(), &geom),
            Op::ConvData {
                gy: self.clone(),
                w: w.clone(),
                geom,
            },
        )
    }

    fn conv2d_weight_grad(&self, gy: &Self, geom: ConvGeom) -> Self {
        Self::make(
            conv_backward_weight(self.value(), gy.value(), &geom),
            Op::ConvWeight {
                x: self.clone(),
                gy: gy.clone(),
                geom,
            },
        )
    }
}

/// Checks that two shapes broadcast; used by callers building graphs from
/// user-provided shapes.
pub fn can_broadcast(a: &[usize], b: &[usize]) -> bool {
    broadcast_shape(a, b).is_some()
}

/// Pulls cotangent `g` of `node` back to its parents.
fn vjp<T: Float>(node: &Var<T>, g: &Var<T>, create_graph: bool) -> Vec<(Var<T>, Var<T>)> {
    let keep = |v: &Var<T>| if create_graph { v.clone() } else { v.detach() };
    let this = keep(node);
    let one = T::one();
    let mut out = Vec::with_capacity(2);
    let mut push = |p: &Var<T>, grad: Var<T>| {
        if p.requires_grad() {
            out.push((p.clone(), grad));
        }
    };
    match &node.0.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            push(a, g.sum_to(a.shape()));
            push(b, g.sum_to(b.shape()));
        }
        Op::Sub(a, b) => {
            push(a, g.sum_to(a.shape()));
            push(b, g.neg().sum_to(b.shape()));
        }
        Op::Mul(a, b) => {
            if a.requires_grad() {
                push(a, g.mul(&keep(b)).sum_to(a.shape()));
            }
            if b.requires_grad() {
                push(b, g.mul(&keep(a)).sum_to(b.shape()));
            }
        }
        Op::MulConst(a, c) => push(a, g.mul_const(c)),
        Op::Scale(a, s) => push(a, g.scale(*s)),
        Op::AddScalar(a) => push(a, g.clone()),
        Op::Powf(a, p) => {
            let d = keep(a).powf(*p - one).scale(*p);
            push(a, g.mul(&d));
        }
        Op::Sqrt(a) => push(a, g.mul(&this.safe_recip().scale(T::of(0.5)))),
        Op::SafeRecip(a) => push(a, g.mul(&this.square().neg())),
        Op::Sigmoid(a) => {
            let d = this.mul(&this.neg().add_scalar(one));
            push(a, g.mul(&d));
        }
        Op::Softplus(a) => push(a, g.mul(&keep(a).sigmoid())),
        Op::Tanh(a) => {
            let d = this.square().neg().add_scalar(one);
            push(a, g.mul(&d));
        }
        Op::Sum(a) => push(a, g.broadcast_to(a.shape())),
        Op::BroadcastTo(a) => push(a, g.sum_to(a.shape())),
        Op::Reshape(a) => push(a, g.reshape(a.shape().to_vec())),
        Op::MatMul { a, b, ta, tb } => {
            let (ka, kb) = (keep(a), keep(b));
            if a.requires_grad() {
                let da = match (ta, tb) {
                    (false, false) => g.matmul_t(&kb, false, true),
                    (true, false) => kb.matmul_t(g, false, true),
                    (false, true) => g.matmul_t(&kb, false, false),
                    (true, true) => kb.matmul_t(g, true, true),
                };
                push(a, da);
            }
            if b.requires_grad() {
                let db = match (ta, tb) {
                    (false, false) => ka.matmul_t(g, true, false),
                    (true, false) => ka.matmul_t(g, false, false),
                    (false, true) => g.matmul_t(&ka, true, false),
                    (true, true) => g.matmul_t(&ka, true, true),
                };
                push(b, db);
            }
        }
        Op::Conv { x, w, geom } => {
            if x.requires_grad() {
                push(x, g.conv2d_transpose(&keep(w), *geom));
            }
            if w.requires_grad() {
                push(w, keep(x).conv2d_weight_grad(g, *geom));
            }
        }
        Op::ConvData { gy, w, geom } => {
            if gy.requires_grad() {
                push(gy, g.conv2d(&keep(w), *geom));
            }
            if w.requires_grad() {
                push(w, g.conv2d_weight_grad(&keep(gy), *geom));
            }
        }
        Op::ConvWeight { x, gy, geom } => {
            if x.requires_grad() {
                push(x, keep(gy).conv2d_transpose(g, *geom));
            }
            if gy.requires_grad() {
                push(gy, keep(x).conv2d(g, *geom));
            }
        }
    }
    out
}

/// Reverse-mode gradients of `output` (seeded with ones) with respect to
/// each of `inputs`. `None` marks inputs that `output` does not depend on.
///
/// With `create_graph`, the returned gradients are themselves part of the
/// graph and can be differentiated again.
pub fn grad<T: Float>(
    output: &Var<T>,
    inputs: &[&Var<T>],
    create_graph: bool,
) -> Vec<Option<Var<T>>> {
    if !output.requires_grad() {
        return vec![None; inputs.len()];
    }
    // Post-order DFS over the differentiable subgraph.
    let mut order: Vec<Var<T>> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Var<T>, bool)> = vec![(output.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !seen.insert(v.id()) {
            continue;
        }
        stack.push((v.clone(), true));
        for p in v.0.op.parents() {
            if p.requires_grad() && !seen.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }

    let seed = Var::constant(Tensor::ones(output.shape().to_vec()));
    let mut grads: HashMap<u64, Var<T>> = HashMap::new();
    grads.insert(output.id(), seed);
    let wanted: HashSet<u64> = inputs.iter().map(|v| v.id()).collect();

    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        if matches!(node.0.op, Op::Leaf) {
            continue;
        }
        if !wanted.contains(&node.id()) {
            grads.remove(&node.id());
        }
        for (parent, pg) in vjp(node, &g, create_graph) {
            let pg = if create_graph { pg } else { pg.detach() };
            match grads.remove(&parent.id()) {
                Some(acc) => {
                    grads.insert(parent.id(), acc.add(&pg));
                }
                None => {
                    grads.insert(parent.id(), pg);
                }
            }
        }
    }
    inputs.iter().map(|v| grads.get(&v.id()).cloned()).collect()
}
