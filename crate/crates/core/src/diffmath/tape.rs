//! The autodiff tape: node storage, forward evaluation, reverse sweep.

use std::cell::RefCell;

use thiserror::Error;

use super::scalar;

/// Errors surfaced by tape evaluation.
#[derive(Debug, Error)]
pub enum DiffError {
    /// A node's forward value is NaN or infinite. Reported before the reverse
    /// sweep so a poisoned graph never produces silently wrong gradients.
    #[error("non-finite forward value {value} at node {index} ({op})")]
    NonFiniteValue {
        index: usize,
        op: &'static str,
        value: f64,
    },
    /// The root handle does not belong to this tape.
    #[error("node {id} out of range for tape of length {len}")]
    UnknownNode { id: usize, len: usize },
}

/// Primitive operations. `*C` variants carry one folded constant operand in
/// the constant pool (indexed through an `args` slot); the remaining variants
/// are either classic scalar primitives or fused forms of short chains that
/// dominate the rendering hot path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Max,
    Min,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Softplus,
    Tanh,
    Relu,
    Sin,
    Cos,
    /// `a + k`
    AddC,
    /// `k - a`
    SubFromC,
    /// `a * k`
    MulC,
    /// `max(a, k)`
    MaxC,
    /// `|a| - b`
    AbsSub,
    /// `a + b*c`
    Fma,
    /// `a - b*c`
    Fms,
    /// `a + k*b`
    FmaC,
    /// `sqrt(a^2 + b^2 + c^2)`
    Norm3,
    /// `sqrt(max(a,0)^2 + max(b,0)^2 + max(c,0)^2)`
    Norm3Relu,
    /// `max(a, b, c)`
    Max3,
    /// `a + min(b, 0)`
    AddMin0,
    /// `a * (1 - b)`
    MulOneMinus,
    /// `max((a - b)/a, 0)`; the discrete surface-crossing opacity.
    SurfAlpha,
    /// `sigmoid(k * a)`
    SigmoidC,
    /// `exp(k*a + m)`; two pooled constants.
    ExpAff,
    /// Huber penalty of `a` with threshold `k`.
    HuberC,
    /// `max(1 - exp(softplus(-k*a) - softplus(-k*b)), 0)`: the surface-
    /// crossing opacity of one ray interval at sharpness `k`, written in the
    /// log domain. Mathematically identical to
    /// `max((sigmoid(k*a) - sigmoid(k*b)) / sigmoid(k*a), 0)` via
    /// `sigmoid(x) = exp(-softplus(-x))`, but never divides by an
    /// underflowed sigmoid when the interval sits deep inside a shape.
    IntervalAlpha,
    /// Signed distance from a constant world point to a yaw-posed box, as a
    /// single node. Parents live in the wide-argument pool in the order
    /// `[hx, hy, hz, lx, ly, lz, cos_yaw, sin_yaw]`; the point's three
    /// coordinates sit in the constant pool. Values are bitwise identical to
    /// the chain `abs(R^T(p - loc)) - h` -> `norm3_relu + min(max3, 0)`, and
    /// the backward pass applies the same subgradient conventions that chain
    /// uses at each kink (zero at `|x|`'s kink, earliest argument on `max3`
    /// ties, active min-branch at 0).
    CuboidSdf,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Abs => "abs",
            Op::Max => "max",
            Op::Min => "min",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::AddC => "add_c",
            Op::SubFromC => "sub_from_c",
            Op::MulC => "mul_c",
            Op::MaxC => "max_c",
            Op::AbsSub => "abs_sub",
            Op::Fma => "fma",
            Op::Fms => "fms",
            Op::FmaC => "fma_c",
            Op::Norm3 => "norm3",
            Op::Norm3Relu => "norm3_relu",
            Op::Max3 => "max3",
            Op::AddMin0 => "add_min0",
            Op::MulOneMinus => "mul_one_minus",
            Op::SurfAlpha => "surf_alpha",
            Op::SigmoidC => "sigmoid_c",
            Op::ExpAff => "exp_aff",
            Op::HuberC => "huber_c",
            Op::IntervalAlpha => "interval_alpha",
            Op::CuboidSdf => "cuboid_sdf",
        }
    }
}

/// One recorded operation: forward value, parent slots, opcode. Packed into
/// 24 bytes so the reverse sweep streams one contiguous array.
#[derive(Clone, Copy)]
struct Node {
    val: f64,
    args: [u32; 3],
    op: Op,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    /// Pool of folded constant operands for the `*C` ops.
    consts: Vec<f64>,
    /// Pool of parent ids for ops with more than three parents; such a node's
    /// first `args` slot is its offset into this pool.
    wide: Vec<u32>,
    /// Adjoint buffer; valid after `backward`, reused across sweeps.
    adj: Vec<f64>,
    /// Leaf node ids in creation order; `backward` reports gradients in this order.
    leaves: Vec<u32>,
}

/// Append-only record of a scalar computation. Values are evaluated eagerly
/// on append; node order is the topological order, and the reverse sweep
/// visits nodes in reverse append order.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<TapeInner>,
}

/// Handle to one tape node. Cheap to copy; all arithmetic on `Var`s appends
/// nodes to the owning tape. The forward value rides along in the handle, so
/// reading it never touches the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: u32,
    val: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes currently recorded.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all nodes but keep allocated capacity, so per-chunk graphs reuse
    /// their buffers across iterations.
    pub fn reset(&self) {
        let mut t = self.inner.borrow_mut();
        t.nodes.clear();
        t.consts.clear();
        t.wide.clear();
        t.leaves.clear();
    }

    /// Create a differentiable leaf (optimizable parameter).
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let mut t = self.inner.borrow_mut();
        let id = t.nodes.len() as u32;
        t.nodes.push(Node {
            val: value,
            args: [0; 3],
            op: Op::Leaf,
        });
        t.leaves.push(id);
        Var {
            tape: self,
            id,
            val: value,
        }
    }

    fn push(&self, op: Op, args: [u32; 3], val: f64) -> Var<'_> {
        let mut t = self.inner.borrow_mut();
        let id = t.nodes.len() as u32;
        t.nodes.push(Node { val, args, op });
        Var {
            tape: self,
            id,
            val,
        }
    }

    /// Push a node with one folded constant; returns the node handle.
    fn push_c(&self, op: Op, a: u32, c: f64, val: f64) -> Var<'_> {
        let mut t = self.inner.borrow_mut();
        let cid = t.consts.len() as u32;
        t.consts.push(c);
        let id = t.nodes.len() as u32;
        t.nodes.push(Node {
            val,
            args: [a, cid, 0],
            op,
        });
        Var {
            tape: self,
            id,
            val,
        }
    }

    /// Accumulate adjoints of `root` with respect to every node, and return
    /// the leaf gradients in leaf creation order.
    ///
    /// The sweep is deterministic: node visitation order and accumulation
    /// order are fixed by the record, so repeated calls produce bit-identical
    /// results. Any non-finite forward value is reported as an error naming
    /// the offending node.
    pub fn backward(&self, root: Var<'_>) -> Result<Vec<f64>, DiffError> {
        debug_assert!(std::ptr::eq(root.tape, self), "root from a foreign tape");
        let mut t = self.inner.borrow_mut();
        let n = t.nodes.len();
        if root.id as usize >= n {
            return Err(DiffError::UnknownNode {
                id: root.id as usize,
                len: n,
            });
        }
        // Cheap whole-tape health check: the running max of |value| is finite
        // iff every value is finite (NaN poisons `max` via the comparison).
        let mut max_abs = 0.0f64;
        let mut all_finite = true;
        for node in &t.nodes {
            max_abs = max_abs.max(node.val.abs());
            all_finite &= node.val.is_finite();
        }
        if !(max_abs.is_finite() && all_finite) {
            let idx = t
                .nodes
                .iter()
                .position(|node| !node.val.is_finite())
                .expect("non-finite value exists");
            return Err(DiffError::NonFiniteValue {
                index: idx,
                op: t.nodes[idx].op.name(),
                value: t.nodes[idx].val,
            });
        }

        let TapeInner {
            nodes,
            consts,
            wide,
            adj,
            leaves,
        } = &mut *t;
        let vals = |x: usize| nodes[x].val;
        adj.clear();
        adj.resize(n, 0.0);
        adj[root.id as usize] = 1.0;

        for i in (0..n).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let [a, b, c] = nodes[i].args;
            let (a, b, c) = (a as usize, b as usize, c as usize);
            match nodes[i].op {
                Op::Leaf => {}
                Op::Add => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Sub => {
                    adj[a] += g;
                    adj[b] -= g;
                }
                Op::Mul => {
                    adj[a] += g * vals(b);
                    adj[b] += g * vals(a);
                }
                Op::Div => {
                    let inv = 1.0 / vals(b);
                    adj[a] += g * inv;
                    adj[b] -= g * vals(i) * inv;
                }
                Op::Neg => adj[a] -= g,
                Op::Abs => {
                    let x = vals(a);
                    if x > 0.0 {
                        adj[a] += g;
                    } else if x < 0.0 {
                        adj[a] -= g;
                    }
                }
                Op::Max => {
                    if vals(a) >= vals(b) {
                        adj[a] += g;
                    } else {
                        adj[b] += g;
                    }
                }
                Op::Min => {
                    if vals(a) <= vals(b) {
                        adj[a] += g;
                    } else {
                        adj[b] += g;
                    }
                }
                Op::Exp => adj[a] += g * vals(i),
                Op::Ln => adj[a] += g / vals(a),
                Op::Sqrt => adj[a] += g * 0.5 / vals(i),
                Op::Sigmoid => {
                    let s = vals(i);
                    adj[a] += g * s * (1.0 - s);
                }
                Op::Softplus => adj[a] += g * scalar::sigmoid(vals(a)),
                Op::Tanh => {
                    let y = vals(i);
                    adj[a] += g * (1.0 - y * y);
                }
                Op::Relu => {
                    if vals(a) > 0.0 {
                        adj[a] += g;
                    }
                }
                Op::Sin => adj[a] += g * vals(a).cos(),
                Op::Cos => adj[a] -= g * vals(a).sin(),
                Op::AddC => adj[a] += g,
                Op::SubFromC => adj[a] -= g,
                Op::MulC => adj[a] += g * consts[b],
                Op::MaxC => {
                    if vals(a) >= consts[b] {
                        adj[a] += g;
                    }
                }
                Op::AbsSub => {
                    let x = vals(a);
                    if x > 0.0 {
                        adj[a] += g;
                    } else if x < 0.0 {
                        adj[a] -= g;
                    }
                    adj[b] -= g;
                }
                Op::Fma => {
                    adj[a] += g;
                    adj[b] += g * vals(c);
                    adj[c] += g * vals(b);
                }
                Op::Fms => {
                    adj[a] += g;
                    adj[b] -= g * vals(c);
                    adj[c] -= g * vals(b);
                }
                Op::FmaC => {
                    adj[a] += g;
                    adj[b] += g * consts[c];
                }
                Op::Norm3 => {
                    let r = vals(i);
                    if r > 0.0 {
                        let inv = g / r;
                        adj[a] += inv * vals(a);
                        adj[b] += inv * vals(b);
                        adj[c] += inv * vals(c);
                    }
                }
                Op::Norm3Relu => {
                    let r = vals(i);
                    if r > 0.0 {
                        let inv = g / r;
                        if vals(a) > 0.0 {
                            adj[a] += inv * vals(a);
                        }
                        if vals(b) > 0.0 {
                            adj[b] += inv * vals(b);
                        }
                        if vals(c) > 0.0 {
                            adj[c] += inv * vals(c);
                        }
                    }
                }
                Op::Max3 => {
                    let m = vals(i);
                    if vals(a) == m {
                        adj[a] += g;
                    } else if vals(b) == m {
                        adj[b] += g;
                    } else {
                        adj[c] += g;
                    }
                }
                Op::AddMin0 => {
                    adj[a] += g;
                    if vals(b) <= 0.0 {
                        adj[b] += g;
                    }
                }
                Op::MulOneMinus => {
                    adj[a] += g * (1.0 - vals(b));
                    adj[b] -= g * vals(a);
                }
                Op::SurfAlpha => {
                    if vals(i) > 0.0 {
                        let inv = 1.0 / vals(a);
                        adj[a] += g * vals(b) * inv * inv;
                        adj[b] -= g * inv;
                    }
                }
                Op::SigmoidC => {
                    let s = vals(i);
                    adj[a] += g * consts[b] * s * (1.0 - s);
                }
                Op::ExpAff => adj[a] += g * consts[b] * vals(i),
                Op::HuberC => {
                    let d = consts[b];
                    adj[a] += g * vals(a).clamp(-d, d);
                }
                Op::IntervalAlpha => {
                    let alpha = vals(i);
                    // Clamped at zero (exiting or flat interval): no flow.
                    if alpha > 0.0 {
                        let s = consts[c];
                        let ratio = 1.0 - alpha;
                        adj[a] += g * ratio * s * scalar::sigmoid(-s * vals(a));
                        adj[b] -= g * ratio * s * scalar::sigmoid(-s * vals(b));
                    }
                }
                Op::CuboidSdf => {
                    let par = &wide[a..a + 8];
                    let (hx, hy, hz) = (vals(par[0] as usize), vals(par[1] as usize), vals(par[2] as usize));
                    let (lx, ly, lz) = (vals(par[3] as usize), vals(par[4] as usize), vals(par[5] as usize));
                    let (cy, sy) = (vals(par[6] as usize), vals(par[7] as usize));
                    let (px, py, pz) = (consts[b], consts[b + 1], consts[b + 2]);
                    // Recompute the forward intermediates; cheaper than
                    // storing nine extra slots per node.
                    let dx = px - lx;
                    let dy = py - ly;
                    let dz = pz - lz;
                    let u = (cy * dx) - sy * dz;
                    let w = (sy * dx) + cy * dz;
                    let qx = u.abs() - hx;
                    let qy = dy.abs() - hy;
                    let qz = w.abs() - hz;
                    let rx = qx.max(0.0);
                    let ry = qy.max(0.0);
                    let rz = qz.max(0.0);
                    let outside = (rx * rx + ry * ry + rz * rz).sqrt();
                    let m = scalar::max_first(scalar::max_first(qx, qy), qz);
                    let mut g_qx = 0.0;
                    let mut g_qy = 0.0;
                    let mut g_qz = 0.0;
                    // `outside + min(m, 0)`: the min branch is active at 0,
                    // and the max3 tie goes to the earliest argument.
                    if m <= 0.0 {
                        if qx == m {
                            g_qx += g;
                        } else if qy == m {
                            g_qy += g;
                        } else {
                            g_qz += g;
                        }
                    }
                    if outside > 0.0 {
                        let inv = g / outside;
                        if qx > 0.0 {
                            g_qx += inv * qx;
                        }
                        if qy > 0.0 {
                            g_qy += inv * qy;
                        }
                        if qz > 0.0 {
                            g_qz += inv * qz;
                        }
                    }
                    // `|x| - h`: half extents get the negated adjoint, the
                    // local coordinate its sign (zero exactly at the kink).
                    adj[par[0] as usize] -= g_qx;
                    adj[par[1] as usize] -= g_qy;
                    adj[par[2] as usize] -= g_qz;
                    let sgn = |x: f64, gq: f64| {
                        if x > 0.0 {
                            gq
                        } else if x < 0.0 {
                            -gq
                        } else {
                            0.0
                        }
                    };
                    let g_u = sgn(u, g_qx);
                    let g_dy = sgn(dy, g_qy);
                    let g_w = sgn(w, g_qz);
                    // u = cos*dx - sin*dz, w = sin*dx + cos*dz, d = p - loc.
                    adj[par[6] as usize] += g_u * dx + g_w * dz;
                    adj[par[7] as usize] += g_w * dx - g_u * dz;
                    adj[par[3] as usize] -= g_u * cy + g_w * sy;
                    adj[par[4] as usize] -= g_dy;
                    adj[par[5] as usize] -= g_w * cy - g_u * sy;
                }
            }
        }

        Ok(leaves.iter().map(|&l| adj[l as usize]).collect())
    }

    /// Adjoint of an arbitrary node from the most recent `backward` sweep.
    pub fn adjoint_of(&self, v: Var<'_>) -> f64 {
        self.inner.borrow().adj[v.id as usize]
    }
}

impl<'t> Var<'t> {
    /// Forward value of this node (carried in the handle; free to read).
    pub fn value(self) -> f64 {
        self.val
    }

    /// Position of this node on the tape.
    pub fn index(self) -> usize {
        self.id as usize
    }

    fn binary(self, o: Var<'t>, op: Op, val: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, o.tape), "vars from different tapes");
        self.tape.push(op, [self.id, o.id, 0], val)
    }

    fn unary(self, op: Op, val: f64) -> Var<'t> {
        self.tape.push(op, [self.id, 0, 0], val)
    }

    pub fn abs(self) -> Var<'t> {
        let v = self.value().abs();
        self.unary(Op::Abs, v)
    }

    /// `max(self, o)`; a tie routes the gradient to `self`.
    pub fn max(self, o: Var<'t>) -> Var<'t> {
        let v = scalar::max_first(self.value(), o.value());
        self.binary(o, Op::Max, v)
    }

    /// `min(self, o)`; a tie routes the gradient to `self`.
    pub fn min(self, o: Var<'t>) -> Var<'t> {
        let v = scalar::min_first(self.value(), o.value());
        self.binary(o, Op::Min, v)
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().exp();
        self.unary(Op::Exp, v)
    }

    pub fn ln(self) -> Var<'t> {
        let v = self.value().ln();
        self.unary(Op::Ln, v)
    }

    pub fn sqrt(self) -> Var<'t> {
        let v = self.value().sqrt();
        self.unary(Op::Sqrt, v)
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = scalar::sigmoid(self.value());
        self.unary(Op::Sigmoid, v)
    }

    pub fn softplus(self) -> Var<'t> {
        let v = scalar::softplus(self.value());
        self.unary(Op::Softplus, v)
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().tanh();
        self.unary(Op::Tanh, v)
    }

    /// `max(self, 0)` with zero gradient at exactly 0 (the inactive side),
    /// consistent with `abs` at its kink.
    pub fn relu(self) -> Var<'t> {
        let v = self.value().max(0.0);
        self.unary(Op::Relu, v)
    }

    pub fn sin(self) -> Var<'t> {
        let v = self.value().sin();
        self.unary(Op::Sin, v)
    }

    pub fn cos(self) -> Var<'t> {
        let v = self.value().cos();
        self.unary(Op::Cos, v)
    }

    pub fn add_c(self, c: f64) -> Var<'t> {
        let v = self.value() + c;
        self.tape.push_c(Op::AddC, self.id, c, v)
    }

    /// `c - self`.
    pub fn c_sub(self, c: f64) -> Var<'t> {
        let v = c - self.value();
        self.tape.push_c(Op::SubFromC, self.id, c, v)
    }

    pub fn mul_c(self, c: f64) -> Var<'t> {
        let v = self.value() * c;
        self.tape.push_c(Op::MulC, self.id, c, v)
    }

    pub fn max_c(self, c: f64) -> Var<'t> {
        let v = scalar::max_first(self.value(), c);
        self.tape.push_c(Op::MaxC, self.id, c, v)
    }

    /// `|self| - o`.
    pub fn abs_sub(self, o: Var<'t>) -> Var<'t> {
        let v = self.value().abs() - o.value();
        self.binary(o, Op::AbsSub, v)
    }

    /// `self + b*c`.
    pub fn fma(self, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        let v = self.value() + b.value() * c.value();
        self.tape.push(Op::Fma, [self.id, b.id, c.id], v)
    }

    /// `self - b*c`.
    pub fn fms(self, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        let v = self.value() - b.value() * c.value();
        self.tape.push(Op::Fms, [self.id, b.id, c.id], v)
    }

    /// `self + k*b`.
    pub fn fma_c(self, k: f64, b: Var<'t>) -> Var<'t> {
        let v = self.value() + k * b.value();
        let mut t = self.tape.inner.borrow_mut();
        let cid = t.consts.len() as u32;
        t.consts.push(k);
        let id = t.nodes.len() as u32;
        t.nodes.push(Node {
            val: v,
            args: [self.id, b.id, cid],
            op: Op::FmaC,
        });
        Var {
            tape: self.tape,
            id,
            val: v,
        }
    }

    /// Euclidean norm of `(a, b, c)`; gradient zero at the origin.
    pub fn norm3(a: Var<'t>, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        let (x, y, z) = (a.value(), b.value(), c.value());
        let v = (x * x + y * y + z * z).sqrt();
        a.tape.push(Op::Norm3, [a.id, b.id, c.id], v)
    }

    /// Euclidean norm of `(max(a,0), max(b,0), max(c,0))`.
    pub fn norm3_relu(a: Var<'t>, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        let (x, y, z) = (
            a.value().max(0.0),
            b.value().max(0.0),
            c.value().max(0.0),
        );
        let v = (x * x + y * y + z * z).sqrt();
        a.tape.push(Op::Norm3Relu, [a.id, b.id, c.id], v)
    }

    /// `max(a, b, c)`; ties route the gradient to the earliest argument.
    pub fn max3(a: Var<'t>, b: Var<'t>, c: Var<'t>) -> Var<'t> {
        let v = scalar::max_first(scalar::max_first(a.value(), b.value()), c.value());
        a.tape.push(Op::Max3, [a.id, b.id, c.id], v)
    }

    /// `self + min(o, 0)`; at `o == 0` the min-branch gradient stays active
    /// (ties to the variable argument).
    pub fn add_min0(self, o: Var<'t>) -> Var<'t> {
        let v = self.value() + o.value().min(0.0);
        self.binary(o, Op::AddMin0, v)
    }

    /// `self * (1 - o)`; transmittance update.
    pub fn mul_one_minus(self, o: Var<'t>) -> Var<'t> {
        let v = self.value() * (1.0 - o.value());
        self.binary(o, Op::MulOneMinus, v)
    }

    /// `max((self - o)/self, 0)`: the discrete opacity of a sample interval
    /// whose surface-crossing CDF drops from `self` to `o`. The ratio is <= 1
    /// whenever `o >= 0`, which callers guarantee (sigmoids are positive).
    pub fn surf_alpha(self, o: Var<'t>) -> Var<'t> {
        let v = ((self.value() - o.value()) / self.value()).max(0.0);
        self.binary(o, Op::SurfAlpha, v)
    }

    /// `sigmoid(k * self)`.
    pub fn sigmoid_scaled(self, k: f64) -> Var<'t> {
        let v = scalar::sigmoid(k * self.value());
        self.tape.push_c(Op::SigmoidC, self.id, k, v)
    }

    /// `exp(k*self + m)`.
    pub fn exp_affine(self, k: f64, m: f64) -> Var<'t> {
        let v = (k * self.value() + m).exp();
        let mut t = self.tape.inner.borrow_mut();
        let cid = t.consts.len() as u32;
        t.consts.push(k);
        t.consts.push(m);
        let id = t.nodes.len() as u32;
        t.nodes.push(Node {
            val: v,
            args: [self.id, cid, cid + 1],
            op: Op::ExpAff,
        });
        Var {
            tape: self.tape,
            id,
            val: v,
        }
    }

    /// Huber penalty with threshold `delta`.
    pub fn huber(self, delta: f64) -> Var<'t> {
        let v = scalar::huber(self.value(), delta);
        self.tape.push_c(Op::HuberC, self.id, delta, v)
    }

    /// Signed distance from the constant world point `p` to the box whose
    /// half extents, center, and yaw cosine/sine are tape nodes — one fused
    /// node with eight parents. Values equal the unfused chain bitwise; see
    /// [`Op::CuboidSdf`] for the subgradient conventions.
    pub fn cuboid_sdf(p: [f64; 3], half: &[Var<'t>; 3], loc: &[Var<'t>; 3], cos_yaw: Var<'t>, sin_yaw: Var<'t>) -> Var<'t> {
        let tape = half[0].tape;
        debug_assert!(
            half.iter().chain(loc.iter()).chain([&cos_yaw, &sin_yaw]).all(|v| std::ptr::eq(v.tape, tape)),
            "vars from different tapes"
        );
        let v = scalar::cuboid_sdf(
            p,
            half[0].value(),
            half[1].value(),
            half[2].value(),
            loc[0].value(),
            loc[1].value(),
            loc[2].value(),
            cos_yaw.value(),
            sin_yaw.value(),
        );
        let mut t = tape.inner.borrow_mut();
        let ws = t.wide.len() as u32;
        t.wide.extend([
            half[0].id, half[1].id, half[2].id, loc[0].id, loc[1].id, loc[2].id, cos_yaw.id,
            sin_yaw.id,
        ]);
        let cid = t.consts.len() as u32;
        t.consts.extend(p);
        let id = t.nodes.len() as u32;
        t.nodes.push(Node {
            val: v,
            args: [ws, cid, 0],
            op: Op::CuboidSdf,
        });
        Var { tape, id, val: v }
    }

    /// Opacity of the ray interval whose endpoint distances are `self`
    /// (entry) and `exit`, at sharpness `s`. See [`scalar::interval_alpha`].
    pub fn interval_alpha(self, exit: Var<'t>, s: f64) -> Var<'t> {
        let v = scalar::interval_alpha(self.value(), exit.value(), s);
        let mut t = self.tape.inner.borrow_mut();
        let cid = t.consts.len() as u32;
        t.consts.push(s);
        let id = t.nodes.len() as u32;
        t.nodes.push(Node {
            val: v,
            args: [self.id, exit.id, cid],
            op: Op::IntervalAlpha,
        });
        Var {
            tape: self.tape,
            id,
            val: v,
        }
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        let v = self.value() + o.value();
        self.binary(o, Op::Add, v)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        let v = self.value() - o.value();
        self.binary(o, Op::Sub, v)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        let v = self.value() * o.value();
        self.binary(o, Op::Mul, v)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let v = self.value() / o.value();
        self.binary(o, Op::Div, v)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        let v = -self.value();
        self.unary(Op::Neg, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_rel(actual: f64, expected: f64, tol: f64, what: &str) {
        let denom = expected.abs().max(1e-12);
        let rel = (actual - expected).abs() / denom;
        assert!(
            rel <= tol,
            "{what}: actual {actual}, expected {expected}, rel err {rel:.3e} > {tol:.1e}"
        );
    }

    #[test]
    fn product_rule() {
        let t = Tape::new();
        let x = t.leaf(2.0);
        let y = t.leaf(3.0);
        let r = x * y;
        let g = t.backward(r).unwrap();
        assert_eq!(g, vec![3.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let t = Tape::new();
        let x = t.leaf(0.0);
        let r = x.sigmoid();
        assert_eq!(r.value(), 0.5);
        let g = t.backward(r).unwrap();
        assert_eq!(g[0], 0.25);
    }

    #[test]
    fn root_adjoint_is_one_and_interior_adjoints_chain() {
        let t = Tape::new();
        let x = t.leaf(1.5);
        let u = x.mul_c(2.0); // u = 2x
        let r = u * u; // r = 4x^2, dr/du = 2u = 6, dr/dx = 8x = 12
        let g = t.backward(r).unwrap();
        assert_eq!(t.adjoint_of(r), 1.0);
        assert_eq!(t.adjoint_of(u), 6.0);
        assert_eq!(g[0], 12.0);
    }

    #[test]
    fn non_finite_forward_value_is_reported_with_node() {
        let t = Tape::new();
        let x = t.leaf(-1.0);
        let r = x.ln(); // NaN
        match t.backward(r) {
            Err(DiffError::NonFiniteValue { index, op, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(op, "ln");
            }
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
    }

    #[test]
    fn backward_is_deterministic_across_reruns() {
        let t = Tape::new();
        let x = t.leaf(0.731);
        let y = t.leaf(-1.207);
        let r = (x * y + x.sigmoid()).tanh() * (y.softplus() + x.exp());
        let g1 = t.backward(r).unwrap();
        let g2 = t.backward(r).unwrap();
        assert_eq!(g1[0].to_bits(), g2[0].to_bits());
        assert_eq!(g1[1].to_bits(), g2[1].to_bits());
    }

    #[test]
    fn interval_alpha_matches_quotient_form_and_survives_depth() {
        // Moderate regime: agrees with the textbook quotient of sigmoids.
        for &(fi, fo, s) in &[
            (0.5, 0.3, 10.0),
            (0.05, -0.05, 40.0),
            (-0.2, -0.4, 25.0),
            (0.3, 0.8, 10.0), // exiting: clamps to 0
        ] {
            let quotient = {
                let pi = scalar::sigmoid(s * fi);
                let po = scalar::sigmoid(s * fo);
                ((pi - po) / pi).max(0.0)
            };
            let stable = scalar::interval_alpha(fi, fo, s);
            assert!(
                (stable - quotient).abs() <= 1e-14,
                "({fi},{fo},{s}): {stable} vs {quotient}"
            );
        }

        // Deep inside a shape both sigmoids underflow to zero and the
        // quotient form's 0/0 gets masked to "fully transparent" by the
        // max-clamp; the log form keeps the exact limit value
        // 1 - exp(s*(f_exit - f_entry)).
        let (fi, fo, s) = (-4.0, -4.01, 200.0);
        let quotient = {
            let pi = scalar::sigmoid(s * fi);
            let po = scalar::sigmoid(s * fo);
            ((pi - po) / pi).max(0.0)
        };
        assert_eq!(
            quotient, 0.0,
            "expected the quotient form to silently miss the surface"
        );
        let stable = scalar::interval_alpha(fi, fo, s);
        assert!((stable - (1.0 - (-2.0f64).exp())).abs() < 1e-12);

        // Gradients keep flowing there too.
        let t = Tape::new();
        let a = t.leaf(fi);
        let b = t.leaf(fo);
        let root = a.interval_alpha(b, s);
        let g = t.backward(root).unwrap();
        let h = 1e-7;
        let fd_a =
            (scalar::interval_alpha(fi + h, fo, s) - scalar::interval_alpha(fi - h, fo, s))
                / (2.0 * h);
        let fd_b =
            (scalar::interval_alpha(fi, fo + h, s) - scalar::interval_alpha(fi, fo - h, s))
                / (2.0 * h);
        assert_rel(g[0], fd_a, 1e-6, "entry gradient");
        assert_rel(g[1], fd_b, 1e-6, "exit gradient");
    }

    #[test]
    fn subgradient_conventions_at_kinks() {
        let t = Tape::new();
        let x = t.leaf(0.0);
        let r = x.abs();
        let g = t.backward(r).unwrap();
        assert_eq!(g[0], 0.0, "abs'(0) = 0");

        let t = Tape::new();
        let a = t.leaf(1.0);
        let b = t.leaf(1.0);
        let g = t.backward(a.max(b)).unwrap();
        assert_eq!(g, vec![1.0, 0.0], "max tie goes to the first argument");
        let g = t.backward(a.min(b)).unwrap();
        assert_eq!(g, vec![1.0, 0.0], "min tie goes to the first argument");
    }

    /// The fused box-distance node against the equivalent unfused chain:
    /// identical forward bits, matching gradients, and the same subgradient
    /// choices at every kink.
    #[test]
    fn fused_box_distance_matches_the_unfused_chain() {
        fn chain<'t>(t: &'t Tape, p: [f64; 3], q: [f64; 7]) -> Var<'t> {
            let h = [t.leaf(q[0]), t.leaf(q[1]), t.leaf(q[2])];
            let l = [t.leaf(q[3]), t.leaf(q[4]), t.leaf(q[5])];
            let yaw = t.leaf(q[6]);
            let (c, s) = (yaw.cos(), yaw.sin());
            let dx = l[0].c_sub(p[0]);
            let dy = l[1].c_sub(p[1]);
            let dz = l[2].c_sub(p[2]);
            let u = (c * dx).fms(s, dz);
            let w = (s * dx).fma(c, dz);
            let qx = u.abs_sub(h[0]);
            let qy = dy.abs_sub(h[1]);
            let qz = w.abs_sub(h[2]);
            Var::norm3_relu(qx, qy, qz).add_min0(Var::max3(qx, qy, qz))
        }
        fn fused<'t>(t: &'t Tape, p: [f64; 3], q: [f64; 7]) -> Var<'t> {
            let h = [t.leaf(q[0]), t.leaf(q[1]), t.leaf(q[2])];
            let l = [t.leaf(q[3]), t.leaf(q[4]), t.leaf(q[5])];
            let yaw = t.leaf(q[6]);
            Var::cuboid_sdf(p, &h, &l, yaw.cos(), yaw.sin())
        }

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut cases: Vec<([f64; 3], [f64; 7])> = (0..200)
            .map(|_| {
                let q = [
                    rng.gen_range(0.3..2.5),
                    rng.gen_range(0.3..2.5),
                    rng.gen_range(0.3..2.5),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.3..3.3),
                ];
                let p = [
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                ];
                (p, q)
            })
            .collect();
        // Points sitting exactly on kinks: the box center (all |.| kinks and
        // a max3 tie), a face, an edge, and a corner.
        let qk = [1.0, 1.0, 1.0, 0.5, -0.25, 2.0, 0.0];
        cases.push(([0.5, -0.25, 2.0], qk)); // center
        cases.push(([1.5, -0.25, 2.0], qk)); // on a face
        cases.push(([1.5, 0.75, 2.0], qk)); // on an edge
        cases.push(([1.5, 0.75, 3.0], qk)); // on a corner
        cases.push(([0.5, 0.75, 2.0], qk)); // face of the inside max

        for (i, &(p, q)) in cases.iter().enumerate() {
            let tc = Tape::new();
            let rc = chain(&tc, p, q);
            let gc = tc.backward(rc).unwrap();
            let tf = Tape::new();
            let rf = fused(&tf, p, q);
            let gf = tf.backward(rf).unwrap();
            assert_eq!(
                rc.value().to_bits(),
                rf.value().to_bits(),
                "case {i}: value {} vs {}",
                rc.value(),
                rf.value()
            );
            for k in 0..7 {
                assert!(
                    (gc[k] - gf[k]).abs() <= 1e-12 * gc[k].abs().max(1.0),
                    "case {i} param {k}: chain grad {} vs fused {}",
                    gc[k],
                    gf[k]
                );
            }
        }
    }

    /// Evaluates one composite expression that exercises every primitive,
    /// as plain `f64` at the given point.
    fn composite_f64(p: &[f64; 3]) -> f64 {
        let (x, y, z) = (p[0], p[1], p[2]);
        let sig = scalar::sigmoid(x * y);
        let soft = scalar::softplus(z).tanh() * (x / (y * y + 1.3)).exp();
        let hub = scalar::huber(x.abs() - y, 1.0);
        let n3r = {
            let (a, b, c) = (x.max(0.0), y.max(0.0), z.max(0.0));
            (a * a + b * b + c * c).sqrt()
        };
        let n3 = (x * x + y * y + z * z).sqrt().ln();
        let m3 = scalar::max_first(scalar::max_first(x, y), z * 0.5);
        let sa = {
            let a = x + 3.0;
            let b = scalar::softplus(y);
            ((a - b) / a).max(0.0)
        };
        let tail = (x + y * z) - (z - x * y) + (2.5 - z) + x * 0.75 + x.max(0.25)
            + (y + (x.min(0.0)).min(0.0))
            + x * (1.0 - scalar::sigmoid(2.0 * z))
            + (-0.5 * y + 0.25).exp()
            + (x / z)
            - y.abs()
            + (x * 1.3).sin()
            + (y - z).cos()
            + scalar::interval_alpha(x, y, 2.0);
        sig + soft + hub + n3r.sqrt() + n3 + m3 + sa + tail
    }

    /// Same composite built on a tape.
    fn composite_tape<'t>(t: &'t Tape, p: &[f64; 3]) -> (Var<'t>, [Var<'t>; 3]) {
        let x = t.leaf(p[0]);
        let y = t.leaf(p[1]);
        let z = t.leaf(p[2]);
        let sig = (x * y).sigmoid();
        let soft = z.softplus().tanh() * (x / (y * y).add_c(1.3)).exp();
        let hub = x.abs_sub(y).huber(1.0);
        let n3r = Var::norm3_relu(x, y, z);
        let n3 = Var::norm3(x, y, z).ln();
        let m3 = Var::max3(x, y, z.mul_c(0.5));
        let sa = x.add_c(3.0).surf_alpha(y.softplus());
        let tail = x.fma(y, z) - (z.fms(x, y)) + z.c_sub(2.5) + x.mul_c(0.75) + x.max_c(0.25)
            + y.add_min0(x.min(t.leaf(0.0)))
            + x.mul_one_minus(z.sigmoid_scaled(2.0))
            + y.exp_affine(-0.5, 0.25)
            + (x / z)
            - y.abs()
            + x.mul_c(1.3).sin()
            + (y - z).cos()
            + x.interval_alpha(y, 2.0);
        let root = sig + soft + hub + n3r.sqrt() + n3 + m3 + sa + tail;
        (root, [x, y, z])
    }

    /// Every primitive matches central finite differences at 100 random
    /// points placed away from non-differentiable kinks.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            // Domain chosen so |.|, max, min, relu arguments stay away from
            // their kinks: x in [0.3, 2], y in [-2.5, -0.4], z in [2.3, 3.4].
            let p = [
                rng.gen_range(0.3..2.0),
                rng.gen_range(-2.5..-0.4),
                rng.gen_range(2.3..3.4),
            ];
            let t = Tape::new();
            let (root, _) = composite_tape(&t, &p);
            assert_rel(
                root.value(),
                composite_f64(&p),
                1e-12,
                &format!("trial {trial}: forward value"),
            );
            let grads = t.backward(root).unwrap();
            let h = 1e-5;
            for k in 0..3 {
                let mut lo = p;
                let mut hi = p;
                lo[k] -= h;
                hi[k] += h;
                let fd = (composite_f64(&hi) - composite_f64(&lo)) / (2.0 * h);
                // Tolerance widened by the FD truncation error scale.
                let denom = fd.abs().max(1e-4);
                let rel = (grads[k] - fd).abs() / denom;
                assert!(
                    rel <= 1e-4,
                    "trial {trial}, leaf {k}: adjoint {} vs fd {fd}, rel {rel:.2e}",
                    grads[k]
                );
            }
        }
    }

    #[test]
    fn reset_preserves_capacity_but_clears_nodes() {
        let t = Tape::new();
        let x = t.leaf(1.0);
        let _ = x.exp() + x;
        assert_eq!(t.len(), 3);
        t.reset();
        assert_eq!(t.len(), 0);
        let y = t.leaf(2.0);
        let g = t.backward(y.mul_c(4.0)).unwrap();
        assert_eq!(g, vec![4.0]);
    }
}
