//! Generic scalar backend so field evaluation and rendering can run either as
//! plain `f64` (forward only: oracles, sampling weights, pruning decisions) or
//! as tape [`Var`]s (when gradients are needed), from a single implementation.
//!
//! Constants stay `f64` on both backends: every operation mixing a constant is
//! a dedicated folded form, so the tape backend never materializes constant
//! nodes. Both backends compute values through the same scalar kernels, which
//! keeps the two paths bitwise identical.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar;
use super::tape::Var;

/// A differentiable-or-plain scalar.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value (forward value for tape nodes).
    fn val(self) -> f64;

    fn abs(self) -> Self;
    /// Ties route to `self`.
    fn max(self, o: Self) -> Self;
    /// Ties route to `self`.
    fn min(self, o: Self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;
    fn softplus(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// `self + c`
    fn add_c(self, c: f64) -> Self;
    /// `c - self`
    fn c_sub(self, c: f64) -> Self;
    /// `self * c`
    fn mul_c(self, c: f64) -> Self;
    /// `max(self, c)`
    fn max_c(self, c: f64) -> Self;
    /// `|self| - o`
    fn abs_sub(self, o: Self) -> Self;
    /// `self + b*c`
    fn fma(self, b: Self, c: Self) -> Self;
    /// `self - b*c`
    fn fms(self, b: Self, c: Self) -> Self;
    /// `self + k*b`
    fn fma_c(self, k: f64, b: Self) -> Self;
    /// `sqrt(a^2 + b^2 + c^2)`
    fn norm3(a: Self, b: Self, c: Self) -> Self;
    /// `sqrt(max(a,0)^2 + max(b,0)^2 + max(c,0)^2)`
    fn norm3_relu(a: Self, b: Self, c: Self) -> Self;
    /// `max(a, b, c)`, ties to the earliest argument.
    fn max3(a: Self, b: Self, c: Self) -> Self;
    /// `self + min(o, 0)`
    fn add_min0(self, o: Self) -> Self;
    /// `self * (1 - o)`
    fn mul_one_minus(self, o: Self) -> Self;
    /// `max((self - o)/self, 0)`
    fn surf_alpha(self, o: Self) -> Self;
    /// `sigmoid(k * self)`
    fn sigmoid_scaled(self, k: f64) -> Self;
    /// `exp(k*self + m)`
    fn exp_affine(self, k: f64, m: f64) -> Self;
    /// Huber penalty with threshold `delta`.
    fn huber(self, delta: f64) -> Self;
    /// Interval opacity `max(1 - exp(softplus(-s*self) - softplus(-s*exit)), 0)`.
    fn interval_alpha(self, exit: Self, s: f64) -> Self;
    /// Signed distance from the constant world point `p` to the box with the
    /// given half extents, center, and yaw cosine/sine. On the tape backend
    /// this is a single fused node — the rendering hot path evaluates it for
    /// every surviving sample.
    fn cuboid_sdf(p: [f64; 3], half: &[Self; 3], loc: &[Self; 3], cos_yaw: Self, sin_yaw: Self)
        -> Self;
    /// An exact zero carrying no gradient, usable where a sum never received
    /// any contribution. On the tape backend this is one `* 0` node anchored
    /// to `self`.
    fn zero_like(self) -> Self;
}

impl Real for f64 {
    fn val(self) -> f64 {
        self
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn max(self, o: Self) -> Self {
        scalar::max_first(self, o)
    }
    fn min(self, o: Self) -> Self {
        scalar::min_first(self, o)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        scalar::sigmoid(self)
    }
    fn softplus(self) -> Self {
        scalar::softplus(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        f64::max(self, 0.0)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn add_c(self, c: f64) -> Self {
        self + c
    }
    fn c_sub(self, c: f64) -> Self {
        c - self
    }
    fn mul_c(self, c: f64) -> Self {
        self * c
    }
    fn max_c(self, c: f64) -> Self {
        scalar::max_first(self, c)
    }
    fn abs_sub(self, o: Self) -> Self {
        self.abs() - o
    }
    fn fma(self, b: Self, c: Self) -> Self {
        self + b * c
    }
    fn fms(self, b: Self, c: Self) -> Self {
        self - b * c
    }
    fn fma_c(self, k: f64, b: Self) -> Self {
        self + k * b
    }
    fn norm3(a: Self, b: Self, c: Self) -> Self {
        (a * a + b * b + c * c).sqrt()
    }
    fn norm3_relu(a: Self, b: Self, c: Self) -> Self {
        let (x, y, z) = (f64::max(a, 0.0), f64::max(b, 0.0), f64::max(c, 0.0));
        (x * x + y * y + z * z).sqrt()
    }
    fn max3(a: Self, b: Self, c: Self) -> Self {
        scalar::max_first(scalar::max_first(a, b), c)
    }
    fn add_min0(self, o: Self) -> Self {
        self + f64::min(o, 0.0)
    }
    fn mul_one_minus(self, o: Self) -> Self {
        self * (1.0 - o)
    }
    fn surf_alpha(self, o: Self) -> Self {
        ((self - o) / self).max(0.0)
    }
    fn sigmoid_scaled(self, k: f64) -> Self {
        scalar::sigmoid(k * self)
    }
    fn exp_affine(self, k: f64, m: f64) -> Self {
        (k * self + m).exp()
    }
    fn huber(self, delta: f64) -> Self {
        scalar::huber(self, delta)
    }
    fn interval_alpha(self, exit: Self, s: f64) -> Self {
        scalar::interval_alpha(self, exit, s)
    }
    fn cuboid_sdf(p: [f64; 3], half: &[Self; 3], loc: &[Self; 3], cos_yaw: Self, sin_yaw: Self) -> Self {
        scalar::cuboid_sdf(
            p, half[0], half[1], half[2], loc[0], loc[1], loc[2], cos_yaw, sin_yaw,
        )
    }
    fn zero_like(self) -> Self {
        0.0
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.value()
    }
    fn abs(self) -> Self {
        Var::abs(self)
    }
    fn max(self, o: Self) -> Self {
        Var::max(self, o)
    }
    fn min(self, o: Self) -> Self {
        Var::min(self, o)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn sqrt(self) -> Self {
        Var::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn softplus(self) -> Self {
        Var::softplus(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn relu(self) -> Self {
        Var::relu(self)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn add_c(self, c: f64) -> Self {
        Var::add_c(self, c)
    }
    fn c_sub(self, c: f64) -> Self {
        Var::c_sub(self, c)
    }
    fn mul_c(self, c: f64) -> Self {
        Var::mul_c(self, c)
    }
    fn max_c(self, c: f64) -> Self {
        Var::max_c(self, c)
    }
    fn abs_sub(self, o: Self) -> Self {
        Var::abs_sub(self, o)
    }
    fn fma(self, b: Self, c: Self) -> Self {
        Var::fma(self, b, c)
    }
    fn fms(self, b: Self, c: Self) -> Self {
        Var::fms(self, b, c)
    }
    fn fma_c(self, k: f64, b: Self) -> Self {
        Var::fma_c(self, k, b)
    }
    fn norm3(a: Self, b: Self, c: Self) -> Self {
        Var::norm3(a, b, c)
    }
    fn norm3_relu(a: Self, b: Self, c: Self) -> Self {
        Var::norm3_relu(a, b, c)
    }
    fn max3(a: Self, b: Self, c: Self) -> Self {
        Var::max3(a, b, c)
    }
    fn add_min0(self, o: Self) -> Self {
        Var::add_min0(self, o)
    }
    fn mul_one_minus(self, o: Self) -> Self {
        Var::mul_one_minus(self, o)
    }
    fn surf_alpha(self, o: Self) -> Self {
        Var::surf_alpha(self, o)
    }
    fn sigmoid_scaled(self, k: f64) -> Self {
        Var::sigmoid_scaled(self, k)
    }
    fn exp_affine(self, k: f64, m: f64) -> Self {
        Var::exp_affine(self, k, m)
    }
    fn huber(self, delta: f64) -> Self {
        Var::huber(self, delta)
    }
    fn interval_alpha(self, exit: Self, s: f64) -> Self {
        Var::interval_alpha(self, exit, s)
    }
    fn cuboid_sdf(p: [f64; 3], half: &[Self; 3], loc: &[Self; 3], cos_yaw: Self, sin_yaw: Self) -> Self {
        Var::cuboid_sdf(p, half, loc, cos_yaw, sin_yaw)
    }
    fn zero_like(self) -> Self {
        self.mul_c(0.0)
    }
}
