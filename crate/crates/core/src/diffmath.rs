//! Reverse-mode gradient evaluation over scalar computation graphs, plus the
//! Adam optimizer and exponential learning-rate schedules.
//!
//! The tape is a flat, append-only record of primitive scalar operations.
//! Appending is the forward pass (values are computed eagerly); [`Tape::backward`]
//! walks the record once in reverse to accumulate adjoints. Constants never
//! become nodes: operations with one constant operand are folded into the node
//! itself (`AddC`, `MulC`, ...), which keeps hot rendering graphs small.
//!
//! Tapes are single-writer. Parallel workers each build a private tape over a
//! disjoint ray subset and the resulting leaf-gradient vectors are reduced by
//! ordered summation, so results are independent of worker count.

mod adam;
mod real;
mod schedule;
mod tape;

pub use adam::{adam_step, AdamState, LengthMismatch};
pub use real::Real;
pub use schedule::ExpDecaySchedule;
pub use tape::{DiffError, Tape, Var};

pub(crate) mod scalar {
    //! Shared scalar kernels. The tape ops and the plain-`f64` [`super::Real`]
    //! backend both call these, so the two evaluation paths agree bitwise.

    /// Numerically stable logistic function.
    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(x: f64) -> f64 {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }

    /// Opacity of one ray interval from its endpoint signed distances:
    /// `max(1 - exp(softplus(-s*f_entry) - softplus(-s*f_exit)), 0)`.
    ///
    /// This is the standard discrete surface-crossing opacity
    /// `max((sigmoid(s*f_entry) - sigmoid(s*f_exit)) / sigmoid(s*f_entry), 0)`
    /// rewritten through `sigmoid(x) = exp(-softplus(-x))`. The rewrite is
    /// exact and avoids the `0/0` the quotient form produces once
    /// `sigmoid(s*f)` underflows deep inside a shape (`s*f < -745`).
    pub fn interval_alpha(f_entry: f64, f_exit: f64, s: f64) -> f64 {
        let log_ratio = softplus(-s * f_entry) - softplus(-s * f_exit);
        (1.0 - log_ratio.exp()).max(0.0)
    }

    /// Huber penalty: quadratic inside `delta`, linear outside.
    pub fn huber(x: f64, delta: f64) -> f64 {
        let ax = x.abs();
        if ax <= delta {
            0.5 * x * x
        } else {
            delta * (ax - 0.5 * delta)
        }
    }

    /// `max` resolving ties (and incomparable inputs) to the first argument.
    pub fn max_first(a: f64, b: f64) -> f64 {
        if a >= b {
            a
        } else {
            b
        }
    }

    /// `min` resolving ties to the first argument.
    pub fn min_first(a: f64, b: f64) -> f64 {
        if a <= b {
            a
        } else {
            b
        }
    }

    /// Signed distance from world point `p` to a box with half extents
    /// `(hx, hy, hz)` centered at `(lx, ly, lz)`, rotated by yaw with the
    /// given cosine/sine. Written as the exact operation sequence of the
    /// unfused chain (local coordinates, `|.| - h`, outside norm, inside
    /// max), so fused and chained evaluations agree bitwise.
    #[allow(clippy::too_many_arguments)]
    pub fn cuboid_sdf(
        p: [f64; 3],
        hx: f64,
        hy: f64,
        hz: f64,
        lx: f64,
        ly: f64,
        lz: f64,
        cos_yaw: f64,
        sin_yaw: f64,
    ) -> f64 {
        let dx = p[0] - lx;
        let dy = p[1] - ly;
        let dz = p[2] - lz;
        let u = (cos_yaw * dx) - sin_yaw * dz;
        let w = (sin_yaw * dx) + cos_yaw * dz;
        let qx = u.abs() - hx;
        let qy = dy.abs() - hy;
        let qz = w.abs() - hz;
        let rx = qx.max(0.0);
        let ry = qy.max(0.0);
        let rz = qz.max(0.0);
        let outside = (rx * rx + ry * ry + rz * rz).sqrt();
        let m = max_first(max_first(qx, qy), qz);
        outside + m.min(0.0)
    }
}
