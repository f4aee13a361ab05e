//! Second-order cone algebra used by the interior point iteration.
//!
//! A cone block of dimension `m` holds vectors `u = (u0, u1)` with
//! `u0 >= ||u1||`; dimension one is the nonnegative orthant. All operations
//! below treat both uniformly.

use nalgebra::{DVector, DVectorView, DVectorViewMut};

/// `sqrt(u0^2 - ||u1||^2)`, or `None` when `u` is not strictly interior.
pub(crate) fn jnorm(u: &DVectorView<f64>) -> Option<f64> {
    let tail = if u.len() > 1 { u.rows(1, u.len() - 1).norm() } else { 0.0 };
    let u0 = u[0];
    if u0 <= tail {
        return None;
    }
    Some(((u0 - tail) * (u0 + tail)).sqrt())
}

/// Jordan product `u o v = (u^T v, u0 v1 + v0 u1)`.
pub(crate) fn jordan_product(u: &DVectorView<f64>, v: &DVectorView<f64>, out: &mut DVectorViewMut<f64>) {
    let m = u.len();
    out[0] = u.dot(v);
    for r in 1..m {
        out[r] = u[0] * v[r] + v[0] * u[r];
    }
}

/// Solves `lambda o x = r` for `x` (inverse of the arrow matrix of `lambda`).
pub(crate) fn jordan_solve(lambda: &DVectorView<f64>, r: &DVectorView<f64>, out: &mut DVectorViewMut<f64>) {
    let m = lambda.len();
    let l0 = lambda[0];
    if m == 1 {
        out[0] = r[0] / l0;
        return;
    }
    let l1 = lambda.rows(1, m - 1);
    let r1 = r.rows(1, m - 1);
    let det = (l0 - l1.norm()) * (l0 + l1.norm());
    let x0 = (l0 * r[0] - l1.dot(&r1)) / det;
    out[0] = x0;
    for i in 1..m {
        out[i] = (r[i] - x0 * lambda[i]) / l0;
    }
}

/// Largest `alpha >= 0` (possibly infinite) keeping `u + alpha du` in the cone.
pub(crate) fn max_step(u: &DVectorView<f64>, du: &DVectorView<f64>) -> f64 {
    let m = u.len();
    if m == 1 {
        return if du[0] < 0.0 { -u[0] / du[0] } else { f64::INFINITY };
    }
    let u1 = u.rows(1, m - 1);
    let d1 = du.rows(1, m - 1);
    let a = du[0] * du[0] - d1.norm_squared();
    let b = 2.0 * (u[0] * du[0] - u1.dot(&d1));
    let c = (u[0] - u1.norm()) * (u[0] + u1.norm());
    // The apex branch of the boundary.
    let mut best = if du[0] < 0.0 { -u[0] / du[0] } else { f64::INFINITY };
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return best;
    }
    if a.abs() <= 1e-14 * scale {
        if b < 0.0 {
            best = best.min(-c / b);
        }
        return best;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return best;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let roots = [q / a, if q != 0.0 { c / q } else { f64::INFINITY }];
    for r in roots {
        if r > 0.0 {
            best = best.min(r);
        }
    }
    best
}

/// Nesterov-Todd scaling of one cone block: `W = beta (2 w w^T - J)` with
/// `w^T J w = 1`, chosen so that `W y = W^{-1} s = lambda`.
#[derive(Debug, Clone)]
pub(crate) struct NtScaling {
    pub beta: f64,
    pub w: DVector<f64>,
    /// `J w`; `W^{-1} = (2 v v^T - J) / beta`.
    pub v: DVector<f64>,
    pub vv: f64,
    pub lambda: DVector<f64>,
}

impl NtScaling {
    pub fn new(s: &DVectorView<f64>, y: &DVectorView<f64>) -> Option<Self> {
        let m = s.len();
        let sn = jnorm(s)?;
        let yn = jnorm(y)?;
        let sbar = s / sn;
        let ybar = y / yn;
        let gamma = ((1.0 + sbar.dot(&ybar)) / 2.0).sqrt();
        // Scaling point wbar = (sbar + J ybar) / (2 gamma); W is the hyperbolic
        // reflector through (wbar + e) / sqrt(2 (wbar0 + 1)).
        let mut w = DVector::zeros(m);
        w[0] = (sbar[0] + ybar[0]) / (2.0 * gamma);
        for r in 1..m {
            w[r] = (sbar[r] - ybar[r]) / (2.0 * gamma);
        }
        let w0 = w[0];
        w[0] += 1.0;
        w /= (2.0 * (w0 + 1.0)).sqrt();
        let mut v = w.clone();
        for r in 1..m {
            v[r] = -v[r];
        }
        let beta = (sn / yn).sqrt();
        let vv = v.norm_squared();
        let mut scaling = Self { beta, w, v, vv, lambda: DVector::zeros(m) };
        let mut lambda = DVector::zeros(m);
        scaling.apply(&y.clone_owned().as_view(), &mut lambda.as_view_mut());
        scaling.lambda = lambda;
        Some(scaling)
    }

    /// `out = W u`.
    pub fn apply(&self, u: &DVectorView<f64>, out: &mut DVectorViewMut<f64>) {
        let wu = self.w.dot(u);
        for r in 0..u.len() {
            let ju = if r == 0 { u[0] } else { -u[r] };
            out[r] = self.beta * (2.0 * wu * self.w[r] - ju);
        }
    }

    /// `out = W^{-1} u`.
    pub fn apply_inv(&self, u: &DVectorView<f64>, out: &mut DVectorViewMut<f64>) {
        let vu = self.v.dot(u);
        for r in 0..u.len() {
            let ju = if r == 0 { u[0] } else { -u[r] };
            out[r] = (2.0 * vu * self.v[r] - ju) / self.beta;
        }
    }

    /// `out = W^{-2} u = (u + 4 (v^T v)(v^T u) v - 2 (v (w^T u) + w (v^T u))) / beta^2`.
    pub fn apply_inv_sq(&self, u: &DVectorView<f64>, out: &mut DVectorViewMut<f64>) {
        let vu = self.v.dot(u);
        let wu = self.w.dot(u);
        let b2 = self.beta * self.beta;
        for r in 0..u.len() {
            out[r] = (u[r] + 4.0 * self.vv * vu * self.v[r] - 2.0 * (self.v[r] * wu + self.w[r] * vu)) / b2;
        }
    }
}
