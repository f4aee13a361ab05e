//! Homogeneous self-dual primal-dual interior point method.
//!
//! The program `min f^T z s.t. ||A_j z + b_j|| <= c_j^T z + d_j` is written in
//! conic form `G z + s = h, s in K` with one block per constraint
//! (`s_j = (c_j^T z + d_j, A_j z + b_j)`). Iterates live in the homogeneous
//! embedding
//!
//! ```text
//!   G^T y + f tau = 0,   s + G x - h tau = 0,   kappa + f^T x + h^T y = 0
//! ```
//!
//! so infeasible and unbounded programs produce certificates (`kappa > 0`)
//! instead of running out of iterations. Each iteration uses Nesterov-Todd
//! scaling, a Mehrotra predictor-corrector step and a dense Cholesky
//! factorization of the normal matrix `G^T W^{-2} G`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::cone::{jordan_product, jordan_solve, max_step, NtScaling};
use crate::{ConeProgram, ConicError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// The constraints admit no point; `cone_duals` hold a certificate.
    Infeasible,
    /// The objective is unbounded below on the feasible set.
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: SolveStatus,
    pub z: DVector<f64>,
    pub objective: f64,
    /// One multiplier vector per constraint, `(y0, y1)` with `y0 >= ||y1||`.
    pub cone_duals: Vec<DVector<f64>>,
    /// Max of scaled primal residual, dual residual and relative gap.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

struct Block {
    dim: usize,
    offset: usize,
    cols: Vec<usize>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    gtg: DMatrix<f64>,
}

struct Embedding {
    n: usize,
    m: usize,
    f: DVector<f64>,
    h: DVector<f64>,
    blocks: Vec<Block>,
}

impl Embedding {
    fn new(prog: &ConeProgram) -> Self {
        let n = prog.num_vars();
        let mut blocks = Vec::with_capacity(prog.constraints.len());
        let mut offset = 0;
        for con in &prog.constraints {
            let dim = con.rows() + 1;
            let cols: Vec<usize> =
                (0..n).filter(|&c| con.c[c] != 0.0 || con.a.column(c).iter().any(|v| *v != 0.0)).collect();
            let mut g = DMatrix::zeros(dim, cols.len());
            for (lc, &c) in cols.iter().enumerate() {
                g[(0, lc)] = -con.c[c];
                for r in 0..con.rows() {
                    g[(r + 1, lc)] = -con.a[(r, c)];
                }
            }
            let mut h = DVector::zeros(dim);
            h[0] = con.d;
            h.rows_mut(1, dim - 1).copy_from(&con.b);
            let gtg = g.tr_mul(&g);
            blocks.push(Block { dim, offset, cols, g, h, gtg });
            offset += dim;
        }
        let mut h = DVector::zeros(offset);
        for b in &blocks {
            h.rows_mut(b.offset, b.dim).copy_from(&b.h);
        }
        Self { n, m: offset, f: prog.objective.clone(), h, blocks }
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for b in &self.blocks {
            let xl = DVector::from_iterator(b.cols.len(), b.cols.iter().map(|&c| x[c]));
            out.rows_mut(b.offset, b.dim).copy_from(&(&b.g * xl));
        }
        out
    }

    fn gt_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for b in &self.blocks {
            let part = b.g.tr_mul(&y.rows(b.offset, b.dim));
            for (lc, &c) in b.cols.iter().enumerate() {
                out[c] += part[lc];
            }
        }
        out
    }
}

struct Scaling {
    blocks: Vec<NtScaling>,
}

impl Scaling {
    fn new(emb: &Embedding, s: &DVector<f64>, y: &DVector<f64>) -> Option<Self> {
        let blocks = emb
            .blocks
            .iter()
            .map(|b| NtScaling::new(&s.rows(b.offset, b.dim), &y.rows(b.offset, b.dim)))
            .collect::<Option<Vec<_>>>()?;
        Some(Self { blocks })
    }

    fn map(
        &self,
        emb: &Embedding,
        u: &DVector<f64>,
        op: fn(&NtScaling, &nalgebra::DVectorView<f64>, &mut nalgebra::DVectorViewMut<f64>),
    ) -> DVector<f64> {
        let mut out = DVector::zeros(u.len());
        for (b, nt) in emb.blocks.iter().zip(&self.blocks) {
            op(nt, &u.rows(b.offset, b.dim), &mut out.rows_mut(b.offset, b.dim));
        }
        out
    }

    fn w(&self, emb: &Embedding, u: &DVector<f64>) -> DVector<f64> {
        self.map(emb, u, NtScaling::apply)
    }

    fn w_inv(&self, emb: &Embedding, u: &DVector<f64>) -> DVector<f64> {
        self.map(emb, u, NtScaling::apply_inv)
    }

    fn w_inv_sq(&self, emb: &Embedding, u: &DVector<f64>) -> DVector<f64> {
        self.map(emb, u, NtScaling::apply_inv_sq)
    }

    fn lambda(&self, emb: &Embedding) -> DVector<f64> {
        let mut out = DVector::zeros(emb.m);
        for (b, nt) in emb.blocks.iter().zip(&self.blocks) {
            out.rows_mut(b.offset, b.dim).copy_from(&nt.lambda);
        }
        out
    }

    /// `G^T W^{-2} G`, built from the cached `G_j^T G_j` plus low-rank terms.
    fn normal_matrix(&self, emb: &Embedding) -> DMatrix<f64> {
        let mut nmat = DMatrix::zeros(emb.n, emb.n);
        for (b, nt) in emb.blocks.iter().zip(&self.blocks) {
            let inv_b2 = 1.0 / (nt.beta * nt.beta);
            let gv = b.g.tr_mul(&nt.v);
            let gw = b.g.tr_mul(&nt.w);
            let k = b.cols.len();
            for lj in 0..k {
                let cj = b.cols[lj];
                for li in 0..k {
                    let ci = b.cols[li];
                    let val =
                        b.gtg[(li, lj)] + 4.0 * nt.vv * gv[li] * gv[lj] - 2.0 * (gv[li] * gw[lj] + gw[li] * gv[lj]);
                    nmat[(ci, cj)] += inv_b2 * val;
                }
            }
        }
        nmat
    }
}

fn jordan_blocks(
    emb: &Embedding,
    u: &DVector<f64>,
    v: &DVector<f64>,
    op: fn(&nalgebra::DVectorView<f64>, &nalgebra::DVectorView<f64>, &mut nalgebra::DVectorViewMut<f64>),
) -> DVector<f64> {
    let mut out = DVector::zeros(emb.m);
    for b in &emb.blocks {
        op(&u.rows(b.offset, b.dim), &v.rows(b.offset, b.dim), &mut out.rows_mut(b.offset, b.dim));
    }
    out
}

fn identity_point(emb: &Embedding) -> DVector<f64> {
    let mut e = DVector::zeros(emb.m);
    for b in &emb.blocks {
        e[b.offset] = 1.0;
    }
    e
}

fn cone_step(emb: &Embedding, u: &DVector<f64>, du: &DVector<f64>) -> f64 {
    emb.blocks
        .iter()
        .map(|b| max_step(&u.rows(b.offset, b.dim), &du.rows(b.offset, b.dim)))
        .fold(f64::INFINITY, f64::min)
}

struct Factored<'a> {
    emb: &'a Embedding,
    scaling: &'a Scaling,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> Factored<'a> {
    fn new(emb: &'a Embedding, scaling: &'a Scaling) -> Option<Self> {
        let nmat = scaling.normal_matrix(emb);
        let diag_max = nmat.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut reg = 1e-14 * (1.0 + diag_max);
        for _ in 0..8 {
            let mut m = nmat.clone();
            for i in 0..emb.n {
                m[(i, i)] += reg;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Some(Self { emb, scaling, chol });
            }
            reg *= 100.0;
        }
        None
    }

    fn reduced_solve(&self, bx: &DVector<f64>, by: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let rhs = bx + self.emb.gt_mul(&self.scaling.w_inv_sq(self.emb, by));
        let dx = self.chol.solve(&rhs);
        let dy = self.scaling.w_inv_sq(self.emb, &(self.emb.g_mul(&dx) - by));
        (dx, dy)
    }

    /// Solves `[0 G^T; G -W^2] [dx; dy] = [bx; by]` by block elimination, with
    /// iterative refinement on the full system.
    fn solve(&self, bx: &DVector<f64>, by: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (mut dx, mut dy) = self.reduced_solve(bx, by);
        let scale = 1.0 + bx.norm() + by.norm();
        for _ in 0..3 {
            let w2dy = self.scaling.w(self.emb, &self.scaling.w(self.emb, &dy));
            let r1 = bx - self.emb.gt_mul(&dy);
            let r2 = by - self.emb.g_mul(&dx) + w2dy;
            if r1.norm() + r2.norm() <= 1e-14 * scale {
                break;
            }
            let (ex, ey) = self.reduced_solve(&r1, &r2);
            dx += ex;
            dy += ey;
        }
        (dx, dy)
    }
}

struct Direction {
    dx: DVector<f64>,
    dy: DVector<f64>,
    ds: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

#[allow(clippy::too_many_arguments)]
fn search_direction(
    fac: &Factored,
    sol2: &(DVector<f64>, DVector<f64>),
    lambda: &DVector<f64>,
    ds_target: &DVector<f64>,
    dk_target: f64,
    eta: f64,
    res: &Residuals,
    tau: f64,
    kappa: f64,
) -> Direction {
    let emb = fac.emb;
    let rs = jordan_blocks(emb, lambda, ds_target, jordan_solve);
    let w_rs = fac.scaling.w(emb, &rs);
    let bx = -&res.rx * eta;
    let by = -&res.ry * eta - &w_rs;
    let (x1, y1) = fac.solve(&bx, &by);
    let (x2, y2) = sol2;
    let denom = emb.f.dot(x2) + emb.h.dot(y2) - kappa / tau;
    let dtau = (-eta * res.rtau - dk_target / tau - emb.f.dot(&x1) - emb.h.dot(&y1)) / denom;
    let dx = x1 + x2 * dtau;
    let dy = y1 + y2 * dtau;
    // From the linearized primal residual rather than `W r_s - W^2 dy`, which
    // loses accuracy once the scaling becomes ill-conditioned.
    let ds = -&res.ry * eta - emb.g_mul(&dx) + &emb.h * dtau;
    let dkappa = (dk_target - kappa * dtau) / tau;
    Direction { dx, dy, ds, dtau, dkappa }
}

struct Residuals {
    rx: DVector<f64>,
    ry: DVector<f64>,
    rtau: f64,
}

/// Iterations without improving on the best KKT residual before giving up.
const STALL_ITERS: usize = 5;

/// Solves a second-order cone program to relative accuracy `settings.tol`.
///
/// When the target accuracy is not reached, the best iterate found is
/// returned with status `MaxIter` and its KKT residual.
pub fn solve_cone_program(prog: &ConeProgram, settings: &SolverSettings) -> Result<ConeSolution, ConicError> {
    prog.validate()?;
    let emb = Embedding::new(prog);
    let n = emb.n;
    let tol = settings.tol;
    let nu = emb.blocks.len() as f64;
    let f_norm = emb.f.norm().max(1.0);
    let h_norm = emb.h.norm().max(1.0);

    let mut x = DVector::zeros(n);
    let mut s = identity_point(&emb);
    let mut y = identity_point(&emb);
    let mut tau = 1.0;
    let mut kappa = 1.0;

    let mut status = SolveStatus::MaxIter;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    // Best (kkt, iteration, x/tau, y/tau) seen; returned if progress stalls.
    let mut best: Option<(f64, usize, DVector<f64>, DVector<f64>)> = None;

    for iter in 0..=settings.max_iter {
        iterations = iter;
        let gty = emb.gt_mul(&y);
        let gx = emb.g_mul(&x);
        let res = Residuals {
            rx: &gty + &emb.f * tau,
            ry: &s + &gx - &emb.h * tau,
            rtau: kappa + emb.f.dot(&x) + emb.h.dot(&y),
        };

        let pres = res.ry.norm() / tau / h_norm;
        let dres = res.rx.norm() / tau / f_norm;
        let pcost = emb.f.dot(&x) / tau;
        let dcost = -emb.h.dot(&y) / tau;
        let gap = s.dot(&y) / (tau * tau);
        let rel_gap = gap.min((pcost - dcost).abs()) / (1.0 + pcost.abs().min(dcost.abs()));
        kkt = pres.max(dres).max(rel_gap);
        if pres <= tol && dres <= tol && (rel_gap <= tol || gap <= tol * tol) {
            status = SolveStatus::Optimal;
            break;
        }
        let hty = emb.h.dot(&y);
        if hty < 0.0 && gty.norm() / -hty <= tol * f_norm / h_norm.max(1.0) {
            status = SolveStatus::Infeasible;
            break;
        }
        let fx = emb.f.dot(&x);
        if fx < 0.0 && (&gx + &s).norm() / -fx <= tol {
            status = SolveStatus::Unbounded;
            break;
        }
        match &best {
            Some((b, at, _, _)) if kkt >= *b => {
                if iter - at >= STALL_ITERS {
                    break;
                }
            }
            _ => best = Some((kkt, iter, &x / tau, &y / tau)),
        }
        if iter == settings.max_iter {
            break;
        }

        let Some(scaling) = Scaling::new(&emb, &s, &y) else {
            break;
        };
        let Some(fac) = Factored::new(&emb, &scaling) else {
            break;
        };
        let lambda = scaling.lambda(&emb);
        let mu = (s.dot(&y) + tau * kappa) / (nu + 1.0);
        let sol2 = fac.solve(&(-&emb.f), &emb.h);

        // Predictor.
        let ll = jordan_blocks(&emb, &lambda, &lambda, jordan_product);
        let aff = search_direction(&fac, &sol2, &lambda, &(-&ll), -tau * kappa, 1.0, &res, tau, kappa);
        let alpha_aff = step_length(&emb, &s, &y, tau, kappa, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // Corrector.
        let ds_scaled = scaling.w_inv(&emb, &aff.ds);
        let dy_scaled = scaling.w(&emb, &aff.dy);
        let corr = jordan_blocks(&emb, &ds_scaled, &dy_scaled, jordan_product);
        let e = identity_point(&emb);
        let ds_target = -&ll - corr + e * (sigma * mu);
        let dk_target = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
        let dir = search_direction(&fac, &sol2, &lambda, &ds_target, dk_target, 1.0 - sigma, &res, tau, kappa);
        let alpha = (0.99 * step_length(&emb, &s, &y, tau, kappa, &dir)).min(1.0);
        if !(alpha > 1e-14) || !dir.dx.iter().all(|v| v.is_finite()) {
            break;
        }

        x += &dir.dx * alpha;
        y += &dir.dy * alpha;
        s += &dir.ds * alpha;
        tau += alpha * dir.dtau;
        kappa += alpha * dir.dkappa;
    }

    let (z, objective, duals) = match status {
        SolveStatus::Infeasible => {
            let scale = -emb.h.dot(&y);
            (DVector::zeros(n), f64::INFINITY, split_duals(&emb, &(&y / scale)))
        }
        SolveStatus::Unbounded => {
            let scale = -emb.f.dot(&x);
            (&x / scale, f64::NEG_INFINITY, split_duals(&emb, &DVector::zeros(emb.m)))
        }
        SolveStatus::Optimal => {
            let z = &x / tau;
            let obj = emb.f.dot(&z);
            (z, obj, split_duals(&emb, &(&y / tau)))
        }
        SolveStatus::MaxIter => {
            let (z, yb) = match best {
                Some((b, _, z, yb)) if b < kkt || !kkt.is_finite() => {
                    kkt = b;
                    (z, yb)
                }
                _ => (&x / tau, &y / tau),
            };
            let obj = emb.f.dot(&z);
            (z, obj, split_duals(&emb, &yb))
        }
    };
    Ok(ConeSolution { status, z, objective, cone_duals: duals, kkt_residual: kkt, iterations })
}

fn step_length(emb: &Embedding, s: &DVector<f64>, y: &DVector<f64>, tau: f64, kappa: f64, d: &Direction) -> f64 {
    let mut a = cone_step(emb, s, &d.ds).min(cone_step(emb, y, &d.dy));
    if d.dtau < 0.0 {
        a = a.min(-tau / d.dtau);
    }
    if d.dkappa < 0.0 {
        a = a.min(-kappa / d.dkappa);
    }
    a
}

fn split_duals(emb: &Embedding, y: &DVector<f64>) -> Vec<DVector<f64>> {
    emb.blocks.iter().map(|b| y.rows(b.offset, b.dim).clone_owned()).collect()
}
