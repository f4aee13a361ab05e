//! Dual solver for the weighted power minimization subproblem with fixed
//! receivers: minimize `sum_k Tr(V̄_k^H G_k V̄_k)` subject to
//! `h_k(V) >= R_min` and the per-RRH power caps.
//!
//! The Lagrangian is minimized in closed form by `V̄_k = lambda_k Ḡ_k^{-1} H̆_kk`,
//! leaving the convex dual `f(lambda, mu)` which is minimized by block
//! coordinate descent: projected Newton in `lambda`, projected gradient in `mu`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{c, cholesky_hpd, fro2, log_det_hpd, trace_prod_re, trace_re, CMat};
use crate::mmse::{h_lower_bound, ReceiverState};
use crate::network::{cluster_channel, NetworkInstance};
use crate::precoder::PrecoderSet;

/// Multipliers beyond this mean the rate constraints cannot be met.
pub const LAMBDA_DIVERGENCE: f64 = 1e10;

/// Problem data for one WMMSE iteration. Users and RRHs are addressed by
/// their position in `users` and `rrhs`.
#[derive(Debug, Clone)]
pub struct WpmSubproblem<'a> {
    pub instance: &'a NetworkInstance,
    pub structure: PrecoderSet,
    pub receivers: ReceiverState,
    pub users: Vec<usize>,
    pub rrhs: Vec<usize>,
    pub rate_min: f64,
    /// Diagonal of `G_k`: `omega_i` repeated over RRH `i`'s antenna rows.
    pub g_diag: Vec<DVector<f64>>,
    /// `(rrh position, row offset)` of each block in user `a`'s stack.
    pub blocks: Vec<Vec<(usize, usize)>>,
    pub c: Vec<f64>,
    pub p_max: Vec<f64>,
    /// `H̆_{k,k} = H̄_{k,k}^H U_k W_k`.
    h_breve: Vec<CMat>,
    /// `Ĥ_{a,b} = H̄_{a,b}^H U_b W_b U_b^H H̄_{a,b}`, row-major in `(a, b)`.
    h_hat: Vec<CMat>,
}

impl<'a> WpmSubproblem<'a> {
    /// `omega` is indexed by RRH id.
    pub fn new(
        instance: &'a NetworkInstance,
        structure: &PrecoderSet,
        receivers: &ReceiverState,
        omega: &[f64],
    ) -> Result<Self> {
        let users = structure.users();
        let rrhs: Vec<usize> = structure.rrhs().into_iter().collect();
        let (m, d) = (structure.tx_antennas(), structure.streams());
        let rate_min = instance.rate_min();
        if omega.len() < instance.num_rrhs() {
            return Err(CoreError::Dimension(format!("{} weights for {} RRHs", omega.len(), instance.num_rrhs())));
        }
        let mut g_diag = Vec::with_capacity(users.len());
        let mut blocks = Vec::with_capacity(users.len());
        let mut c_vals = Vec::with_capacity(users.len());
        let mut h_breve = Vec::with_capacity(users.len());
        for &k in &users {
            let cluster = structure.cluster(k);
            let mut diag = DVector::zeros(cluster.len() * m);
            let mut pos_list = Vec::with_capacity(cluster.len());
            for (p, &i) in cluster.iter().enumerate() {
                if !(omega[i] > 0.0) {
                    return Err(CoreError::Config(format!("weight of RRH {i} must be positive")));
                }
                diag.rows_mut(p * m, m).fill(omega[i]);
                pos_list.push((rrhs.binary_search(&i).expect("cluster RRH is in use"), p * m));
            }
            g_diag.push(diag);
            blocks.push(pos_list);

            let u = receivers.filter(k);
            let w = receivers.weight(k);
            let log_det = log_det_hpd(w).ok_or_else(|| CoreError::NotPositiveDefinite(format!("W_{k}")))?;
            let sigma2 = instance.noise_powers[k];
            c_vals.push(log_det + d as f64 - rate_min - trace_re(w) - sigma2 * trace_prod_re(&(u.adjoint() * u), w));
            h_breve.push(cluster_channel(instance, structure, k, k).adjoint() * u * w);
        }
        let mut h_hat = Vec::with_capacity(users.len() * users.len());
        for &k in &users {
            for &j in &users {
                let ht = cluster_channel(instance, structure, k, j).adjoint() * receivers.filter(j);
                h_hat.push(&ht * receivers.weight(j) * ht.adjoint());
            }
        }
        let p_max = rrhs.iter().map(|&i| instance.power_model.p_max(i)).collect();
        Ok(Self {
            instance,
            structure: structure.clone(),
            receivers: receivers.clone(),
            users,
            rrhs,
            rate_min,
            g_diag,
            blocks,
            c: c_vals,
            p_max,
            h_breve,
            h_hat,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_rrhs(&self) -> usize {
        self.rrhs.len()
    }

    fn stack_dim(&self, a: usize) -> usize {
        self.g_diag[a].len()
    }

    pub fn h_hat(&self, a: usize, b: usize) -> &CMat {
        &self.h_hat[a * self.users.len() + b]
    }

    pub fn h_breve(&self, a: usize) -> &CMat {
        &self.h_breve[a]
    }

    /// `sum_k Tr(V̄_k^H G_k V̄_k)` for precoders on this structure.
    pub fn objective(&self, precoders: &PrecoderSet) -> f64 {
        let m = precoders.tx_antennas();
        self.users
            .iter()
            .enumerate()
            .map(|(a, &k)| {
                precoders
                    .cluster(k)
                    .iter()
                    .enumerate()
                    .map(|(p, &i)| self.g_diag[a][p * m] * fro2(precoders.block(i, k).expect("cluster block")))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// `Ḡ_a = G_a + sum_b lambda_b Ĥ_{a,b} + sum_i mu_i B_{i,a}`.
pub fn assemble_gbar(sub: &WpmSubproblem, lambda: &DVector<f64>, mu: &DVector<f64>, a: usize) -> CMat {
    let n = sub.stack_dim(a);
    let m = sub.structure.tx_antennas();
    let mut g = CMat::zeros(n, n);
    for (b, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            g += sub.h_hat(a, b) * c(l, 0.0);
        }
    }
    for r in 0..n {
        g[(r, r)] += c(sub.g_diag[a][r], 0.0);
    }
    for &(rp, off) in &sub.blocks[a] {
        for r in off..off + m {
            g[(r, r)] += c(mu[rp], 0.0);
        }
    }
    g
}

/// `C_a = Ḡ_a^{-1} H̆_{a,a}` together with `Ḡ_a^{-1}`.
fn solve_gbar(sub: &WpmSubproblem, lambda: &DVector<f64>, mu: &DVector<f64>, a: usize) -> Result<(CMat, CMat)> {
    let g = assemble_gbar(sub, lambda, mu, a);
    let chol = cholesky_hpd(&g).ok_or_else(|| CoreError::NotPositiveDefinite(format!("Ḡ_{a}")))?;
    let inv = chol.inverse();
    let c_mat = &inv * sub.h_breve(a);
    Ok((inv, c_mat))
}

/// `f(lambda, mu) = sum_k lambda_k^2 Tr(F_k) + sum_k lambda_k c_k + sum_i mu_i P_max_i`.
pub fn dual_value(sub: &WpmSubproblem, lambda: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    let mut f: f64 = mu.iter().zip(&sub.p_max).map(|(m, p)| m * p).sum();
    for a in 0..sub.num_users() {
        let l = lambda[a];
        f += l * sub.c[a];
        if l != 0.0 {
            let g = assemble_gbar(sub, lambda, mu, a);
            let chol = cholesky_hpd(&g).ok_or_else(|| CoreError::NotPositiveDefinite(format!("Ḡ_{a}")))?;
            let c_mat = chol.solve(sub.h_breve(a));
            f += l * l * trace_prod_re(&sub.h_breve(a).adjoint(), &c_mat);
        }
    }
    Ok(f)
}

/// Multipliers with the matrices that depend on them.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    /// `G̃_a = Ḡ_a^{-1}`.
    pub g_tilde: Vec<CMat>,
    /// `C_a = G̃_a H̆_{a,a}`.
    pub c_mat: Vec<CMat>,
    /// `Tr(F_a) = Tr(H̆_{a,a}^H C_a)`.
    pub tr_f: Vec<f64>,
    /// `Y_{a,b} = C_a^H Ĥ_{a,b}`, row-major in `(a, b)`.
    pub y: Vec<CMat>,
    /// `Ỹ_{a,b} = Y_{a,b} G̃_a`.
    pub y_tilde: Vec<CMat>,
    /// `Tr(Z_{a,b}) = Tr(Y_{a,b} C_a)`.
    pub tr_z: Vec<f64>,
    pub value: f64,
}

impl DualState {
    pub fn new(sub: &WpmSubproblem, lambda: DVector<f64>, mu: DVector<f64>) -> Result<Self> {
        let ku = sub.num_users();
        if lambda.len() != ku || mu.len() != sub.num_rrhs() {
            return Err(CoreError::Dimension("dual vector lengths".into()));
        }
        let mut g_tilde = Vec::with_capacity(ku);
        let mut c_mat = Vec::with_capacity(ku);
        let mut tr_f = Vec::with_capacity(ku);
        for a in 0..ku {
            let (inv, cm) = solve_gbar(sub, &lambda, &mu, a)?;
            tr_f.push(trace_prod_re(&sub.h_breve(a).adjoint(), &cm));
            g_tilde.push(inv);
            c_mat.push(cm);
        }
        let mut y = Vec::with_capacity(ku * ku);
        let mut y_tilde = Vec::with_capacity(ku * ku);
        let mut tr_z = Vec::with_capacity(ku * ku);
        for a in 0..ku {
            let ca_h = c_mat[a].adjoint();
            for b in 0..ku {
                let yab = &ca_h * sub.h_hat(a, b);
                tr_z.push(trace_prod_re(&yab, &c_mat[a]));
                y_tilde.push(&yab * &g_tilde[a]);
                y.push(yab);
            }
        }
        let value = mu.iter().zip(&sub.p_max).map(|(m, p)| m * p).sum::<f64>()
            + (0..ku).map(|a| lambda[a] * lambda[a] * tr_f[a] + lambda[a] * sub.c[a]).sum::<f64>();
        Ok(Self { lambda, mu, g_tilde, c_mat, tr_f, y, y_tilde, tr_z, value })
    }

    fn idx(&self, a: usize, b: usize) -> usize {
        a * self.lambda.len() + b
    }
}

/// `df/dlambda_k = 2 lambda_k Tr(F_k) - sum_j lambda_j^2 Tr(Z_{j,k}) + c_k`,
/// which equals `h_k - R_min` at the dual-implied precoders.
pub fn grad_lambda(sub: &WpmSubproblem, st: &DualState) -> DVector<f64> {
    let ku = sub.num_users();
    DVector::from_fn(ku, |k, _| {
        let z: f64 = (0..ku).map(|j| st.lambda[j] * st.lambda[j] * st.tr_z[st.idx(j, k)]).sum();
        2.0 * st.lambda[k] * st.tr_f[k] - z + sub.c[k]
    })
}

pub fn hessian_lambda(sub: &WpmSubproblem, st: &DualState) -> DMatrix<f64> {
    let ku = sub.num_users();
    let l = &st.lambda;
    let mut hess = DMatrix::zeros(ku, ku);
    for i in 0..ku {
        for j in i..ku {
            let cross: f64 = (0..ku)
                .map(|k| l[k] * l[k] * trace_prod_re(&st.y_tilde[st.idx(k, j)], &st.y[st.idx(k, i)].adjoint()))
                .sum();
            let v = if i == j {
                2.0 * st.tr_f[i] + 2.0 * cross - 4.0 * l[i] * st.tr_z[st.idx(i, i)]
            } else {
                -2.0 * l[i] * st.tr_z[st.idx(i, j)] - 2.0 * l[j] * st.tr_z[st.idx(j, i)] + 2.0 * cross
            };
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// `df/dmu_i = P_max_i - sum_k lambda_k^2 ||B_{i,k} C_k||_F^2`, i.e. the power
/// headroom of RRH `i` at the dual-implied precoders.
pub fn grad_mu(sub: &WpmSubproblem, st: &DualState) -> DVector<f64> {
    let m = sub.structure.tx_antennas();
    let mut g = DVector::from_vec(sub.p_max.clone());
    for a in 0..sub.num_users() {
        let l2 = st.lambda[a] * st.lambda[a];
        for &(rp, off) in &sub.blocks[a] {
            g[rp] -= l2 * st.c_mat[a].rows(off, m).iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
    }
    g
}

/// `V̄_k = lambda_k C_k`.
pub fn primal_from_dual(sub: &WpmSubproblem, st: &DualState) -> PrecoderSet {
    let mut out = sub.structure.clone();
    for (a, &k) in sub.users.iter().enumerate() {
        let stack = &st.c_mat[a] * c(st.lambda[a], 0.0);
        out.set_stack(k, &stack).expect("stack matches the cluster");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub t_max: usize,
    pub xi: f64,
    pub phi: f64,
    /// Stop once half the Newton decrement falls below this.
    pub decrement_tol: f64,
    pub levenberg: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { t_max: 50, xi: 0.01, phi: 0.5, decrement_tol: 1e-10, levenberg: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSettings {
    pub t_max: usize,
    pub xi: f64,
    pub phi: f64,
    /// Relative decrease of `f` below which the loop stops.
    pub eps: f64,
}

impl Default for MuSettings {
    fn default() -> Self {
        Self { t_max: 50, xi: 0.01, phi: 0.5, eps: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub state: DualState,
    pub iterations: usize,
    pub decrements: Vec<f64>,
    pub values: Vec<f64>,
}

/// Two-metric projected Newton step for `lambda`: Newton on the free
/// coordinates, diagonally scaled gradient on those held at zero (small
/// `lambda_i` with positive gradient). The step is unprojected.
fn newton_step(lambda: &DVector<f64>, grad: &DVector<f64>, hess: &DMatrix<f64>, levenberg: f64) -> DVector<f64> {
    let ku = grad.len();
    let proj_norm = (0..ku).map(|i| (lambda[i] - (lambda[i] - grad[i]).max(0.0)).powi(2)).sum::<f64>().sqrt();
    let eps = proj_norm.min(1e-6);
    let active: Vec<bool> = (0..ku).map(|i| lambda[i] <= eps && grad[i] > 0.0).collect();
    let free: Vec<usize> = (0..ku).filter(|&i| !active[i]).collect();
    let mut step = DVector::zeros(ku);
    for i in 0..ku {
        if active[i] {
            step[i] = -grad[i] / hess[(i, i)].abs().max(1e-12);
        }
    }
    if !free.is_empty() {
        let hf = DMatrix::from_fn(free.len(), free.len(), |r, s| hess[(free[r], free[s])]);
        let gf = DVector::from_fn(free.len(), |r, _| grad[free[r]]);
        let solved = hf.clone().cholesky().map(|ch| ch.solve(&gf)).or_else(|| {
            let mut damped = hf;
            for r in 0..free.len() {
                damped[(r, r)] += levenberg;
            }
            damped.cholesky().map(|ch| ch.solve(&gf))
        });
        match solved {
            Some(x) => {
                for (r, &i) in free.iter().enumerate() {
                    step[i] = -x[r];
                }
            }
            None => {
                for &i in &free {
                    step[i] = -grad[i] / hess[(i, i)].abs().max(1e-12);
                }
            }
        }
    }
    step
}

fn project_arc(lambda: &DVector<f64>, step: &DVector<f64>, kappa: f64) -> Result<DVector<f64>> {
    let cand = (lambda + step * kappa).map(|v| v.max(0.0));
    if cand.iter().any(|v| *v > LAMBDA_DIVERGENCE) {
        return Err(CoreError::Infeasible("rate multipliers diverge".into()));
    }
    Ok(cand)
}

/// Changes of `f` this small are indistinguishable from evaluation error.
fn roundoff(f: f64) -> f64 {
    1e-13 * f.abs().max(1.0)
}

/// `||x - [x - grad]_+||`, zero exactly at a minimizer over the orthant.
pub fn projected_gradient_norm(x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    x.iter().zip(grad.iter()).map(|(xi, gi)| (xi - (xi - gi).max(0.0)).powi(2)).sum::<f64>().sqrt()
}

/// `-grad^T ([lambda + step]_+ - lambda)`: the projected Newton decrement.
fn projected_decrement(lambda: &DVector<f64>, grad: &DVector<f64>, step: &DVector<f64>) -> f64 {
    (0..lambda.len()).map(|i| -grad[i] * ((lambda[i] + step[i]).max(0.0) - lambda[i])).sum()
}

/// Projected Newton in `lambda` with `mu` fixed.
///
/// Backtracking runs along the projected arc `[lambda + kappa step]_+`, which
/// coincides with the convex-combination update at `kappa = 1`.
pub fn newton_lambda(sub: &WpmSubproblem, init: DualState, settings: &NewtonSettings) -> Result<NewtonOutcome> {
    let mut st = init;
    let mut decrements = Vec::new();
    let mut values = vec![st.value];
    let mut iterations = 0;
    let mut finished = false;
    loop {
        let grad = grad_lambda(sub, &st);
        let hess = hessian_lambda(sub, &st);
        let mut step = newton_step(&st.lambda, &grad, &hess, settings.levenberg);
        let mut decrement = projected_decrement(&st.lambda, &grad, &step);
        if !(decrement > 0.0) && step.norm() > 0.0 {
            // Round-off made the Hessian indefinite: fall back to the scaled gradient.
            step = DVector::from_fn(grad.len(), |i, _| -grad[i] / hess[(i, i)].abs().max(1e-12));
            decrement = projected_decrement(&st.lambda, &grad, &step);
        }
        decrements.push(decrement.max(0.0));
        // After the final step the decrement is only recorded.
        if finished || iterations >= settings.t_max || !(decrement > 0.0) {
            break;
        }
        let done = decrement / 2.0 <= settings.decrement_tol;
        iterations += 1;
        let armijo = |cand: &DVector<f64>, f: f64| f <= st.value + settings.xi * grad.dot(&(cand - &st.lambda));
        let mut accepted = None;
        if done {
            // The final full step is taken for accuracy; its decrease is at
            // round-off level.
            let cand = project_arc(&st.lambda, &step, 1.0)?;
            if dual_value(sub, &cand, &st.mu)? <= st.value + roundoff(st.value) {
                accepted = Some(cand);
            } else {
                let trial = DualState::new(sub, cand.clone(), st.mu.clone())?;
                if projected_gradient_norm(&cand, &grad_lambda(sub, &trial))
                    < projected_gradient_norm(&st.lambda, &grad)
                {
                    accepted = Some(cand);
                }
            }
        } else {
            let mut kappa = 1.0;
            let mut found: Option<(DVector<f64>, f64)> = None;
            for _ in 0..60 {
                let cand = project_arc(&st.lambda, &step, kappa)?;
                let f = dual_value(sub, &cand, &st.mu)?;
                if armijo(&cand, f) {
                    found = Some((cand, f));
                    break;
                }
                kappa *= settings.phi;
            }
            if kappa == 1.0 {
                // Far from the optimum f is nearly linear in lambda and full
                // steps undershoot; extend while f keeps decreasing.
                while let Some((best, fb)) = found.as_ref() {
                    kappa *= 2.0;
                    if kappa > 1e6 {
                        break;
                    }
                    let cand = project_arc(&st.lambda, &step, kappa)?;
                    let f = dual_value(sub, &cand, &st.mu)?;
                    if f < *fb && armijo(&cand, f) && &cand != best {
                        found = Some((cand, f));
                    } else {
                        break;
                    }
                }
            }
            accepted = found.map(|(c, _)| c);
        }
        match accepted {
            Some(l) => {
                st = DualState::new(sub, l, st.mu.clone())?;
                values.push(st.value);
            }
            None => break,
        }
        finished = done;
    }
    Ok(NewtonOutcome { state: st, iterations, decrements, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuOutcome {
    pub state: DualState,
    pub iterations: usize,
    pub values: Vec<f64>,
}

/// Diagonal of the `mu`-Hessian:
/// `d^2 f / dmu_i^2 = 2 sum_k lambda_k^2 Tr((B_{i,k} C_k)^H B_{i,k} G̃_k B_{i,k} (B_{i,k} C_k))`.
pub fn hessian_mu_diagonal(sub: &WpmSubproblem, st: &DualState) -> DVector<f64> {
    let m = sub.structure.tx_antennas();
    let mut h = DVector::zeros(sub.num_rrhs());
    for a in 0..sub.num_users() {
        let l2 = st.lambda[a] * st.lambda[a];
        if l2 == 0.0 {
            continue;
        }
        for &(rp, off) in &sub.blocks[a] {
            let bc = st.c_mat[a].rows(off, m).clone_owned();
            let gb = st.g_tilde[a].view((off, off), (m, m)).clone_owned();
            h[rp] += 2.0 * l2 * trace_prod_re(&bc.adjoint(), &(gb * &bc));
        }
    }
    h
}

/// Projected gradient in `mu` with `lambda` fixed. The
/// step is scaled per RRH by the inverse `mu`-Hessian diagonal.
pub fn gradient_mu(sub: &WpmSubproblem, init: DualState, settings: &MuSettings) -> Result<MuOutcome> {
    let mut st = init;
    let mut values = vec![st.value];
    let mut iterations = 0;
    while iterations < settings.t_max {
        let grad = grad_mu(sub, &st);
        let scale = hessian_mu_diagonal(sub, &st);
        let dir = DVector::from_fn(grad.len(), |i, _| {
            let s = if scale[i] > 1e-12 { 1.0 / scale[i] } else { 1.0 };
            (st.mu[i] - s * grad[i]).max(0.0) - st.mu[i]
        });
        let slope = grad.dot(&dir);
        if !(slope < 0.0) {
            break;
        }
        iterations += 1;
        let mut kappa = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = (&st.mu + &dir * kappa).map(|v| v.max(0.0));
            let f = dual_value(sub, &st.lambda, &cand)?;
            if f <= st.value + settings.xi * kappa * slope {
                accepted = Some(cand);
                break;
            }
            kappa *= settings.phi;
        }
        let prev = st.value;
        let next = match accepted {
            Some(mu) => DualState::new(sub, st.lambda.clone(), mu)?,
            None if -slope <= roundoff(st.value) => {
                // Armijo cannot resolve a decrease this small; fall back to
                // the projected gradient as the progress measure.
                let cand = (&st.mu + &dir).map(|v| v.max(0.0));
                let trial = DualState::new(sub, st.lambda.clone(), cand)?;
                if projected_gradient_norm(&trial.mu, &grad_mu(sub, &trial)) >= projected_gradient_norm(&st.mu, &grad) {
                    break;
                }
                trial
            }
            None => break,
        };
        st = next;
        values.push(st.value);
        if prev - st.value <= settings.eps * prev.abs().max(1e-12) {
            break;
        }
    }
    Ok(MuOutcome { state: st, iterations, values })
}

/// KKT residuals of the subproblem at precoders `V` with multipliers
/// `(lambda, mu)`. All entries are absolute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max_k max(0, R_min - h_k)`.
    pub rate_violation: f64,
    /// `max_i max(0, P_i - P_max_i)`.
    pub power_violation: f64,
    /// `max_k |lambda_k (h_k - R_min)|`.
    pub cs_rate: f64,
    /// `max_i |mu_i (P_max_i - P_i)|`.
    pub cs_power: f64,
    /// `max_k ||Ḡ_k V̄_k - lambda_k H̆_kk||_F / (1 + ||lambda_k H̆_kk||_F)`.
    pub stationarity: f64,
    pub min_lambda: f64,
    pub min_mu: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.rate_violation
            .max(self.power_violation)
            .max(self.cs_rate)
            .max(self.cs_power)
            .max(self.stationarity)
            .max((-self.min_lambda).max(0.0))
            .max((-self.min_mu).max(0.0))
    }

    pub fn primal_violation(&self) -> f64 {
        self.rate_violation.max(self.power_violation)
    }
}

/// Evaluates the KKT conditions directly from `precoders` (which need not be
/// the dual-implied point).
pub fn kkt_report(
    sub: &WpmSubproblem,
    precoders: &PrecoderSet,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<KktReport> {
    let mut rep = KktReport {
        min_lambda: lambda.iter().copied().fold(f64::INFINITY, f64::min),
        min_mu: mu.iter().copied().fold(f64::INFINITY, f64::min),
        ..Default::default()
    };
    for (a, &k) in sub.users.iter().enumerate() {
        let h = h_lower_bound(sub.instance, precoders, sub.receivers.filter(k), sub.receivers.weight(k), k)?;
        let slack = h - sub.rate_min;
        rep.rate_violation = rep.rate_violation.max(-slack);
        rep.cs_rate = rep.cs_rate.max((lambda[a] * slack).abs());
        let v = crate::precoder::stack_big_precoder(precoders, k)?;
        let target = sub.h_breve(a) * c(lambda[a], 0.0);
        let r = assemble_gbar(sub, lambda, mu, a) * v - &target;
        rep.stationarity = rep.stationarity.max(fro2(&r).sqrt() / (1.0 + fro2(&target).sqrt()));
    }
    for (rp, &i) in sub.rrhs.iter().enumerate() {
        let headroom = sub.p_max[rp] - precoders.transmit_power(i);
        rep.power_violation = rep.power_violation.max(-headroom);
        rep.cs_power = rep.cs_power.max((mu[rp] * headroom).abs());
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdSettings {
    pub n_max: usize,
    /// Relative change of `f` between outer iterations.
    pub eps: f64,
    pub kkt_tol: f64,
    pub feasibility_tol: f64,
    pub newton: NewtonSettings,
    pub mu: MuSettings,
}

impl Default for BcdSettings {
    fn default() -> Self {
        Self {
            n_max: 30,
            eps: 1e-3,
            kkt_tol: 1e-4,
            feasibility_tol: 1e-8,
            newton: NewtonSettings::default(),
            mu: MuSettings::default(),
        }
    }
}

impl BcdSettings {
    /// Settings for oracle comparisons where every residual must be small.
    pub fn tight() -> Self {
        Self {
            n_max: 200,
            eps: 1e-12,
            kkt_tol: 1e-7,
            feasibility_tol: 1e-9,
            newton: NewtonSettings { t_max: 100, ..Default::default() },
            mu: MuSettings { t_max: 200, eps: 1e-12, ..Default::default() },
        }
    }
}

/// One outer BCD iteration, for JSONL debugging dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTraceRecord {
    pub outer: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub f: f64,
    pub newton_iterations: usize,
    /// Newton decrement at the returned `lambda`.
    pub newton_decrement: f64,
    pub mu_iterations: usize,
    pub kkt: KktReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome {
    pub precoders: PrecoderSet,
    pub state: DualState,
    pub kkt: KktReport,
    pub converged: bool,
    pub outer_iterations: usize,
    pub trace: Vec<DualTraceRecord>,
    /// Newton decrements of every inner step, per outer iteration.
    pub newton_decrements: Vec<Vec<f64>>,
    pub mu_iterations: Vec<usize>,
}

impl BcdOutcome {
    pub fn lambda(&self) -> &DVector<f64> {
        &self.state.lambda
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.state.mu
    }
}

/// Starting multipliers: all ones, or a previous solution when its sizes fit.
pub fn initial_duals(
    sub: &WpmSubproblem,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> (DVector<f64>, DVector<f64>) {
    match warm {
        Some((l, m)) if l.len() == sub.num_users() && m.len() == sub.num_rrhs() => (l.clone(), m.clone()),
        _ => (DVector::from_element(sub.num_users(), 1.0), DVector::from_element(sub.num_rrhs(), 1.0)),
    }
}

/// Block coordinate descent on the dual.
pub fn bcd_solve(
    sub: &WpmSubproblem,
    settings: &BcdSettings,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<BcdOutcome> {
    let (l0, m0) = initial_duals(sub, warm);
    let mut st = DualState::new(sub, l0, m0)?;
    let mut trace = Vec::new();
    let mut newton_decrements = Vec::new();
    let mut mu_iterations = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    let mut kkt = KktReport::default();
    while outer < settings.n_max {
        outer += 1;
        let prev = st.value;
        let nt = newton_lambda(sub, st, &settings.newton)?;
        newton_decrements.push(nt.decrements.clone());
        let mo = gradient_mu(sub, nt.state, &settings.mu)?;
        mu_iterations.push(mo.iterations);
        st = mo.state;
        let v = primal_from_dual(sub, &st);
        kkt = kkt_report(sub, &v, &st.lambda, &st.mu)?;
        trace.push(DualTraceRecord {
            outer,
            lambda: st.lambda.iter().copied().collect(),
            mu: st.mu.iter().copied().collect(),
            f: st.value,
            newton_iterations: nt.iterations,
            newton_decrement: nt.decrements.last().copied().unwrap_or(0.0),
            mu_iterations: mo.iterations,
            kkt: kkt.clone(),
        });
        let rel = (prev - st.value).abs() / st.value.abs().max(1e-12);
        if rel < settings.eps
            && kkt.max_residual() < settings.kkt_tol
            && kkt.primal_violation() < settings.feasibility_tol
        {
            converged = true;
            break;
        }
    }
    Ok(BcdOutcome {
        precoders: primal_from_dual(sub, &st),
        state: st,
        kkt,
        converged,
        outer_iterations: outer,
        trace,
        newton_decrements,
        mu_iterations,
    })
}
