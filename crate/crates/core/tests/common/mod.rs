//! Test-side reference computations written straight from the model
//! definitions, independent of the solver code paths they check.
#![allow(dead_code)]

use std::collections::BTreeMap;

use conic::{quadratic_epigraph, solve_cone_program, ConeProgram, QuadraticTerms, SolveStatus, SolverSettings};
use cran_core::linalg::{CMat, C64};
use cran_core::network::{generate_instance, NetworkConfig, NetworkInstance, PowerModel};
use cran_core::precoder::PrecoderSet;
use nalgebra::{DMatrix, DVector};

pub fn small_config(
    num_rrhs: usize,
    num_users: usize,
    candidate_size: usize,
    rate_min: f64,
    seed: u64,
) -> NetworkConfig {
    NetworkConfig { num_rrhs, num_users, candidate_size, rate_min, rng_seed: seed, ..Default::default() }
}

pub fn instance(cfg: &NetworkConfig) -> NetworkInstance {
    generate_instance(cfg, &PowerModel::default()).expect("valid config")
}

/// `sum_{i serving j} H_{i,k} V_{i,j}`: user `j`'s signal as seen by user `k`.
pub fn effective(inst: &NetworkInstance, v: &PrecoderSet, k: usize, j: usize) -> CMat {
    let (n, d) = (inst.config.rx_antennas, v.streams());
    let mut s = CMat::zeros(n, d);
    for ((i, jj), block) in v.iter() {
        if jj == j {
            s += inst.channel(i, k) * block;
        }
    }
    s
}

fn log_det(m: &CMat) -> f64 {
    let ch = m.clone().cholesky().expect("positive definite");
    2.0 * ch.l().diagonal().iter().map(|z| z.re.ln()).sum::<f64>()
}

/// Interference-plus-noise covariance of user `k`.
pub fn interference(inst: &NetworkInstance, v: &PrecoderSet, k: usize) -> CMat {
    let n = inst.config.rx_antennas;
    let mut j_mat = CMat::identity(n, n) * C64::new(inst.noise_powers[k], 0.0);
    for j in v.users() {
        if j != k {
            let s = effective(inst, v, k, j);
            j_mat += &s * s.adjoint();
        }
    }
    j_mat
}

/// `log det(I + S S^H J^{-1}) = log det(J + S S^H) - log det J`.
pub fn rate(inst: &NetworkInstance, v: &PrecoderSet, k: usize) -> f64 {
    let j_mat = interference(inst, v, k);
    let s = effective(inst, v, k, k);
    log_det(&(&j_mat + &s * s.adjoint())) - log_det(&j_mat)
}

/// MMSE receiver `U = C^{-1} S` and weight `W = (I - U^H S)^{-1}`.
pub fn mmse(inst: &NetworkInstance, v: &PrecoderSet, k: usize) -> (CMat, CMat) {
    let s = effective(inst, v, k, k);
    let c_mat = interference(inst, v, k) + &s * s.adjoint();
    let u = c_mat.cholesky().expect("positive definite").solve(&s);
    let d = s.ncols();
    let e = CMat::identity(d, d) - u.adjoint() * &s;
    let e = (&e + e.adjoint()) * C64::new(0.5, 0.0);
    let w = e.try_inverse().expect("invertible MSE matrix");
    (u, (&w + w.adjoint()) * C64::new(0.5, 0.0))
}

/// MSE matrix of user `k` under receiver `u`.
pub fn mse(inst: &NetworkInstance, v: &PrecoderSet, u: &CMat, k: usize) -> CMat {
    let d = v.streams();
    let mut e = u.adjoint() * u * C64::new(inst.noise_powers[k], 0.0);
    for j in v.users() {
        let mut a = u.adjoint() * effective(inst, v, k, j);
        if j == k {
            a -= CMat::identity(d, d);
        }
        e += &a * a.adjoint();
    }
    e
}

/// `log det W - Tr(W E) + d`.
pub fn h(inst: &NetworkInstance, v: &PrecoderSet, u: &CMat, w: &CMat, k: usize) -> f64 {
    let e = mse(inst, v, u, k);
    log_det(w) - (w * e).trace().re + v.streams() as f64
}

pub fn rrh_power(v: &PrecoderSet, i: usize) -> f64 {
    v.iter().filter(|((ii, _), _)| *ii == i).map(|(_, b)| b.norm_squared()).sum()
}

pub struct Receivers {
    pub u: BTreeMap<usize, CMat>,
    pub w: BTreeMap<usize, CMat>,
}

pub fn receivers(inst: &NetworkInstance, v: &PrecoderSet) -> Receivers {
    let mut u = BTreeMap::new();
    let mut w = BTreeMap::new();
    for k in v.users() {
        let (uk, wk) = mmse(inst, v, k);
        u.insert(k, uk);
        w.insert(k, wk);
    }
    Receivers { u, w }
}

/// Weighted power minimization with the receivers fixed, posed as an SOCP:
/// minimize `sum_i omega_i ||V_i||^2` subject to `h_k >= R_min` and the power caps.
/// Returns the optimal value and precoders on the links of `structure`.
pub fn wpm_socp(
    inst: &NetworkInstance,
    structure: &PrecoderSet,
    rx: &Receivers,
    omega: &[f64],
) -> Option<(f64, PrecoderSet)> {
    let (m, d) = (structure.tx_antennas(), structure.streams());
    let blocks: Vec<(usize, usize)> = structure.iter().map(|(key, _)| key).collect();
    let offset = |key: (usize, usize)| 2 * m * d * blocks.iter().position(|b| *b == key).unwrap();
    let n = 2 * m * d * blocks.len();
    let mut prog = ConeProgram::new(n);
    let users = structure.users();
    let rate_min = inst.rate_min();
    for &k in &users {
        let (u, w) = (&rx.u[&k], &rx.w[&k]);
        // Tr(W X X^H) = ||L^H X||_F^2 with W = L L^H.
        let lh = w.clone().cholesky()?.l().adjoint();
        let budget = log_det(w) + d as f64 - rate_min - inst.noise_powers[k] * (w * u.adjoint() * u).trace().re;
        if budget <= 0.0 {
            return None;
        }
        let rows = users.len() * 2 * d * d;
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for (pos, &j) in users.iter().enumerate() {
            let base = pos * 2 * d * d;
            for &(i, jj) in &blocks {
                if jj != j {
                    continue;
                }
                let coef = &lh * u.adjoint() * inst.channel(i, k);
                let off = offset((i, j));
                for col in 0..d {
                    for r in 0..d {
                        let row = base + 2 * (r + col * d);
                        for mm in 0..m {
                            let z = coef[(r, mm)];
                            let var = off + 2 * (mm + col * m);
                            a[(row, var)] += z.re;
                            a[(row, var + 1)] -= z.im;
                            a[(row + 1, var)] += z.im;
                            a[(row + 1, var + 1)] += z.re;
                        }
                    }
                }
            }
            if j == k {
                for col in 0..d {
                    for r in 0..d {
                        let row = base + 2 * (r + col * d);
                        b[row] -= lh[(r, col)].re;
                        b[row + 1] -= lh[(r, col)].im;
                    }
                }
            }
        }
        prog.add_soc(a, b, DVector::zeros(n), budget.sqrt()).ok()?;
    }
    let mut quad = QuadraticTerms::default();
    for i in structure.rrhs() {
        let vars: Vec<usize> =
            blocks.iter().filter(|b| b.0 == i).flat_map(|&b| offset(b)..offset(b) + 2 * m * d).collect();
        let mut a = DMatrix::zeros(vars.len(), n);
        for (r, &v) in vars.iter().enumerate() {
            a[(r, v)] = 1.0;
            quad.diagonal.push((v, omega[i]));
        }
        prog.add_soc(a, DVector::zeros(vars.len()), DVector::zeros(n), inst.power_model.p_max(i).sqrt()).ok()?;
    }
    let s = quadratic_epigraph(&mut prog, &quad).ok()?;
    prog.objective[s] = 1.0;
    let sol = solve_cone_program(&prog, &SolverSettings { tol: 1e-10, max_iter: 200 }).ok()?;
    // The interior-point solver stops at its best iterate once progress stalls.
    let solved = sol.status == SolveStatus::Optimal || (sol.status == SolveStatus::MaxIter && sol.kkt_residual <= 1e-8);
    if !solved {
        return None;
    }
    let mut v = structure.clone();
    for &(i, k) in &blocks {
        let off = offset((i, k));
        *v.block_mut(i, k).unwrap() =
            CMat::from_fn(m, d, |r, col| C64::new(sol.z[off + 2 * (r + col * m)], sol.z[off + 2 * (r + col * m) + 1]));
    }
    let value = structure.rrhs().iter().map(|&i| omega[i] * rrh_power(&v, i)).sum();
    Some((value, v))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Kkt {
    pub rate_violation: f64,
    pub power_violation: f64,
    pub cs_rate: f64,
    pub cs_power: f64,
    pub stationarity: f64,
    pub dual_sign: f64,
}

impl Kkt {
    pub fn max(&self) -> f64 {
        [self.rate_violation, self.power_violation, self.cs_rate, self.cs_power, self.stationarity, self.dual_sign]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// KKT residuals of the fixed-receiver weighted power minimization.
/// `lambda` follows `v.users()` and `mu` follows `v.rrhs()`. Stationarity is
/// the Wirtinger gradient of the Lagrangian in each block, relative to
/// `1 + ||lambda_k H_ik^H U_k W_k||`.
pub fn wpm_kkt(
    inst: &NetworkInstance,
    v: &PrecoderSet,
    rx: &Receivers,
    omega: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Kkt {
    let users = v.users();
    let rrhs: Vec<usize> = v.rrhs().into_iter().collect();
    let mut out = Kkt::default();
    for (a, &k) in users.iter().enumerate() {
        let slack = h(inst, v, &rx.u[&k], &rx.w[&k], k) - inst.rate_min();
        out.rate_violation = out.rate_violation.max(-slack);
        out.cs_rate = out.cs_rate.max((lambda[a] * slack).abs());
        out.dual_sign = out.dual_sign.max(-lambda[a]);
    }
    for (p, &i) in rrhs.iter().enumerate() {
        let head = inst.power_model.p_max(i) - rrh_power(v, i);
        out.power_violation = out.power_violation.max(-head);
        out.cs_power = out.cs_power.max((mu[p] * head).abs());
        out.dual_sign = out.dual_sign.max(-mu[p]);
    }
    for ((i, k), block) in v.iter() {
        let p = rrhs.iter().position(|&r| r == i).unwrap();
        let a = users.iter().position(|&u| u == k).unwrap();
        let mut g = block * C64::new(omega[i] + mu[p], 0.0);
        for (b, &j) in users.iter().enumerate() {
            let (u, w) = (&rx.u[&j], &rx.w[&j]);
            g += inst.channel(i, j).adjoint()
                * u
                * w
                * u.adjoint()
                * effective(inst, v, j, k)
                * C64::new(lambda[b], 0.0);
        }
        let target = inst.channel(i, k).adjoint() * &rx.u[&k] * &rx.w[&k] * C64::new(lambda[a], 0.0);
        let r = (g - &target).norm() / (1.0 + target.norm());
        out.stationarity = out.stationarity.max(r);
    }
    out
}
