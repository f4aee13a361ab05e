//! Stage I: user admission through the always-feasible alternative problem.
//!
//! Each iteration of the inner loop fixes `(U_k, W_k)` and solves an SOCP in
//! the precoders and the admission scalars `alpha_k`, minimizing
//! `sum_k (alpha_k - 1)^2` subject to `h_k >= alpha_k^2 R_min` and the per-RRH
//! power caps. The outer loops decide which users to drop.

use std::collections::{BTreeMap, BTreeSet};

use conic::{solve_cone_program, ConeProgram, SolveStatus, SolverSettings};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::linalg::{c, fro2, log_det_hpd, sqrtm_psd, trace_prod_re, CMat};
use crate::mmse::{update_receivers, ReceiverState};
use crate::network::{user_rate, NetworkInstance};
use crate::precoder::PrecoderSet;

/// Largest user count accepted by the exhaustive user search.
pub const EXHAUSTIVE_USER_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitScheme {
    SvdInitial,
    RandInitial { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Settings {
    pub n_max: usize,
    /// Stop once the objective decreases by less than this (absolute).
    pub decrease_tol: f64,
    /// `alpha_k >= 1 - admit_tol` counts as admitted.
    pub admit_tol: f64,
    pub solver: SolverSettings,
}

impl Default for Stage1Settings {
    fn default() -> Self {
        Self { n_max: 30, decrease_tol: 1e-6, admit_tol: 1e-4, solver: SolverSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissionResult {
    pub admitted_users: Vec<usize>,
    pub alphas: BTreeMap<usize, f64>,
    pub precoders: PrecoderSet,
    pub removal_order: Vec<usize>,
    pub objective_trace: Vec<f64>,
    /// Inner iterations summed over every alternative-problem solve.
    pub iterations: usize,
    /// Whether the witness was re-solved to meet the rate targets exactly.
    pub polished: bool,
}

impl AdmissionResult {
    fn empty(instance: &NetworkInstance, removal_order: Vec<usize>, iterations: usize) -> Self {
        Self {
            admitted_users: Vec::new(),
            alphas: BTreeMap::new(),
            precoders: PrecoderSet::empty(instance.config.tx_antennas, instance.config.streams),
            removal_order,
            objective_trace: Vec::new(),
            iterations,
            polished: true,
        }
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(0.0)
    }

    pub fn all_admitted(&self) -> bool {
        self.admitted_users.len() == self.alphas.len()
    }
}

/// Initial precoders: each serving RRH spreads `P_max` equally over its users.
pub fn init_precoders(
    instance: &NetworkInstance,
    users: &[usize],
    scheme: InitScheme,
    active: Option<&BTreeSet<usize>>,
) -> PrecoderSet {
    let mut set = PrecoderSet::zeros(instance, users, active);
    let (m, d) = (set.tx_antennas(), set.streams());
    let mut rng = match scheme {
        InitScheme::RandInitial { seed } => Some(ChaCha20Rng::seed_from_u64(seed)),
        InitScheme::SvdInitial => None,
    };
    let loads: BTreeMap<usize, usize> = set.rrhs().into_iter().map(|i| (i, set.served_users(i).len())).collect();
    for ((i, k), block) in set.iter_mut() {
        let raw = match rng.as_mut() {
            None => top_right_singular_vectors(instance.channel(i, k), d),
            Some(rng) => CMat::from_fn(m, d, |_, _| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                c(re, im)
            }),
        };
        let target = instance.power_model.p_max(i) / loads[&i] as f64;
        let norm2 = fro2(&raw);
        *block = if norm2 > 0.0 { raw * c((target / norm2).sqrt(), 0.0) } else { raw };
    }
    set
}

/// Columns are the right singular vectors of `h` for its `d` largest singular values.
fn top_right_singular_vectors(h: &CMat, d: usize) -> CMat {
    let m = h.ncols();
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut out = CMat::zeros(m, d);
    for (col, &s) in order.iter().take(d).enumerate() {
        for r in 0..m {
            out[(r, col)] = v_t[(s, r)].conj();
        }
    }
    // d may exceed rank(h) only when N < d, which the config forbids.
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// `alpha_k` is a variable in `[0, 1]` and the objective is `sum (alpha_k - 1)^2`.
    Free,
    /// Every rate target is imposed in full and the objective is zero.
    FixedOne,
}

/// The per-iteration SOCP together with the map from variables back to
/// precoders and admission scalars.
#[derive(Debug, Clone)]
pub struct Stage1Program {
    pub program: ConeProgram,
    structure: PrecoderSet,
    offsets: BTreeMap<(usize, usize), usize>,
    alpha_vars: BTreeMap<usize, usize>,
    /// Users whose alpha is pinned at zero (and whose precoders are zero).
    pub dropped: BTreeSet<usize>,
    /// Indices of the user cones and RRH cones in `program.constraints`.
    pub user_cones: BTreeMap<usize, usize>,
    pub rrh_cones: BTreeMap<usize, usize>,
    pub epigraph: Option<usize>,
}

/// `t_k = log det W_k + d - sigma_k^2 Tr(U_k^H U_k W_k)`.
pub fn rate_constant(instance: &NetworkInstance, receivers: &ReceiverState, k: usize, d: usize) -> f64 {
    let u = receivers.filter(k);
    let w = receivers.weight(k);
    let log_det = log_det_hpd(w).unwrap_or(f64::NEG_INFINITY);
    log_det + d as f64 - instance.noise_powers[k] * trace_prod_re(&(u.adjoint() * u), w)
}

/// Builds the Stage-I SOCP for the users and links of `structure` with the
/// receivers held fixed.
pub fn build_stage1_program(
    instance: &NetworkInstance,
    structure: &PrecoderSet,
    receivers: &ReceiverState,
    mode: AlphaMode,
) -> Result<Stage1Program> {
    let (m, d) = (structure.tx_antennas(), structure.streams());
    let users = structure.users();
    let rate_min = instance.rate_min();
    let t: BTreeMap<usize, f64> = users.iter().map(|&k| (k, rate_constant(instance, receivers, k, d))).collect();
    let dropped: BTreeSet<usize> = users
        .iter()
        .copied()
        .filter(|k| !(t[k] > 0.0) || receivers.filter(*k).iter().all(|z| z.norm_sqr() == 0.0))
        .collect();

    let mut offsets = BTreeMap::new();
    let mut n = 0;
    for ((i, k), _) in structure.iter() {
        if !dropped.contains(&k) {
            offsets.insert((i, k), n);
            n += 2 * m * d;
        }
    }
    let mut alpha_vars = BTreeMap::new();
    if mode == AlphaMode::Free {
        for &k in &users {
            if !dropped.contains(&k) {
                alpha_vars.insert(k, n);
                n += 1;
            }
        }
    }
    let mut prog = ConeProgram::new(n.max(1));
    let n = prog.num_vars();

    let mut user_cones = BTreeMap::new();
    for &k in &users {
        if dropped.contains(&k) {
            continue;
        }
        let w_half = sqrtm_psd(receivers.weight(k));
        let uw = receivers.filter(k).adjoint();
        let live: Vec<usize> = users.iter().copied().filter(|j| !dropped.contains(j)).collect();
        let rows = live.len() * 2 * d * d + 1;
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for (pos, &j) in live.iter().enumerate() {
            let base = pos * 2 * d * d;
            for i in structure.cluster(j) {
                let coef = &w_half * &uw * instance.channel(i, k);
                let off = offsets[&(i, j)];
                for col in 0..d {
                    for r in 0..d {
                        let row = base + 2 * (col * d + r);
                        for mm in 0..m {
                            let a_rm = coef[(r, mm)];
                            let var = off + 2 * (col * m + mm);
                            a[(row, var)] += a_rm.re;
                            a[(row, var + 1)] -= a_rm.im;
                            a[(row + 1, var)] += a_rm.im;
                            a[(row + 1, var + 1)] += a_rm.re;
                        }
                    }
                }
            }
            if j == k {
                for col in 0..d {
                    for r in 0..d {
                        let row = base + 2 * (col * d + r);
                        b[row] -= w_half[(r, col)].re;
                        b[row + 1] -= w_half[(r, col)].im;
                    }
                }
            }
        }
        let tail = rows - 1;
        match mode {
            AlphaMode::Free => a[(tail, alpha_vars[&k])] = rate_min.sqrt(),
            AlphaMode::FixedOne => b[tail] = rate_min.sqrt(),
        }
        let idx = prog.add_soc(a, b, DVector::zeros(n), t[&k].sqrt())?;
        user_cones.insert(k, idx);
    }

    let mut rrh_cones = BTreeMap::new();
    for i in structure.rrhs() {
        let vars: Vec<usize> = structure
            .served_users(i)
            .into_iter()
            .filter(|k| !dropped.contains(k))
            .flat_map(|k| {
                let off = offsets[&(i, k)];
                off..off + 2 * m * d
            })
            .collect();
        if vars.is_empty() {
            continue;
        }
        let mut a = DMatrix::zeros(vars.len(), n);
        for (r, &v) in vars.iter().enumerate() {
            a[(r, v)] = 1.0;
        }
        let idx =
            prog.add_soc(a, DVector::zeros(vars.len()), DVector::zeros(n), instance.power_model.p_max(i).sqrt())?;
        rrh_cones.insert(i, idx);
    }

    let mut epigraph = None;
    if mode == AlphaMode::Free && !alpha_vars.is_empty() {
        for &v in alpha_vars.values() {
            prog.add_bounds(v, 0.0, 1.0)?;
        }
        // min ||1 - alpha|| has the same minimizer as the squared objective
        // and avoids the degenerate rotated cone near zero.
        let s = prog.add_variables(1);
        let n = prog.num_vars();
        let mut a = DMatrix::zeros(alpha_vars.len(), n);
        for (r, &v) in alpha_vars.values().enumerate() {
            a[(r, v)] = 1.0;
        }
        let mut c_vec = DVector::zeros(n);
        c_vec[s] = 1.0;
        prog.add_soc(a, DVector::from_element(alpha_vars.len(), -1.0), c_vec, 0.0)?;
        prog.objective[s] = 1.0;
        epigraph = Some(s);
    }

    Ok(Stage1Program {
        program: prog,
        structure: structure.clone(),
        offsets,
        alpha_vars,
        dropped,
        user_cones,
        rrh_cones,
        epigraph,
    })
}

impl Stage1Program {
    /// Precoders and alphas encoded by `z`. Alphas are clamped to `[0, 1]` and
    /// RRHs over their cap (by solver tolerance) are scaled back onto it.
    pub fn extract(&self, instance: &NetworkInstance, z: &DVector<f64>) -> (PrecoderSet, BTreeMap<usize, f64>) {
        let mut prec = self.structure.clone();
        let (m, d) = (prec.tx_antennas(), prec.streams());
        for ((i, k), block) in prec.iter_mut() {
            match self.offsets.get(&(i, k)) {
                Some(&off) => {
                    for col in 0..d {
                        for r in 0..m {
                            let v = off + 2 * (col * m + r);
                            block[(r, col)] = c(z[v], z[v + 1]);
                        }
                    }
                }
                None => block.fill(c(0.0, 0.0)),
            }
        }
        clamp_rrh_power(instance, &mut prec);
        let alphas = self
            .structure
            .users()
            .into_iter()
            .map(|k| {
                let a = match self.alpha_vars.get(&k) {
                    Some(&v) => z[v].clamp(0.0, 1.0),
                    None if self.dropped.contains(&k) => 0.0,
                    None => 1.0,
                };
                (k, a)
            })
            .collect();
        (prec, alphas)
    }

    /// Flattens precoders (and alphas) into a point of this program.
    pub fn point(&self, precoders: &PrecoderSet, alphas: &BTreeMap<usize, f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.program.num_vars());
        let (m, d) = (precoders.tx_antennas(), precoders.streams());
        for (&(i, k), &off) in &self.offsets {
            if let Some(block) = precoders.block(i, k) {
                for col in 0..d {
                    for r in 0..m {
                        let v = off + 2 * (col * m + r);
                        z[v] = block[(r, col)].re;
                        z[v + 1] = block[(r, col)].im;
                    }
                }
            }
        }
        for (&k, &v) in &self.alpha_vars {
            z[v] = alphas.get(&k).copied().unwrap_or(0.0);
        }
        if let Some(s) = self.epigraph {
            z[s] = self
                .alpha_vars
                .keys()
                .map(|k| (1.0 - alphas.get(k).copied().unwrap_or(0.0)).powi(2))
                .sum::<f64>()
                .sqrt();
        }
        z
    }
}

/// Scales each RRH's blocks down onto its power cap when it exceeds it.
pub fn clamp_rrh_power(instance: &NetworkInstance, precoders: &mut PrecoderSet) {
    for i in precoders.rrhs() {
        let p = precoders.transmit_power(i);
        let cap = instance.power_model.p_max(i);
        if p > cap {
            let s = c((cap / p).sqrt(), 0.0);
            for ((r, _), block) in precoders.iter_mut() {
                if r == i {
                    *block *= s;
                }
            }
        }
    }
}

/// `sum_k (alpha_k - 1)^2`.
pub fn alpha_objective(alphas: &BTreeMap<usize, f64>) -> f64 {
    alphas.values().map(|a| (a - 1.0) * (a - 1.0)).sum()
}

fn solve_program(prog: &Stage1Program, settings: &Stage1Settings) -> Result<conic::ConeSolution> {
    let sol = solve_cone_program(&prog.program, &settings.solver)?;
    match sol.status {
        SolveStatus::Optimal => Ok(sol),
        // An iterate this close to optimal is still a valid Stage-I point.
        SolveStatus::MaxIter if sol.kkt_residual <= 1e-6 => Ok(sol),
        SolveStatus::Infeasible => Err(CoreError::Infeasible("Stage-I SOCP".into())),
        s => Err(CoreError::NotConverged(format!("Stage-I SOCP ended with {s:?} (kkt {:.2e})", sol.kkt_residual))),
    }
}

/// Alternates the SOCP step in `(alpha, V)` with the closed-form `(U, W)`
/// update, starting from `init` (which must respect the power caps).
pub fn solve_alternative_problem(
    instance: &NetworkInstance,
    init: &PrecoderSet,
    settings: &Stage1Settings,
) -> Result<AdmissionResult> {
    let users = init.users();
    if users.is_empty() {
        return Ok(AdmissionResult::empty(instance, Vec::new(), 0));
    }
    let mut precoders = init.clone();
    let mut alphas: BTreeMap<usize, f64> = users.iter().map(|&k| (k, 0.0)).collect();
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    while iterations < settings.n_max {
        let receivers = update_receivers(instance, &precoders);
        let prog = build_stage1_program(instance, &precoders, &receivers, AlphaMode::Free)?;
        if prog.dropped.len() == users.len() {
            // Nothing left to optimize: every alpha is pinned at zero.
            precoders = prog.extract(instance, &DVector::zeros(prog.program.num_vars())).0;
            alphas = users.iter().map(|&k| (k, 0.0)).collect();
            trace.push(users.len() as f64);
            iterations += 1;
            break;
        }
        let sol = solve_program(&prog, settings).map_err(|e| match e {
            CoreError::NotConverged(msg) => CoreError::NotConverged(format!("{msg}; objective trace {trace:?}")),
            other => other,
        })?;
        iterations += 1;
        let (next, next_alphas) = prog.extract(instance, &sol.z);
        let obj = alpha_objective(&next_alphas);
        let prev = trace.last().copied();
        if prev.is_some_and(|p| obj > p) {
            // Solver noise only; the previous point is feasible for this SOCP.
            trace.push(prev.unwrap());
            break;
        }
        precoders = next;
        alphas = next_alphas;
        trace.push(obj);
        let converged = match prev {
            Some(p) => p - obj < settings.decrease_tol,
            None => false,
        };
        if converged || obj <= 1e-10 {
            break;
        }
    }
    let admitted = admitted_users(&alphas, settings.admit_tol);
    Ok(AdmissionResult {
        admitted_users: admitted,
        alphas,
        precoders,
        removal_order: Vec::new(),
        objective_trace: trace,
        iterations,
        polished: false,
    })
}

fn admitted_users(alphas: &BTreeMap<usize, f64>, tol: f64) -> Vec<usize> {
    alphas.iter().filter(|(_, a)| **a >= 1.0 - tol).map(|(k, _)| *k).collect()
}

/// Re-solves the SOCP with every rate target imposed in full (zero
/// objective) so the witness meets `R_k >= R_min` exactly rather than up to the
/// admission tolerance. Returns `None` when that fails.
pub fn polish_witness(
    instance: &NetworkInstance,
    precoders: &PrecoderSet,
    settings: &Stage1Settings,
) -> Option<PrecoderSet> {
    let rate_min = instance.rate_min();
    let meets = |p: &PrecoderSet| p.users().iter().all(|&k| user_rate(instance, p, k) >= rate_min);
    if meets(precoders) {
        return Some(precoders.clone());
    }
    let mut current = precoders.clone();
    for _ in 0..3 {
        let receivers = update_receivers(instance, &current);
        let prog = build_stage1_program(instance, &current, &receivers, AlphaMode::FixedOne).ok()?;
        if !prog.dropped.is_empty() {
            return None;
        }
        let sol = solve_cone_program(&prog.program, &settings.solver).ok()?;
        if sol.status != SolveStatus::Optimal {
            return None;
        }
        let (next, _) = prog.extract(instance, &sol.z);
        if meets(&next) {
            return Some(next);
        }
        current = next;
    }
    None
}

fn finish(
    instance: &NetworkInstance,
    mut result: AdmissionResult,
    removal_order: Vec<usize>,
    iterations: usize,
    settings: &Stage1Settings,
) -> AdmissionResult {
    result.removal_order = removal_order;
    result.iterations = iterations;
    if result.all_admitted() {
        if let Some(p) = polish_witness(instance, &result.precoders, settings) {
            result.precoders = p;
            result.polished = true;
        }
    }
    result
}

fn solve_users(instance: &NetworkInstance, users: &[usize], settings: &Stage1Settings) -> Result<AdmissionResult> {
    let init = init_precoders(instance, users, InitScheme::SvdInitial, None);
    solve_alternative_problem(instance, &init, settings)
}

/// USC user selection: drop the user with the smallest `alpha_k`
/// until every remaining user is admitted.
pub fn usc_select_users(instance: &NetworkInstance, settings: &Stage1Settings) -> Result<AdmissionResult> {
    let mut users: Vec<usize> = (0..instance.num_users()).collect();
    let mut removal = Vec::new();
    let mut iterations = 0;
    loop {
        if users.is_empty() {
            return Ok(AdmissionResult::empty(instance, removal, iterations));
        }
        let res = solve_users(instance, &users, settings)?;
        iterations += res.iterations;
        if res.all_admitted() {
            return Ok(finish(instance, res, removal, iterations, settings));
        }
        let worst = res
            .alphas
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
            .map(|(k, _)| *k)
            .expect("nonempty user set");
        users.retain(|&k| k != worst);
        removal.push(worst);
    }
}

/// Greedy user selection: each round removes the user whose exclusion gives
/// the smallest alternative-problem objective.
pub fn greedy_user_selection(instance: &NetworkInstance, settings: &Stage1Settings) -> Result<AdmissionResult> {
    let mut users: Vec<usize> = (0..instance.num_users()).collect();
    let mut removal = Vec::new();
    let mut iterations = 0;
    loop {
        if users.is_empty() {
            return Ok(AdmissionResult::empty(instance, removal, iterations));
        }
        let res = solve_users(instance, &users, settings)?;
        iterations += res.iterations;
        if res.all_admitted() {
            return Ok(finish(instance, res, removal, iterations, settings));
        }
        let trials: Vec<Result<(usize, f64, usize)>> = users
            .par_iter()
            .map(|&k| {
                let rest: Vec<usize> = users.iter().copied().filter(|&j| j != k).collect();
                let r = solve_users(instance, &rest, settings)?;
                Ok((k, r.final_objective(), r.iterations))
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for t in trials {
            let (k, obj, its) = t?;
            iterations += its;
            if best.is_none_or(|(bk, bo)| obj < bo || (obj == bo && k < bk)) {
                best = Some((k, obj));
            }
        }
        let (k, _) = best.expect("nonempty user set");
        users.retain(|&j| j != k);
        removal.push(k);
    }
}

/// Largest admissible user subset, searched by decreasing cardinality; ties
/// go to the smallest total transmit power, then to the first subset in
/// lexicographic order.
pub fn exhaustive_user_selection(instance: &NetworkInstance, settings: &Stage1Settings) -> Result<AdmissionResult> {
    let k_all = instance.num_users();
    if k_all > EXHAUSTIVE_USER_LIMIT {
        return Err(CoreError::Guard(format!(
            "exhaustive user search needs K <= {EXHAUSTIVE_USER_LIMIT}, got {k_all}"
        )));
    }
    let mut iterations = 0;
    for size in (1..=k_all).rev() {
        let subsets: Vec<Vec<usize>> = (0..k_all).combinations(size).collect();
        let results: Vec<Result<AdmissionResult>> =
            subsets.par_iter().map(|s| solve_users(instance, s, settings)).collect();
        let mut best: Option<(f64, AdmissionResult)> = None;
        for r in results {
            let r = r?;
            iterations += r.iterations;
            if r.all_admitted() {
                let power: f64 = r.precoders.rrhs().iter().map(|&i| r.precoders.transmit_power(i)).sum();
                if best.as_ref().is_none_or(|(bp, _)| power < *bp) {
                    best = Some((power, r));
                }
            }
        }
        if let Some((_, r)) = best {
            let removal = (0..k_all).filter(|k| !r.admitted_users.contains(k)).collect();
            return Ok(finish(instance, r, removal, iterations, settings));
        }
    }
    Ok(AdmissionResult::empty(instance, (0..k_all).collect(), iterations))
}

/// Runs the alternative problem for `users` restricted to the RRHs in
/// `active`; returns a witness when every user is admitted.
pub fn check_feasibility(
    instance: &NetworkInstance,
    users: &[usize],
    active: &BTreeSet<usize>,
    settings: &Stage1Settings,
) -> Result<Option<PrecoderSet>> {
    for &k in users {
        if !instance.candidate_rrhs[k].iter().any(|i| active.contains(i)) {
            return Ok(None);
        }
    }
    if users.is_empty() {
        return Ok(Some(PrecoderSet::empty(instance.config.tx_antennas, instance.config.streams)));
    }
    let init = init_precoders(instance, users, InitScheme::SvdInitial, Some(active));
    let res = solve_alternative_problem(instance, &init, settings)?;
    if !res.all_admitted() {
        return Ok(None);
    }
    Ok(Some(polish_witness(instance, &res.precoders, settings).unwrap_or(res.precoders)))
}
