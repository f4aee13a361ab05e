//! Invariant checks on a single generated instance.

use cran_core::baselines::{run_baseline, BaselineMethod, EXHAUSTIVE_RRH_LIMIT};
use cran_core::dual::{dual_value, grad_lambda, grad_mu, hessian_lambda, DualState, WpmSubproblem};
use cran_core::error::Result;
use cran_core::linalg::{c, CMat};
use cran_core::mmse::{h_lower_bound, update_receivers};
use cran_core::network::{npc, user_rate, NetworkInstance};
use cran_core::precoder::PrecoderSet;
use cran_core::stage1::{init_precoders, solve_alternative_problem, usc_select_users, InitScheme, Stage1Settings};
use cran_core::stage2::{
    max_power_excess, min_rate_slack, rln_solve_with, transmit_power_weights, wmmse_solve_wpm, EvalSettings, Evaluator,
    RlnSettings, WmmseSettings, POWER_TOL, RATE_TOL,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn random_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// Random precoders on every candidate link, scaled into the power caps.
fn random_precoders(inst: &NetworkInstance, users: &[usize], rng: &mut ChaCha20Rng) -> PrecoderSet {
    let mut v = PrecoderSet::zeros(inst, users, None);
    let (m, d) = (v.tx_antennas(), v.streams());
    for (_, block) in v.iter_mut() {
        *block = random_matrix(rng, m, d);
    }
    let ratio = v.rrhs().into_iter().map(|i| v.transmit_power(i) / inst.power_model.p_max(i)).fold(0.0, f64::max);
    if ratio > 0.0 {
        v.scale(rng.random_range(0.05..1.0) / ratio.sqrt());
    }
    v
}

/// The MSE bound never exceeds the rate and is tight at the MMSE receiver.
fn rate_lower_bound(inst: &NetworkInstance, rng: &mut ChaCha20Rng) -> Result<Check> {
    let users: Vec<usize> = (0..inst.num_users()).collect();
    let (n, d) = (inst.config.rx_antennas, inst.config.streams);
    let (mut worst_gap, mut worst_tight) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..20 {
        let v = random_precoders(inst, &users, rng);
        let opt = update_receivers(inst, &v);
        for &k in &users {
            let rate = user_rate(inst, &v, k);
            let u = random_matrix(rng, n, d);
            let a = random_matrix(rng, d, d);
            let w = &a * a.adjoint() + CMat::identity(d, d) * c(0.1, 0.0);
            worst_gap = worst_gap.max(h_lower_bound(inst, &v, &u, &w, k)? - rate);
            let h = h_lower_bound(inst, &v, opt.filter(k), opt.weight(k), k)?;
            worst_tight = worst_tight.max((h - rate).abs() / (1.0 + rate.abs()));
        }
    }
    Ok(check(
        "rate_lower_bound",
        worst_gap <= 1e-8 && worst_tight <= 1e-8,
        format!("max h-R {worst_gap:.3e}, max tightness gap {worst_tight:.3e}"),
    ))
}

fn stage1_monotone(inst: &NetworkInstance, settings: &Stage1Settings) -> Result<Check> {
    let users: Vec<usize> = (0..inst.num_users()).collect();
    let init = init_precoders(inst, &users, InitScheme::SvdInitial, None);
    let res = solve_alternative_problem(inst, &init, settings)?;
    let rise = res.objective_trace.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(check(
        "stage1_monotone",
        rise <= 1e-9,
        format!("{} iterations, largest increase {rise:.3e}", res.objective_trace.len()),
    ))
}

/// Dual gradients and the lambda Hessian against central differences.
fn dual_derivatives(inst: &NetworkInstance, witness: &PrecoderSet, rng: &mut ChaCha20Rng) -> Result<Check> {
    let omega = transmit_power_weights(inst);
    let receivers = update_receivers(inst, witness);
    let sub = WpmSubproblem::new(inst, witness, &receivers, &omega)?;
    let lambda = DVector::from_fn(sub.num_users(), |_, _| rng.random_range(0.5..2.0));
    let mu = DVector::from_fn(sub.num_rrhs(), |_, _| rng.random_range(0.1..1.0));
    let st = DualState::new(&sub, lambda.clone(), mu.clone())?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst = 0.0f64;
    let gl = grad_lambda(&sub, &st);
    let hl = hessian_lambda(&sub, &st);
    for a in 0..lambda.len() {
        let h = 1e-5 * lambda[a].max(1.0);
        let (mut lp, mut lm) = (lambda.clone(), lambda.clone());
        lp[a] += h;
        lm[a] -= h;
        let fd = (dual_value(&sub, &lp, &mu)? - dual_value(&sub, &lm, &mu)?) / (2.0 * h);
        worst = worst.max(rel(fd, gl[a]));
        let gp = grad_lambda(&sub, &DualState::new(&sub, lp, mu.clone())?);
        let gm = grad_lambda(&sub, &DualState::new(&sub, lm, mu.clone())?);
        for b in 0..lambda.len() {
            worst = worst.max(rel((gp[b] - gm[b]) / (2.0 * h), hl[(b, a)]));
        }
    }
    let gmu = grad_mu(&sub, &st);
    for i in 0..mu.len() {
        let h = 1e-5 * mu[i].max(1.0);
        let (mut mp, mut mm) = (mu.clone(), mu.clone());
        mp[i] += h;
        mm[i] -= h;
        let fd = (dual_value(&sub, &lambda, &mp)? - dual_value(&sub, &lambda, &mm)?) / (2.0 * h);
        worst = worst.max(rel(fd, gmu[i]));
    }
    Ok(check("dual_derivatives", worst <= 1e-5, format!("max relative error {worst:.3e}")))
}

fn wmmse_invariants(inst: &NetworkInstance, witness: &PrecoderSet) -> Result<Check> {
    let out = wmmse_solve_wpm(inst, witness, &transmit_power_weights(inst), &WmmseSettings::default())?;
    let min_slack = out.rate_slack_trace.iter().copied().fold(f64::INFINITY, f64::min);
    let rise = out.objective_trace.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let excess = max_power_excess(inst, &out.precoders);
    Ok(check(
        "wmmse_feasible_monotone",
        min_slack >= -RATE_TOL && rise <= 0.0 && excess <= POWER_TOL,
        format!(
            "{} iterations ({:?}), min slack {min_slack:.3e}, largest increase {rise:.3e}, power excess {excess:.3e}",
            out.iterations, out.stop
        ),
    ))
}

fn rln_invariants(eval: &Evaluator, witness: &PrecoderSet) -> Result<(Check, f64)> {
    let inst = eval.instance;
    let out = rln_solve_with(eval, witness, &RlnSettings::default())?;
    let slack = min_rate_slack(inst, &out.precoders);
    let excess = max_power_excess(inst, &out.precoders);
    let stray: Vec<usize> = out.precoders.rrhs().difference(&out.active_set).copied().collect();
    let again = npc(inst, &out.precoders, &out.rates, &out.active_set)?.full_npc;
    let mismatch = (again - out.npc.full_npc).abs();
    Ok((
        check(
            "rln_solution",
            slack >= -RATE_TOL && excess <= POWER_TOL && stray.is_empty() && mismatch <= 1e-9,
            format!(
                "npc {:.4}, {} active, min slack {slack:.3e}, power excess {excess:.3e}, blocks off the active set {stray:?}",
                out.npc.full_npc,
                out.active_set.len()
            ),
        ),
        out.npc.full_npc,
    ))
}

/// Exhaustive search is a lower bound on every other RRH selection.
fn ordering(eval: &Evaluator, rln_npc: f64) -> Result<Check> {
    let mut npcs = vec![("rln", rln_npc)];
    for m in [BaselineMethod::GreedySearch, BaselineMethod::SuccessiveSelection, BaselineMethod::FullCooperation] {
        npcs.push((m.name(), run_baseline(m, eval)?.npc.full_npc));
    }
    let best = run_baseline(BaselineMethod::ExhaustiveSearch, eval)?.npc.full_npc;
    let tol = 1e-6 * best.abs().max(1.0);
    let bad: Vec<&str> = npcs.iter().filter(|(_, v)| *v < best - tol).map(|(n, _)| *n).collect();
    let greedy_over_full = npcs[1].1 > npcs[3].1 + tol;
    Ok(check(
        "baseline_ordering",
        bad.is_empty() && !greedy_over_full,
        format!("exhaustive {best:.4}, others {npcs:?}, below exhaustive {bad:?}"),
    ))
}

/// Runs every check on `inst`; `seed` drives the random test points.
pub fn verify_instance(inst: &NetworkInstance, seed: u64) -> Result<VerifyReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let s1 = Stage1Settings::default();
    let mut checks = vec![rate_lower_bound(inst, &mut rng)?, stage1_monotone(inst, &s1)?];
    let adm = usc_select_users(inst, &s1)?;
    if adm.admitted_users.is_empty() {
        checks.push(check("stage2", true, "no user admitted; Stage II checks skipped".into()));
        return Ok(VerifyReport { seed, checks });
    }
    let witness = adm.precoders.clone();
    let slack = min_rate_slack(inst, &witness);
    checks.push(check(
        "stage1_witness",
        slack >= -RATE_TOL && max_power_excess(inst, &witness) <= POWER_TOL,
        format!("{} of {} users admitted, min slack {slack:.3e}", adm.admitted_users.len(), inst.num_users()),
    ));
    checks.push(dual_derivatives(inst, &witness, &mut rng)?);
    checks.push(wmmse_invariants(inst, &witness)?);
    let eval = Evaluator::new(inst, &adm.admitted_users, EvalSettings::default());
    let (rln, rln_npc) = rln_invariants(&eval, &witness)?;
    checks.push(rln);
    if inst.num_rrhs() <= EXHAUSTIVE_RRH_LIMIT {
        checks.push(ordering(&eval, rln_npc)?);
    }
    Ok(VerifyReport { seed, checks })
}
