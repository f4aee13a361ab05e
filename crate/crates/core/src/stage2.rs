//! Stage II: reweighted-l1 RRH selection over weighted power minimization
//! (WPM) subproblems, each solved by the WMMSE loop with the dual solver as
//! its precoder step.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dual::{bcd_solve, kkt_report, BcdSettings, DualTraceRecord, KktReport, WpmSubproblem};
use crate::error::{CoreError, Result};
use crate::linalg::c;
use crate::mmse::{h_lower_bound, update_receivers, ReceiverState};
use crate::network::{npc, user_rates, NetworkInstance, NpcBreakdown};
use crate::precoder::PrecoderSet;
use crate::stage1::{check_feasibility, Stage1Settings};

/// Rate shortfall tolerated on a WMMSE start point and on reported solutions.
pub const RATE_TOL: f64 = 1e-6;
/// Rate shortfall tolerated when accepting a new WMMSE iterate.
pub const ACCEPT_RATE_TOL: f64 = 1e-7;
/// Per-RRH power overshoot tolerated on any accepted point.
pub const POWER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseSettings {
    pub l_max: usize,
    /// Relative objective decrease below which the loop stops.
    pub eps: f64,
    pub bcd: BcdSettings,
    /// Keep every dual-solver iteration in [`WmmseOutcome::dual_trace`].
    pub record_dual_trace: bool,
}

impl Default for WmmseSettings {
    fn default() -> Self {
        Self { l_max: 50, eps: 1e-3, bcd: BcdSettings::default(), record_dual_trace: false }
    }
}

/// One dual-solver iteration tagged with the loops it ran in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualDump {
    pub rln_iteration: usize,
    pub wmmse_iteration: usize,
    #[serde(flatten)]
    pub record: DualTraceRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WmmseStop {
    /// Relative decrease fell below `eps`.
    Converged,
    /// The next precoder step did not improve on the current iterate.
    Stalled,
    MaxIter,
    /// The dual solver failed; the last accepted iterate is returned.
    SubproblemFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseOutcome {
    pub precoders: PrecoderSet,
    /// `sum_i omega_i P_i` of the start point followed by every accepted iterate.
    pub objective_trace: Vec<f64>,
    /// Smallest `R_k - R_min` of the start point and every accepted iterate.
    pub rate_slack_trace: Vec<f64>,
    pub iterations: usize,
    pub stop: WmmseStop,
    /// Multipliers of the last accepted precoder step (empty if none).
    pub lambda: DVector<f64>,
    pub mu: DVector<f64>,
    /// Dual-solver KKT report of the last accepted step.
    pub kkt: Option<KktReport>,
    pub bcd_outer_iterations: Vec<usize>,
    pub bcd_converged: Vec<bool>,
    /// Precoder steps pulled back toward the previous iterate to stay feasible.
    pub restored_steps: usize,
    pub dual_trace: Vec<DualDump>,
}

impl WmmseOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.stop, WmmseStop::Converged | WmmseStop::Stalled)
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the start point")
    }
}

/// `sum_i omega_i P_i^tr`, `omega` indexed by RRH id.
pub fn wpm_objective(precoders: &PrecoderSet, omega: &[f64]) -> f64 {
    precoders.rrhs().iter().map(|&i| omega[i] * precoders.transmit_power(i)).sum()
}

/// Smallest `R_k - R_min` over the users of `precoders` (infinity if none).
pub fn min_rate_slack(instance: &NetworkInstance, precoders: &PrecoderSet) -> f64 {
    let rates = user_rates(instance, precoders);
    precoders.users().iter().map(|&k| rates[k] - instance.rate_min()).fold(f64::INFINITY, f64::min)
}

/// Largest `P_i - P_max_i` over the RRHs of `precoders` (-infinity if none).
pub fn max_power_excess(instance: &NetworkInstance, precoders: &PrecoderSet) -> f64 {
    precoders
        .rrhs()
        .iter()
        .map(|&i| precoders.transmit_power(i) - instance.power_model.p_max(i))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Weights `eta_i` for plain (amplifier-weighted) transmit power minimization.
pub fn transmit_power_weights(instance: &NetworkInstance) -> Vec<f64> {
    (0..instance.num_rrhs()).map(|i| instance.power_model.eta(i)).collect()
}

/// WMMSE loop on the WPM problem over the structure of `init`.
/// `omega` is indexed by RRH id.
pub fn wmmse_solve_wpm(
    instance: &NetworkInstance,
    init: &PrecoderSet,
    omega: &[f64],
    settings: &WmmseSettings,
) -> Result<WmmseOutcome> {
    let slack0 = min_rate_slack(instance, init);
    if slack0 < -RATE_TOL {
        return Err(CoreError::Infeasible(format!("WMMSE start point misses the rate target by {:.3e}", -slack0)));
    }
    let excess0 = max_power_excess(instance, init);
    if excess0 > POWER_TOL {
        return Err(CoreError::Infeasible(format!("WMMSE start point exceeds a power cap by {excess0:.3e}")));
    }
    let mut current = init.clone();
    let mut out = WmmseOutcome {
        precoders: init.clone(),
        objective_trace: vec![wpm_objective(init, omega)],
        rate_slack_trace: vec![slack0],
        iterations: 0,
        stop: WmmseStop::MaxIter,
        lambda: DVector::zeros(0),
        mu: DVector::zeros(0),
        kkt: None,
        bcd_outer_iterations: Vec::new(),
        bcd_converged: Vec::new(),
        restored_steps: 0,
        dual_trace: Vec::new(),
    };
    if init.users().is_empty() {
        out.stop = WmmseStop::Converged;
        return Ok(out);
    }
    let mut warm: Option<(DVector<f64>, DVector<f64>)> = None;
    while out.iterations < settings.l_max {
        out.iterations += 1;
        let receivers = update_receivers(instance, &current);
        let step = WpmSubproblem::new(instance, &current, &receivers, omega)
            .and_then(|sub| bcd_solve(&sub, &settings.bcd, warm.as_ref().map(|(l, m)| (l, m))));
        let bcd = match step {
            Ok(b) => b,
            Err(e) => {
                log::warn!("WMMSE precoder step {} failed: {e}", out.iterations);
                out.stop = WmmseStop::SubproblemFailed;
                break;
            }
        };
        if settings.record_dual_trace {
            let it = out.iterations;
            out.dual_trace.extend(bcd.trace.iter().map(|r| DualDump {
                rln_iteration: 0,
                wmmse_iteration: it,
                record: r.clone(),
            }));
        }
        out.bcd_outer_iterations.push(bcd.outer_iterations);
        out.bcd_converged.push(bcd.converged);
        let prev = out.objective();
        let mut next = bcd.precoders.clone();
        if !meets_subproblem(instance, &receivers, &next)? {
            let t = largest_feasible_blend(instance, &receivers, &current, &bcd.precoders)?;
            next = blend(&current, &bcd.precoders, t);
            out.restored_steps += 1;
        }
        let obj = wpm_objective(&next, omega);
        let slack = min_rate_slack(instance, &next);
        let excess = max_power_excess(instance, &next);
        if obj >= prev || slack < -ACCEPT_RATE_TOL || excess > POWER_TOL {
            out.stop = WmmseStop::Stalled;
            break;
        }
        warm = Some((bcd.lambda().clone(), bcd.mu().clone()));
        out.lambda = bcd.lambda().clone();
        out.mu = bcd.mu().clone();
        out.kkt = Some(bcd.kkt.clone());
        out.objective_trace.push(obj);
        out.rate_slack_trace.push(slack);
        current = next;
        if prev - obj <= settings.eps * prev.abs() {
            out.stop = WmmseStop::Converged;
            break;
        }
    }
    out.precoders = current;
    Ok(out)
}

/// Whether `precoders` satisfies the subproblem constraints `h_k >= R_min`
/// (to [`ACCEPT_RATE_TOL`]) and the power caps (to [`POWER_TOL`]).
fn meets_subproblem(instance: &NetworkInstance, receivers: &ReceiverState, precoders: &PrecoderSet) -> Result<bool> {
    if max_power_excess(instance, precoders) > POWER_TOL {
        return Ok(false);
    }
    for k in precoders.users() {
        let h = h_lower_bound(instance, precoders, receivers.filter(k), receivers.weight(k), k)?;
        if h < instance.rate_min() - ACCEPT_RATE_TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `(1 - t) a + t b` blockwise; both sets share one structure.
fn blend(a: &PrecoderSet, b: &PrecoderSet, t: f64) -> PrecoderSet {
    let mut out = a.clone();
    for ((i, k), block) in out.iter_mut() {
        let other = b.block(i, k).expect("same structure");
        *block = &*block * c(1.0 - t, 0.0) + other * c(t, 0.0);
    }
    out
}

/// Largest `t` in `[0, 1]` (to bisection accuracy) with `blend(from, to, t)`
/// feasible for the subproblem. `from` is feasible and the constraint set is
/// convex, so the feasible `t` form an interval containing 0.
fn largest_feasible_blend(
    instance: &NetworkInstance,
    receivers: &ReceiverState,
    from: &PrecoderSet,
    to: &PrecoderSet,
) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if meets_subproblem(instance, receivers, &blend(from, to, mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// KKT residuals of the WPM problem itself at `precoders`: the receivers are
/// re-derived from `precoders`, so the surrogate `h_k` equals the rate and its
/// gradient equals the rate gradient.
pub fn wpm_kkt_residual(
    instance: &NetworkInstance,
    precoders: &PrecoderSet,
    omega: &[f64],
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<KktReport> {
    let receivers = update_receivers(instance, precoders);
    let sub = WpmSubproblem::new(instance, precoders, &receivers, omega)?;
    kkt_report(&sub, precoders, lambda, mu)
}

/// `{i : P_i^tr > theta_off}`.
pub fn extract_active_set(precoders: &PrecoderSet, theta_off: f64) -> BTreeSet<usize> {
    precoders.rrhs().into_iter().filter(|&i| precoders.transmit_power(i) > theta_off).collect()
}

/// Reweighting data for one RLN iteration, all indexed by RRH id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlnWeights {
    /// `omega_i = eta_i + a_i P̃_i^c`.
    pub omega: Vec<f64>,
    /// `a_i = 1 / (P_i + delta)`.
    pub raw: Vec<f64>,
    /// `P̃_i^c = rho_i sum_{k in U_i} R_min + P_i^c`.
    pub p_tilde_c: Vec<f64>,
}

/// Weights from per-RRH powers and per-RRH user loads `|U_i|`.
pub fn rln_weights_from_powers(instance: &NetworkInstance, powers: &[f64], loads: &[usize], delta: f64) -> RlnWeights {
    let pm = &instance.power_model;
    let m = instance.config.tx_antennas;
    let n = instance.num_rrhs();
    let mut w = RlnWeights { omega: vec![0.0; n], raw: vec![0.0; n], p_tilde_c: vec![0.0; n] };
    for i in 0..n {
        let a = 1.0 / (powers[i] + delta);
        let pc = pm.rho(i) * loads[i] as f64 * instance.rate_min() + pm.circuit_power(i, m);
        w.raw[i] = a;
        w.p_tilde_c[i] = pc;
        w.omega[i] = pm.eta(i) + a * pc;
    }
    w
}

/// Per-RRH transmit powers of `precoders`, indexed by RRH id.
pub fn rrh_powers(instance: &NetworkInstance, precoders: &PrecoderSet) -> Vec<f64> {
    (0..instance.num_rrhs()).map(|i| precoders.transmit_power(i)).collect()
}

/// Per-RRH count of users holding a block, indexed by RRH id.
pub fn rrh_loads(instance: &NetworkInstance, precoders: &PrecoderSet) -> Vec<usize> {
    (0..instance.num_rrhs()).map(|i| precoders.served_users(i).len()).collect()
}

pub fn rln_weights(instance: &NetworkInstance, precoders: &PrecoderSet, delta: f64) -> RlnWeights {
    rln_weights_from_powers(instance, &rrh_powers(instance, precoders), &rrh_loads(instance, precoders), delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlnSettings {
    pub n_max: usize,
    pub delta: f64,
    pub theta_off: f64,
    /// Optional early stop once the NPC trace changes by less than this
    /// (relative) with an unchanged active set. Off by default: late
    /// switch-offs are common after long flat stretches.
    pub flat_tol: Option<f64>,
    pub wmmse: WmmseSettings,
}

impl Default for RlnSettings {
    fn default() -> Self {
        Self { n_max: 10, delta: 1e-5, theta_off: 1e-4, flat_tol: None, wmmse: WmmseSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlnState {
    /// Weights used in the last iteration.
    pub weights: RlnWeights,
    pub delta: f64,
    pub iteration: usize,
    /// NPC and active-RRH count of each iterate, the start point first.
    pub npc_trace: Vec<f64>,
    pub active_count_trace: Vec<usize>,
    /// Per-RRH powers of each iterate, the start point first.
    pub power_trace: Vec<Vec<f64>>,
    pub wmmse_iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlnOutcome {
    pub precoders: PrecoderSet,
    pub rates: Vec<f64>,
    pub npc: NpcBreakdown,
    pub active_set: BTreeSet<usize>,
    pub state: RlnState,
    /// Active set suggested by the last iterate before any fallback.
    pub extracted_set: BTreeSet<usize>,
    pub fallback_used: bool,
    /// All inner WMMSE loops and the final re-solve converged.
    pub converged: bool,
    pub final_wmmse_iterations: usize,
    /// Dual-solver iterations of the reweighting loop, when recorded.
    pub dual_trace: Vec<DualDump>,
}

/// NPC of `precoders` with blocks at RRHs outside `active` discarded.
fn thresholded_npc(instance: &NetworkInstance, precoders: &PrecoderSet, active: &BTreeSet<usize>) -> Result<f64> {
    let kept = precoders.restrict(active);
    let rates = user_rates(instance, &kept);
    Ok(npc(instance, &kept, &rates, active)?.full_npc)
}

/// Reweighted-l1 loop from the feasible point `v0`, followed by
/// the restricted re-solve on the extracted active set.
pub fn rln_solve(instance: &NetworkInstance, v0: &PrecoderSet, settings: &RlnSettings) -> Result<RlnOutcome> {
    let eval = Evaluator::new(instance, &v0.users(), EvalSettings { wmmse: settings.wmmse, ..Default::default() });
    rln_solve_with(&eval, v0, settings)
}

/// As [`rln_solve`], sharing the final active-set evaluation with `eval`.
pub fn rln_solve_with(eval: &Evaluator, v0: &PrecoderSet, settings: &RlnSettings) -> Result<RlnOutcome> {
    let instance = eval.instance;
    if !(settings.delta > 0.0) || !(settings.theta_off > 0.0) {
        return Err(CoreError::Config("delta and theta_off must be positive".into()));
    }
    if v0.users() != eval.users {
        return Err(CoreError::Config("start point and evaluator serve different users".into()));
    }
    let mut v = v0.clone();
    let loads = rrh_loads(instance, &v);
    let mut active = extract_active_set(&v, settings.theta_off);
    let mut state = RlnState {
        weights: rln_weights_from_powers(instance, &rrh_powers(instance, &v), &loads, settings.delta),
        delta: settings.delta,
        iteration: 0,
        npc_trace: vec![thresholded_npc(instance, &v, &active)?],
        active_count_trace: vec![active.len()],
        power_trace: vec![rrh_powers(instance, &v)],
        wmmse_iterations: Vec::new(),
    };
    let mut converged = true;
    let mut dual_trace = Vec::new();
    while state.iteration < settings.n_max {
        state.iteration += 1;
        state.weights = rln_weights_from_powers(instance, &rrh_powers(instance, &v), &loads, settings.delta);
        let mut w = wmmse_solve_wpm(instance, &v, &state.weights.omega, &settings.wmmse)?;
        for d in &mut w.dual_trace {
            d.rln_iteration = state.iteration;
        }
        dual_trace.append(&mut w.dual_trace);
        converged &= w.converged();
        state.wmmse_iterations.push(w.iterations);
        // An unchanged iterate is a fixed point: every later iteration repeats it.
        let fixed = w.precoders == v;
        v = w.precoders;
        let next_active = extract_active_set(&v, settings.theta_off);
        let value = thresholded_npc(instance, &v, &next_active)?;
        let prev = *state.npc_trace.last().expect("start point recorded");
        state.npc_trace.push(value);
        state.active_count_trace.push(next_active.len());
        state.power_trace.push(rrh_powers(instance, &v));
        let flat =
            settings.flat_tol.is_some_and(|tol| (prev - value).abs() <= tol * prev.abs()) && next_active == active;
        active = next_active;
        if fixed || flat {
            break;
        }
    }

    let extracted = active.clone();
    let (eval_set, evaluation) = eval.evaluate_or_grow(&extracted, &state.power_trace[state.power_trace.len() - 1])?;
    Ok(RlnOutcome {
        precoders: evaluation.precoders.clone(),
        rates: evaluation.rates.clone(),
        npc: evaluation.npc.clone(),
        fallback_used: eval_set != extracted,
        active_set: eval_set,
        extracted_set: extracted,
        state,
        converged: converged && evaluation.converged,
        final_wmmse_iterations: evaluation.wmmse_iterations,
        dual_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalSettings {
    pub stage1: Stage1Settings,
    pub wmmse: WmmseSettings,
}

/// Transmit-power-optimal precoders for one active set and their NPC.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub active: BTreeSet<usize>,
    pub precoders: PrecoderSet,
    pub rates: Vec<f64>,
    pub npc: NpcBreakdown,
    pub wmmse_iterations: usize,
    pub converged: bool,
}

/// Evaluates active RRH sets for a fixed user set: feasibility check, then
/// WMMSE transmit power minimization with weights `eta_i` from the
/// feasibility witness, then the NPC at the achieved rates. Results are cached
/// per set and safe to share across threads.
pub struct Evaluator<'a> {
    pub instance: &'a NetworkInstance,
    pub users: Vec<usize>,
    pub settings: EvalSettings,
    cache: Mutex<HashMap<BTreeSet<usize>, Option<Arc<Evaluation>>>>,
    checks: AtomicUsize,
    failures: AtomicUsize,
}

impl<'a> Evaluator<'a> {
    pub fn new(instance: &'a NetworkInstance, users: &[usize], settings: EvalSettings) -> Self {
        let mut users = users.to_vec();
        users.sort_unstable();
        users.dedup();
        Self {
            instance,
            users,
            settings,
            cache: Mutex::new(HashMap::new()),
            checks: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
        }
    }

    /// Distinct active sets evaluated so far.
    pub fn feasibility_checks(&self) -> usize {
        self.checks.load(Ordering::Relaxed)
    }

    /// Sets whose check ended in a solver failure (counted as infeasible).
    pub fn solver_failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }

    /// Every candidate RRH of the evaluated users.
    pub fn full_set(&self) -> BTreeSet<usize> {
        self.instance.candidate_union(&self.users)
    }

    /// `None` when `active` cannot serve every user at its rate target.
    pub fn evaluate(&self, active: &BTreeSet<usize>) -> Result<Option<Arc<Evaluation>>> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(active) {
            return Ok(hit.clone());
        }
        let result = self.compute(active)?.map(Arc::new);
        let mut cache = self.cache.lock().expect("cache lock");
        if !cache.contains_key(active) {
            self.checks.fetch_add(1, Ordering::Relaxed);
            cache.insert(active.clone(), result.clone());
        }
        Ok(cache[active].clone())
    }

    fn compute(&self, active: &BTreeSet<usize>) -> Result<Option<Evaluation>> {
        let inst = self.instance;
        let witness = match check_feasibility(inst, &self.users, active, &self.settings.stage1) {
            Ok(Some(w)) => w,
            Ok(None) => return Ok(None),
            Err(CoreError::NotConverged(msg)) => {
                log::warn!("feasibility check of {active:?} failed: {msg}");
                self.failures.fetch_add(1, Ordering::Relaxed);
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let w = match wmmse_solve_wpm(inst, &witness, &transmit_power_weights(inst), &self.settings.wmmse) {
            Ok(w) => w,
            Err(CoreError::Infeasible(msg)) => {
                log::debug!("witness for {active:?} rejected: {msg}");
                return Ok(None);
            }
            Err(e) => return Err(e),
        };
        let converged = w.converged();
        let rates = user_rates(inst, &w.precoders);
        let breakdown = npc(inst, &w.precoders, &rates, active)?;
        Ok(Some(Evaluation {
            active: active.clone(),
            precoders: w.precoders,
            rates,
            npc: breakdown,
            wmmse_iterations: w.iterations,
            converged,
        }))
    }

    /// Evaluates `start`; while infeasible, adds the remaining candidate RRHs
    /// one at a time in order of decreasing `powers` (by RRH id).
    pub fn evaluate_or_grow(
        &self,
        start: &BTreeSet<usize>,
        powers: &[f64],
    ) -> Result<(BTreeSet<usize>, Arc<Evaluation>)> {
        let mut set = start.clone();
        let mut rest: Vec<usize> = self.full_set().difference(start).copied().collect();
        rest.sort_by(|&a, &b| powers[b].total_cmp(&powers[a]).then(a.cmp(&b)));
        let mut rest = rest.into_iter();
        loop {
            if let Some(e) = self.evaluate(&set)? {
                return Ok((set, e));
            }
            match rest.next() {
                Some(i) => {
                    set.insert(i);
                }
                None => return Err(CoreError::Infeasible("no candidate RRH set serves every user".into())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMat;
    use crate::network::{NetworkConfig, PowerModel};

    fn scalar_instance(rate_min: f64) -> NetworkInstance {
        let cfg = NetworkConfig {
            num_rrhs: 1,
            num_users: 1,
            tx_antennas: 1,
            rx_antennas: 1,
            streams: 1,
            candidate_size: 1,
            rate_min,
            ..Default::default()
        };
        NetworkInstance::from_parts(
            cfg,
            PowerModel::default(),
            vec![],
            vec![],
            vec![CMat::from_element(1, 1, c(1.0, 0.0))],
            vec![1.0],
            vec![vec![0]],
        )
        .unwrap()
    }

    fn scalar_point(inst: &NetworkInstance, v: f64) -> PrecoderSet {
        let mut p = PrecoderSet::zeros(inst, &[0], None);
        *p.block_mut(0, 0).unwrap() = CMat::from_element(1, 1, c(v, 0.0));
        p
    }

    #[test]
    fn weights_match_definition() {
        let inst = scalar_instance(2.0);
        let w = rln_weights_from_powers(&inst, &[0.0], &[2], 1e-5);
        assert!((w.raw[0] - 1e5).abs() < 1e-6);
        // Single-antenna RRH: P^c = 1.25 + 3.1.
        let pc = 0.5 * 2.0 * 2.0 + 4.35;
        assert!((w.p_tilde_c[0] - pc).abs() < 1e-12);
        assert!((w.omega[0] - (4.0 + 1e5 * pc)).abs() < 1e-5);
    }

    #[test]
    fn active_set_threshold_is_strict() {
        let inst = scalar_instance(1.0);
        assert!(extract_active_set(&scalar_point(&inst, 0.0), 1e-4).is_empty());
        assert!(extract_active_set(&scalar_point(&inst, 0.5), 0.25).is_empty());
        assert_eq!(extract_active_set(&scalar_point(&inst, 2.0), 1e-4).len(), 1);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let inst = scalar_instance(2f64.ln());
        let err = wmmse_solve_wpm(&inst, &scalar_point(&inst, 0.5), &[1.0], &WmmseSettings::default());
        assert!(matches!(err, Err(CoreError::Infeasible(_))));
    }
}
