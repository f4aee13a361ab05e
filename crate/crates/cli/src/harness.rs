//! Monte Carlo experiments: one instance per (sweep value, trial), Stage I,
//! then every requested method, one record per method. Records go to JSONL;
//! per-(value, method) means and standard errors go to CSV.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use clap::ValueEnum;
use cran_core::baselines::{run_baseline, BaselineMethod};
use cran_core::error::{CoreError, Result};
use cran_core::network::{generate_instance, NetworkConfig, NetworkInstance, NpcBreakdown, PowerModel};
use cran_core::stage1::{
    exhaustive_user_selection, greedy_user_selection, usc_select_users, AdmissionResult, Stage1Settings,
};
use cran_core::stage2::{rln_solve_with, EvalSettings, Evaluator, RlnSettings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Version of the JSONL record layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rln,
    #[value(name = "full_coop")]
    FullCoop,
    Successive,
    Greedy,
    Exhaustive,
    /// Stage-I user selection only.
    Usc,
    #[value(name = "greedy_users")]
    GreedyUsers,
    #[value(name = "exhaustive_users")]
    ExhaustiveUsers,
}

impl Method {
    pub fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::FullCoop => Some(BaselineMethod::FullCooperation),
            Method::Successive => Some(BaselineMethod::SuccessiveSelection),
            Method::Greedy => Some(BaselineMethod::GreedySearch),
            Method::Exhaustive => Some(BaselineMethod::ExhaustiveSearch),
            _ => None,
        }
    }

    pub fn admission(self) -> Option<AdmissionMethod> {
        match self {
            Method::Usc => Some(AdmissionMethod::Usc),
            Method::GreedyUsers => Some(AdmissionMethod::Greedy),
            Method::ExhaustiveUsers => Some(AdmissionMethod::Exhaustive),
            _ => None,
        }
    }

    /// Methods that select RRHs for the users admitted by USC.
    pub fn selects_rrhs(self) -> bool {
        self == Method::Rln || self.baseline().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionMethod {
    Usc,
    Greedy,
    Exhaustive,
}

pub fn admit(
    instance: &NetworkInstance,
    method: AdmissionMethod,
    settings: &Stage1Settings,
) -> Result<AdmissionResult> {
    match method {
        AdmissionMethod::Usc => usc_select_users(instance, settings),
        AdmissionMethod::Greedy => greedy_user_selection(instance, settings),
        AdmissionMethod::Exhaustive => exhaustive_user_selection(instance, settings),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RateMin,
    NumRrhs,
    TxAntennas,
    RxAntennas,
    Streams,
    CandidateSize,
}

impl SweepAxis {
    pub fn apply(self, config: &mut NetworkConfig, value: f64) -> Result<()> {
        if self == SweepAxis::RateMin {
            config.rate_min = value;
            return config.validate();
        }
        if !(value >= 0.0) || value.fract() != 0.0 {
            return Err(CoreError::Config(format!("{self:?} needs a nonnegative integer, got {value}")));
        }
        let n = value as usize;
        match self {
            SweepAxis::NumRrhs => config.num_rrhs = n,
            SweepAxis::TxAntennas => config.tx_antennas = n,
            SweepAxis::RxAntennas => config.rx_antennas = n,
            SweepAxis::Streams => config.streams = n,
            SweepAxis::CandidateSize => config.candidate_size = n,
            SweepAxis::RateMin => unreachable!(),
        }
        config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// RLN parameters exposed in experiment files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlnOptions {
    pub n_max: usize,
    pub delta: f64,
    pub theta_off: f64,
}

impl Default for RlnOptions {
    fn default() -> Self {
        let s = RlnSettings::default();
        Self { n_max: s.n_max, delta: s.delta, theta_off: s.theta_off }
    }
}

impl RlnOptions {
    pub fn settings(&self) -> RlnSettings {
        RlnSettings { n_max: self.n_max, delta: self.delta, theta_off: self.theta_off, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub config: NetworkConfig,
    pub power_model: PowerModel,
    pub sweep: Option<Sweep>,
    pub trials: usize,
    pub methods: Vec<Method>,
    /// Trial `t` uses instance seed `seed ^ t`.
    pub seed: u64,
    /// Skip trials where Stage I cannot admit every user.
    pub baseline_comparison: bool,
    pub rln: RlnOptions,
    /// Record wall-clock seconds (makes output nondeterministic).
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            config: NetworkConfig::default(),
            power_model: PowerModel::default(),
            sweep: None,
            trials: 20,
            methods: vec![Method::Rln],
            seed: 0,
            baseline_comparison: false,
            rln: RlnOptions::default(),
            record_timing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(CoreError::Config("trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(CoreError::Config("no methods requested".into()));
        }
        self.config.validate()?;
        self.power_model.validate(self.config.num_rrhs)?;
        if let Some(sw) = &self.sweep {
            for &v in &sw.values {
                let mut cfg = self.config.clone();
                sw.axis.apply(&mut cfg, v)?;
                self.power_model.validate(cfg.num_rrhs)?;
            }
        }
        Ok(())
    }

    /// Sweep values, or a single `None` without a sweep.
    pub fn values(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(sw) => sw.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        }
    }

    pub fn trial_config(&self, value: Option<f64>, trial: usize) -> Result<NetworkConfig> {
        let mut cfg = self.config.clone();
        if let (Some(sw), Some(v)) = (&self.sweep, value) {
            sw.axis.apply(&mut cfg, v)?;
        }
        cfg.rng_seed = trial_seed(self.seed, trial);
        Ok(cfg)
    }
}

pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base ^ trial as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Infeasible,
    NotConverged,
    /// Excluded by the baseline-comparison pre-filter.
    Skipped,
    Guard,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub trial: usize,
    pub seed: u64,
    pub sweep_value: Option<f64>,
    pub method: Method,
    pub status: RowStatus,
    pub message: Option<String>,
    pub admitted_users: Vec<usize>,
    pub num_admitted: usize,
    pub active_set: Vec<usize>,
    pub active_rrh_count: usize,
    pub npc: Option<NpcBreakdown>,
    pub rates: Vec<f64>,
    pub stage1_iterations: usize,
    /// RLN outer iterations, or active sets evaluated by a baseline.
    pub iterations: usize,
    /// WMMSE iterations of the reported power minimization.
    pub wmmse_iterations: usize,
    pub converged: bool,
    pub wall_clock: Option<f64>,
}

impl TrialRecord {
    fn new(trial: usize, seed: u64, sweep_value: Option<f64>, method: Method) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            trial,
            seed,
            sweep_value,
            method,
            status: RowStatus::Ok,
            message: None,
            admitted_users: Vec::new(),
            num_admitted: 0,
            active_set: Vec::new(),
            active_rrh_count: 0,
            npc: None,
            rates: Vec::new(),
            stage1_iterations: 0,
            iterations: 0,
            wmmse_iterations: 0,
            converged: true,
            wall_clock: None,
        }
    }

    fn fail(mut self, err: &CoreError) -> Self {
        self.status = match err {
            CoreError::Infeasible(_) => RowStatus::Infeasible,
            CoreError::NotConverged(_) => RowStatus::NotConverged,
            CoreError::Guard(_) => RowStatus::Guard,
            _ => RowStatus::Error,
        };
        self.message = Some(err.to_string());
        self.converged = false;
        self
    }

    fn admitted(mut self, adm: &AdmissionResult) -> Self {
        self.admitted_users = adm.admitted_users.clone();
        self.num_admitted = adm.admitted_users.len();
        self.stage1_iterations = adm.iterations;
        self
    }
}

/// Runs every method of `spec` on the instance of `(value, trial)`.
pub fn run_trial(spec: &ExperimentSpec, value: Option<f64>, trial: usize) -> Vec<TrialRecord> {
    let seed = trial_seed(spec.seed, trial);
    let blank = |m: Method| TrialRecord::new(trial, seed, value, m);
    let inst = match spec.trial_config(value, trial).and_then(|cfg| generate_instance(&cfg, &spec.power_model)) {
        Ok(i) => i,
        Err(e) => return spec.methods.iter().map(|&m| blank(m).fail(&e)).collect(),
    };
    let s1 = Stage1Settings::default();
    let needs_usc = spec.baseline_comparison || spec.methods.iter().any(|m| m.selects_rrhs() || *m == Method::Usc);
    let usc = if needs_usc {
        let start = Instant::now();
        Some(usc_select_users(&inst, &s1).map(|r| (r, start.elapsed().as_secs_f64())))
    } else {
        None
    };
    if spec.baseline_comparison {
        if let Some(Ok((r, _))) = &usc {
            if r.admitted_users.len() < inst.num_users() {
                return spec
                    .methods
                    .iter()
                    .map(|&m| {
                        let mut row = blank(m).admitted(r);
                        row.status = RowStatus::Skipped;
                        row.message = Some("Stage I cannot admit every user".into());
                        row
                    })
                    .collect();
            }
        }
    }
    let eval = match &usc {
        Some(Ok((r, _))) => Some(Evaluator::new(&inst, &r.admitted_users, EvalSettings::default())),
        _ => None,
    };
    let mut rows = Vec::with_capacity(spec.methods.len());
    for &m in &spec.methods {
        let start = Instant::now();
        let mut row = blank(m);
        if let Some(a) = m.admission() {
            row = match (a, &usc) {
                (AdmissionMethod::Usc, Some(Ok((r, _)))) => row.admitted(r),
                (AdmissionMethod::Usc, Some(Err(e))) => row.fail(e),
                _ => match admit(&inst, a, &s1) {
                    Ok(r) => row.admitted(&r),
                    Err(e) => row.fail(&e),
                },
            };
        } else {
            let (adm, eval) = match (&usc, &eval) {
                (Some(Ok((r, _))), Some(e)) => (r, e),
                (Some(Err(e)), _) => {
                    rows.push(row.fail(e));
                    continue;
                }
                _ => unreachable!("USC runs whenever an RRH method is requested"),
            };
            row = row.admitted(adm);
            row = match m {
                Method::Rln => match rln_solve_with(eval, &adm.precoders, &spec.rln.settings()) {
                    Ok(out) => {
                        row.active_set = out.active_set.iter().copied().collect();
                        row.active_rrh_count = out.active_set.len();
                        row.npc = Some(out.npc);
                        row.rates = out.rates;
                        row.iterations = out.state.iteration;
                        row.wmmse_iterations = out.final_wmmse_iterations;
                        row.converged = out.converged;
                        row
                    }
                    Err(e) => row.fail(&e),
                },
                _ => match run_baseline(m.baseline().expect("baseline method"), eval) {
                    Ok(rep) => {
                        row.active_set = rep.active_set.iter().copied().collect();
                        row.active_rrh_count = rep.active_set.len();
                        row.npc = Some(rep.npc);
                        row.rates = rep.rates;
                        row.iterations = rep.feasibility_checks;
                        row.converged = rep.converged;
                        row
                    }
                    Err(e) => row.fail(&e),
                },
            };
        }
        if spec.record_timing {
            let usc_time = match (&usc, m.selects_rrhs() || m == Method::Usc) {
                (Some(Ok((_, t))), true) => *t,
                _ => 0.0,
            };
            row.wall_clock = Some(start.elapsed().as_secs_f64() + usc_time);
        }
        rows.push(row);
    }
    rows
}

/// Every (sweep value, trial) pair, run in parallel; rows come back ordered
/// by sweep value, trial, then the method order of the spec.
pub fn sweep(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let values = spec.values();
    let jobs: Vec<(usize, Option<f64>, usize)> =
        values.iter().enumerate().flat_map(|(vi, &v)| (0..spec.trials).map(move |t| (vi, v, t))).collect();
    let mut out: Vec<((usize, usize), Vec<TrialRecord>)> =
        jobs.par_iter().map(|&(vi, v, t)| ((vi, t), run_trial(spec, v, t))).collect();
    out.sort_by_key(|(key, _)| *key);
    Ok(out.into_iter().flat_map(|(_, rows)| rows).collect())
}

/// One CSV line: aggregates over the `ok` rows of a (sweep value, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: Option<f64>,
    pub method: Method,
    pub rows: usize,
    pub ok: usize,
    pub skipped: usize,
    pub failed: usize,
    pub not_converged: usize,
    pub admitted_mean: f64,
    pub admitted_stderr: f64,
    pub active_rrh_mean: Option<f64>,
    pub active_rrh_stderr: Option<f64>,
    pub npc_mean: Option<f64>,
    pub npc_stderr: Option<f64>,
    pub transmit_power_mean: Option<f64>,
    pub transmit_power_stderr: Option<f64>,
}

/// `(mean, standard error)`; the error is 0 for a single sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<(Option<u64>, Method)> = Vec::new();
    let mut groups: BTreeMap<(Option<u64>, Method), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.sweep_value.map(f64::to_bits), r.method);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rows = &groups[&key];
            let ok: Vec<&&TrialRecord> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
            let stat = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> (Option<f64>, Option<f64>) {
                let xs: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if xs.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_stderr(&xs);
                    (Some(m), Some(s))
                }
            };
            let (adm_m, adm_s) = stat(&|r| Some(r.num_admitted as f64));
            let (act_m, act_s) = stat(&|r| r.npc.as_ref().map(|_| r.active_rrh_count as f64));
            let (npc_m, npc_s) = stat(&|r| r.npc.as_ref().map(|n| n.full_npc));
            let (tx_m, tx_s) = stat(&|r| r.npc.as_ref().map(|n| n.transmit_power_total));
            SummaryRow {
                sweep_value: key.0.map(f64::from_bits),
                method: key.1,
                rows: rows.len(),
                ok: ok.len(),
                skipped: rows.iter().filter(|r| r.status == RowStatus::Skipped).count(),
                failed: rows.iter().filter(|r| !matches!(r.status, RowStatus::Ok | RowStatus::Skipped)).count(),
                not_converged: ok.iter().filter(|r| !r.converged).count(),
                admitted_mean: adm_m.unwrap_or(f64::NAN),
                admitted_stderr: adm_s.unwrap_or(f64::NAN),
                active_rrh_mean: act_m,
                active_rrh_stderr: act_s,
                npc_mean: npc_m,
                npc_stderr: npc_s,
                transmit_power_mean: tx_m,
                transmit_power_stderr: tx_s,
            }
        })
        .collect()
}

pub fn write_jsonl<W: Write, T: Serialize>(out: &mut W, rows: &[T]) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(out: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
