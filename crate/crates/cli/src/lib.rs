//! Experiment harness for the two-stage C-RAN power minimization solvers:
//! seeded Monte Carlo sweeps, JSON/CSV output and invariant checks.

pub mod harness;
pub mod verify;

use std::collections::BTreeMap;

use cran_core::baselines::BaselineReport;
use cran_core::network::{NetworkInstance, NpcBreakdown};
use cran_core::precoder::PrecoderRecord;
use cran_core::stage1::AdmissionResult;
use cran_core::stage2::{rrh_powers, RlnOutcome, RlnState};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Stage1Report {
    pub admitted_users: Vec<usize>,
    pub removal_order: Vec<usize>,
    pub alphas: BTreeMap<usize, f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub polished: bool,
    pub precoders: Vec<PrecoderRecord>,
}

impl From<&AdmissionResult> for Stage1Report {
    fn from(r: &AdmissionResult) -> Self {
        Self {
            admitted_users: r.admitted_users.clone(),
            removal_order: r.removal_order.clone(),
            alphas: r.alphas.clone(),
            objective_trace: r.objective_trace.clone(),
            iterations: r.iterations,
            polished: r.polished,
            precoders: r.precoders.to_records(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub admitted_users: Vec<usize>,
    pub active_set: Vec<usize>,
    pub extracted_set: Vec<usize>,
    pub fallback_used: bool,
    pub converged: bool,
    pub npc: NpcBreakdown,
    /// Transmit power of every RRH, indexed by RRH id.
    pub rrh_powers: Vec<f64>,
    pub rates: Vec<f64>,
    pub rln: RlnState,
    pub final_wmmse_iterations: usize,
    pub precoders: Vec<PrecoderRecord>,
}

impl SolveReport {
    pub fn new(instance: &NetworkInstance, admitted_users: &[usize], out: &RlnOutcome) -> Self {
        Self {
            admitted_users: admitted_users.to_vec(),
            active_set: out.active_set.iter().copied().collect(),
            extracted_set: out.extracted_set.iter().copied().collect(),
            fallback_used: out.fallback_used,
            converged: out.converged,
            npc: out.npc.clone(),
            rrh_powers: rrh_powers(instance, &out.precoders),
            rates: out.rates.clone(),
            rln: out.state.clone(),
            final_wmmse_iterations: out.final_wmmse_iterations,
            precoders: out.precoders.to_records(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineOutput {
    pub method: String,
    pub admitted_users: Vec<usize>,
    pub active_set: Vec<usize>,
    pub converged: bool,
    pub npc: NpcBreakdown,
    pub rates: Vec<f64>,
    pub feasibility_checks: usize,
    pub precoders: Vec<PrecoderRecord>,
}

impl BaselineOutput {
    pub fn new(admitted_users: &[usize], r: &BaselineReport) -> Self {
        Self {
            method: r.method.name().to_string(),
            admitted_users: admitted_users.to_vec(),
            active_set: r.active_set.iter().copied().collect(),
            converged: r.converged,
            npc: r.npc.clone(),
            rates: r.rates.clone(),
            feasibility_checks: r.feasibility_checks,
            precoders: r.precoders.to_records(),
        }
    }
}
