//! RRH-selection comparison methods. All of them score active sets through a
//! shared [`Evaluator`], so their NPC figures are directly comparable with
//! each other and with the RLN pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::network::NpcBreakdown;
use crate::precoder::PrecoderSet;
use crate::stage2::{Evaluation, Evaluator};

/// Largest RRH count accepted by the exhaustive search.
pub const EXHAUSTIVE_RRH_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    ExhaustiveSearch,
    SuccessiveSelection,
    GreedySearch,
    FullCooperation,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 4] = [
        BaselineMethod::ExhaustiveSearch,
        BaselineMethod::SuccessiveSelection,
        BaselineMethod::GreedySearch,
        BaselineMethod::FullCooperation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::ExhaustiveSearch => "exhaustive",
            BaselineMethod::SuccessiveSelection => "successive",
            BaselineMethod::GreedySearch => "greedy",
            BaselineMethod::FullCooperation => "full_coop",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineMethod {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        BaselineMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown baseline method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub method: BaselineMethod,
    pub active_set: BTreeSet<usize>,
    pub precoders: PrecoderSet,
    pub rates: Vec<f64>,
    pub npc: NpcBreakdown,
    /// Active sets evaluated by this method (each one a feasibility check
    /// plus a power minimization).
    pub feasibility_checks: usize,
    pub wall_clock: f64,
    pub converged: bool,
}

impl BaselineReport {
    fn new(method: BaselineMethod, e: &Evaluation, checks: usize, start: Instant) -> Self {
        Self {
            method,
            active_set: e.active.clone(),
            precoders: e.precoders.clone(),
            rates: e.rates.clone(),
            npc: e.npc.clone(),
            feasibility_checks: checks,
            wall_clock: start.elapsed().as_secs_f64(),
            converged: e.converged,
        }
    }
}

pub fn run_baseline(method: BaselineMethod, eval: &Evaluator) -> Result<BaselineReport> {
    match method {
        BaselineMethod::ExhaustiveSearch => exhaustive_rrh_search(eval),
        BaselineMethod::SuccessiveSelection => successive_selection(eval),
        BaselineMethod::GreedySearch => greedy_rrh_selection(eval),
        BaselineMethod::FullCooperation => full_cooperation(eval),
    }
}

fn evaluate_full(eval: &Evaluator) -> Result<Arc<Evaluation>> {
    eval.evaluate(&eval.full_set())?
        .ok_or_else(|| CoreError::Infeasible("full cooperation cannot serve every user".into()))
}

/// Every candidate RRH of every user switched on.
pub fn full_cooperation(eval: &Evaluator) -> Result<BaselineReport> {
    let start = Instant::now();
    let e = evaluate_full(eval)?;
    Ok(BaselineReport::new(BaselineMethod::FullCooperation, &e, 1, start))
}

/// Switches off the lowest-power active RRH until the next removal is
/// infeasible; returns the last feasible configuration.
pub fn successive_selection(eval: &Evaluator) -> Result<BaselineReport> {
    let start = Instant::now();
    let mut current = evaluate_full(eval)?;
    let mut checks = 1;
    while current.active.len() > 1 {
        let p = &current.precoders;
        let weakest = current
            .active
            .iter()
            .copied()
            .min_by(|&a, &b| p.transmit_power(a).total_cmp(&p.transmit_power(b)).then(a.cmp(&b)))
            .expect("nonempty active set");
        let mut next = current.active.clone();
        next.remove(&weakest);
        checks += 1;
        match eval.evaluate(&next)? {
            Some(e) => current = e,
            None => break,
        }
    }
    Ok(BaselineReport::new(BaselineMethod::SuccessiveSelection, &current, checks, start))
}

/// Smaller NPC wins; ties go to the smaller set, then the lexicographically
/// smaller one.
fn better(a: &Evaluation, b: &Evaluation) -> bool {
    let (x, y) = (a.npc.full_npc, b.npc.full_npc);
    x < y || (x == y && (a.active.len(), &a.active) < (b.active.len(), &b.active))
}

/// Each round switches off the RRH whose removal leaves the smallest NPC,
/// until no removal is feasible. Returns the best configuration on the path.
pub fn greedy_rrh_selection(eval: &Evaluator) -> Result<BaselineReport> {
    let start = Instant::now();
    let mut current = evaluate_full(eval)?;
    let mut best = current.clone();
    let mut checks = 1;
    loop {
        let trials: Vec<BTreeSet<usize>> = current
            .active
            .iter()
            .map(|&i| current.active.iter().copied().filter(|&j| j != i).collect())
            .filter(|s: &BTreeSet<usize>| !s.is_empty())
            .collect();
        checks += trials.len();
        let results: Vec<Result<Option<Arc<Evaluation>>>> = trials.par_iter().map(|s| eval.evaluate(s)).collect();
        let mut round: Option<Arc<Evaluation>> = None;
        for r in results {
            if let Some(e) = r? {
                if round.as_ref().is_none_or(|b| better(&e, b)) {
                    round = Some(e);
                }
            }
        }
        match round {
            Some(e) => {
                if better(&e, &best) {
                    best = e.clone();
                }
                current = e;
            }
            None => break,
        }
    }
    Ok(BaselineReport::new(BaselineMethod::GreedySearch, &best, checks, start))
}

/// Minimum-NPC active set over every subset of the candidate RRHs that leaves
/// each user at least one candidate.
pub fn exhaustive_rrh_search(eval: &Evaluator) -> Result<BaselineReport> {
    let start = Instant::now();
    let inst = eval.instance;
    if inst.num_rrhs() > EXHAUSTIVE_RRH_LIMIT {
        return Err(CoreError::Guard(format!(
            "exhaustive RRH search needs I <= {EXHAUSTIVE_RRH_LIMIT}, got {}",
            inst.num_rrhs()
        )));
    }
    let pool: Vec<usize> = eval.full_set().into_iter().collect();
    let covers = |s: &BTreeSet<usize>| eval.users.iter().all(|&k| inst.candidate_rrhs[k].iter().any(|i| s.contains(i)));
    let subsets: Vec<BTreeSet<usize>> = (usize::from(!eval.users.is_empty())..=pool.len())
        .flat_map(|size| pool.iter().copied().combinations(size))
        .map(|c| c.into_iter().collect::<BTreeSet<usize>>())
        .filter(|s| covers(s))
        .collect();
    let results: Vec<Result<Option<Arc<Evaluation>>>> = subsets.par_iter().map(|s| eval.evaluate(s)).collect();
    let mut best: Option<Arc<Evaluation>> = None;
    for r in results {
        if let Some(e) = r? {
            if best.as_ref().is_none_or(|b| better(&e, b)) {
                best = Some(e);
            }
        }
    }
    let best = best.ok_or_else(|| CoreError::Infeasible("no candidate RRH set serves every user".into()))?;
    Ok(BaselineReport::new(BaselineMethod::ExhaustiveSearch, &best, subsets.len(), start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in BaselineMethod::ALL {
            assert_eq!(m.name().parse::<BaselineMethod>().unwrap(), m);
        }
        assert!("optimal".parse::<BaselineMethod>().is_err());
    }
}
