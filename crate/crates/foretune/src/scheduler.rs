//! Experiment orchestration: suggest → dispatch → train → commit.
//!
//! The coordinator owns the searcher and the store. Trials dispatch in
//! batches up to `max_concurrent`; every suggestion in a batch is drawn
//! against committed history only (in-flight trials are invisible to the
//! searcher), the batch trains in parallel, and results commit in dispatch
//! order — append to the store first, then feed the searcher. That ordering
//! makes the record sequence reproducible at any concurrency level and
//! leaves the store as an audit log: no suggestion ever depended on a trial
//! that is not already on disk above it.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::data::TrialContext;
use crate::error::{Error, Result};
use crate::exec;
use crate::hyperspace::SearchSpace;
use crate::model::ModelVariant;
use crate::searchers::{Observation, Searcher, SearcherKind, TpeKnobs};
use crate::seed::{derive_seed, rng_from, DOMAIN_SUGGEST, DOMAIN_TRAIN};
use crate::store::{plan_digest, Manifest, PlanRecord, TrialStore};
use crate::train::{train_trial, TrialRecord, TrialStatus};

/// Everything a run needs. The live search space stays typed here; its text
/// form goes into the manifest.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub variant: ModelVariant,
    pub dataset: String,
    pub dataset_digest: String,
    pub space: SearchSpace,
    pub searcher: SearcherKind,
    pub knobs: TpeKnobs,
    pub n_trials: u64,
    pub max_concurrent: usize,
    pub mem_budget: u64,
    pub master_seed: u64,
    pub task: crate::data::TaskParams,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
        }
        if self.max_concurrent == 0 {
            return Err(Error::InvalidConfig("max_concurrent must be at least 1".into()));
        }
        if self.mem_budget == 0 {
            return Err(Error::InvalidConfig("mem_budget must be positive".into()));
        }
        self.knobs.validate()?;
        Ok(())
    }

    pub fn to_plan_record(&self) -> PlanRecord {
        PlanRecord {
            variant: self.variant,
            dataset: self.dataset.clone(),
            dataset_digest: self.dataset_digest.clone(),
            searcher: self.searcher,
            knobs: self.knobs,
            n_trials: self.n_trials,
            max_concurrent: self.max_concurrent,
            mem_budget: self.mem_budget,
            master_seed: self.master_seed,
            task: self.task.clone(),
            space_text: self.space.to_text(),
        }
    }

    /// Rebuild a runnable plan from a stored manifest.
    pub fn from_manifest(m: &Manifest) -> Result<ExperimentPlan> {
        let p = &m.plan;
        let plan = ExperimentPlan {
            variant: p.variant,
            dataset: p.dataset.clone(),
            dataset_digest: p.dataset_digest.clone(),
            space: SearchSpace::from_text(&p.space_text)?,
            searcher: p.searcher,
            knobs: p.knobs,
            n_trials: p.n_trials,
            max_concurrent: p.max_concurrent,
            mem_budget: p.mem_budget,
            master_seed: p.master_seed,
            task: p.task.clone(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn digest(&self) -> String {
        plan_digest(&self.to_plan_record())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    /// Capacity and budget remain: hand out the next trial.
    Dispatch,
    /// At capacity (or out of budget) with trials still in flight.
    Wait,
    /// Every dispatched trial is committed and no budget remains.
    Done,
}

/// Dispatch/commit bookkeeping. Trial ids are dense: the next id is always
/// `already-committed + in-flight`.
#[derive(Clone, Debug)]
pub struct SchedulerState {
    n_trials: u64,
    max_concurrent: usize,
    next_id: u64,
    committed: u64,
    exhausted: bool,
    in_flight: BTreeSet<u64>,
}

impl SchedulerState {
    pub fn new(n_trials: u64, max_concurrent: usize, already_committed: u64) -> Self {
        SchedulerState {
            n_trials,
            max_concurrent,
            next_id: already_committed,
            committed: already_committed,
            exhausted: false,
            in_flight: BTreeSet::new(),
        }
    }

    pub fn next_action(&self) -> Action {
        if !self.exhausted
            && self.next_id < self.n_trials
            && self.in_flight.len() < self.max_concurrent
        {
            Action::Dispatch
        } else if self.in_flight.is_empty() {
            Action::Done
        } else {
            Action::Wait
        }
    }

    /// Reserve and return the next trial id.
    pub fn dispatch(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.in_flight.insert(id);
        id
    }

    /// The searcher cannot produce further suggestions (grid ran out).
    pub fn mark_exhausted(&mut self) {
        self.exhausted = true;
    }

    pub fn commit(&mut self, trial_id: u64) -> Result<()> {
        if !self.in_flight.remove(&trial_id) {
            return Err(Error::Consistency(format!(
                "commit of trial {trial_id} which is not in flight"
            )));
        }
        self.committed += 1;
        Ok(())
    }

    pub fn committed(&self) -> u64 {
        self.committed
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Totals {
    pub completed: u64,
    pub failed_oom: u64,
    pub failed_numerical: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub plan_digest: String,
    pub records: Vec<TrialRecord>,
    /// Trial with the lowest validation MSE among completed trials; ties go
    /// to the earlier trial.
    pub best: Option<u64>,
    pub totals: Totals,
}

impl ExperimentResult {
    pub fn summarize(plan_digest: String, records: Vec<TrialRecord>) -> Result<ExperimentResult> {
        let mut totals = Totals::default();
        let mut best: Option<(f64, u64)> = None;
        for r in &records {
            match r.status {
                TrialStatus::Completed => {
                    totals.completed += 1;
                    let v = r.val_mse.ok_or_else(|| {
                        Error::Consistency(format!("completed trial {} lacks val_mse", r.trial_id))
                    })?;
                    if best.is_none_or(|(b, _)| v < b) {
                        best = Some((v, r.trial_id));
                    }
                }
                TrialStatus::FailedOom => totals.failed_oom += 1,
                TrialStatus::FailedNumerical => totals.failed_numerical += 1,
                TrialStatus::PrunedUnexecuted => {
                    return Err(Error::Consistency(format!(
                        "trial {} is pruned_unexecuted, which this pipeline never schedules",
                        r.trial_id
                    )))
                }
            }
        }
        Ok(ExperimentResult {
            plan_digest,
            records,
            best: best.map(|(_, id)| id),
            totals,
        })
    }

    pub fn best_record(&self) -> Option<&TrialRecord> {
        self.best.and_then(|id| self.records.iter().find(|r| r.trial_id == id))
    }
}

/// Run a plan from scratch. The store must be freshly created for this
/// plan.
pub fn run_experiment(
    plan: &ExperimentPlan,
    ctx: &TrialContext,
    store: &mut TrialStore,
) -> Result<ExperimentResult> {
    run_resumable(plan, ctx, store, Vec::new(), None)
}

/// Run a plan, optionally seeded with committed prior records (resume) and
/// optionally halting after a number of fresh commits (interruption tests).
///
/// Resume replays the prior records into a fresh searcher in commit order;
/// because suggestions depend only on committed history and per-trial seed
/// streams, the continued run produces exactly the records an uninterrupted
/// run would have.
pub fn run_resumable(
    plan: &ExperimentPlan,
    ctx: &TrialContext,
    store: &mut TrialStore,
    prior: Vec<TrialRecord>,
    stop_after: Option<u64>,
) -> Result<ExperimentResult> {
    plan.validate()?;
    if store.manifest().plan_digest != plan.digest() {
        return Err(Error::Resume(
            "store manifest does not match the plan being run".into(),
        ));
    }
    let mut searcher = Searcher::new(plan.searcher, plan.knobs)?;
    for r in &prior {
        searcher
            .observe(&plan.space, Observation { config: r.params.clone(), objective: r.objective() })
            .map_err(|e| Error::Resume(format!("stored trial {} rejected: {e}", r.trial_id)))?;
    }
    let mut records = prior;
    let mut state = SchedulerState::new(plan.n_trials, plan.max_concurrent, records.len() as u64);
    let mut fresh = 0u64;

    'run: loop {
        // fill the dispatch window against committed history only
        let mut batch: Vec<(u64, crate::hyperspace::ParamConfig)> = Vec::new();
        while state.next_action() == Action::Dispatch {
            let trial_id = state.next_id;
            let mut rng = rng_from(plan.master_seed, DOMAIN_SUGGEST, trial_id);
            match searcher.suggest(&plan.space, &mut rng) {
                Ok(cfg) => {
                    batch.push((state.dispatch(), cfg));
                }
                Err(Error::GridExhausted(_)) => {
                    state.mark_exhausted();
                }
                Err(e) => return Err(e),
            }
        }
        if batch.is_empty() {
            break 'run;
        }
        let outcomes = exec::map_collect(&batch, |(trial_id, cfg)| {
            train_trial(
                plan.variant,
                cfg,
                ctx,
                plan.mem_budget,
                *trial_id,
                derive_seed(plan.master_seed, DOMAIN_TRAIN, *trial_id),
            )
        });
        // commit in dispatch order: durable append, then searcher history
        for outcome in outcomes {
            let record = outcome?;
            store.append_record(&record).map_err(|e| {
                let last = records
                    .last()
                    .map(|r| r.trial_id.to_string())
                    .unwrap_or_else(|| "none".into());
                Error::Store(format!("append failed (last durable trial id: {last}): {e}"))
            })?;
            searcher.observe(
                &plan.space,
                Observation { config: record.params.clone(), objective: record.objective() },
            )?;
            state.commit(record.trial_id)?;
            records.push(record);
            fresh += 1;
            if Some(fresh) == stop_after {
                break 'run;
            }
        }
    }
    ExperimentResult::summarize(plan.digest(), records)
}
