//! Single-trial training: optimizer, early stopping, and the trial record.
//!
//! Wall time is a deterministic cost model — accumulated floating-point
//! work divided by a fixed rate — not a measured clock. Measured timings
//! vary across machines and thread counts, which would break the
//! requirement that identical plans produce bit-identical records.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::TrialContext;
use crate::error::{Error, Result};
use crate::hyperspace::ParamConfig;
use crate::model::{
    build_model, draw_masks, estimate_memory, evaluate, hparams_from_config, loss_and_grads,
    HParams, ModelVariant, WindowMasks,
};
use crate::seed::{rng_from, DOMAIN_EPOCH, DOMAIN_MODEL_INIT};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Work units (floating-point operations) per modeled millisecond.
pub const WORK_PER_MS: u128 = 50_000;

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
        }
    }
}

/// Stops training after `patience` consecutive epochs without strict
/// improvement of the validation loss.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    bad: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, bad: 0 }
    }

    /// Feed one epoch's validation loss; returns true when training should
    /// stop after this epoch.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad = 0;
            false
        } else {
            self.bad += 1;
            self.bad >= self.patience
        }
    }
}

/// Learning rate at 1-based epoch `e`: halves every epoch.
pub fn scheduled_lr(base: f64, epoch: usize) -> f64 {
    base * 0.5f64.powi(epoch as i32 - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    FailedOom,
    FailedNumerical,
    /// Present in the vocabulary for externally-annotated records; the
    /// pipeline itself never produces it.
    PrunedUnexecuted,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Completed => "completed",
            TrialStatus::FailedOom => "failed_oom",
            TrialStatus::FailedNumerical => "failed_numerical",
            TrialStatus::PrunedUnexecuted => "pruned_unexecuted",
        }
    }
}

impl std::fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One training epoch's summary. `epoch` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_used: f64,
}

/// Outcome of one trial. Field order here is the on-disk field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub params: ParamConfig,
    pub status: TrialStatus,
    pub epochs: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mae: Option<f64>,
    pub wall_ms: u64,
    pub mem_bytes: u64,
    pub seed: u64,
}

impl TrialRecord {
    /// Objective the searcher minimizes: validation MSE, present only for
    /// completed trials.
    pub fn objective(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Completed => self.val_mse,
            _ => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == TrialStatus::Completed
    }

    /// Structural invariants: completed records carry finite metrics,
    /// failed records carry none.
    pub fn validate(&self) -> Result<()> {
        let metrics = [self.val_mse, self.val_mae, self.test_mse, self.test_mae];
        match self.status {
            TrialStatus::Completed => {
                if metrics.iter().any(|m| !m.is_some_and(f64::is_finite)) {
                    return Err(Error::Consistency(format!(
                        "completed trial {} lacks finite metrics",
                        self.trial_id
                    )));
                }
            }
            _ => {
                if metrics.iter().any(Option::is_some) {
                    return Err(Error::Consistency(format!(
                        "failed trial {} carries metrics",
                        self.trial_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Map a trial-level fault to its record status. Faults outside this set
/// (I/O, malformed inputs) are experiment-level and propagate.
pub fn classify_failure(e: &Error) -> Option<TrialStatus> {
    match e {
        Error::MemoryGate { .. } => Some(TrialStatus::FailedOom),
        Error::NonFiniteLoss(_) => Some(TrialStatus::FailedNumerical),
        _ => None,
    }
}

/// Forward-pass work for one window, counted as matrix-multiply operations
/// (2·m·n·k per product). Backward passes are charged at twice forward.
fn window_flops(variant: ModelVariant, hp: &HParams, d: &crate::data::TaskDims) -> u128 {
    let seq = d.seq_len as u128;
    let pred = d.pred_len as u128;
    let c_in = d.c_in as u128;
    let c_out = d.c_out as u128;
    let dm = hp.d_model as u128;
    let dff = hp.d_ff as u128;
    let e = hp.e_layers as u128;
    let head = 2 * (hp.d_layers as u128 - 1) * dm * dm + 2 * pred * c_out * dm;
    match variant {
        ModelVariant::Linear => 2 * pred * seq * c_out,
        ModelVariant::Mixer => {
            2 * seq * dm * c_in + e * (2 * seq * seq * dm + 4 * seq * dm * dff) + head
        }
        ModelVariant::AttentionLite => {
            let lk = seq.div_ceil(hp.factor as u128);
            2 * seq * dm * c_in
                + e * (4 * seq * dm * dm + 4 * lk * dm * dm + 4 * seq * lk * dm + 4 * seq * dm * dff)
                + head
        }
    }
}

fn failure_record(
    trial_id: u64,
    cfg: &ParamConfig,
    status: TrialStatus,
    epochs: Vec<EpochRecord>,
    flops: u128,
    mem_bytes: u64,
    seed: u64,
) -> TrialRecord {
    TrialRecord {
        trial_id,
        params: cfg.clone(),
        status,
        epochs,
        val_mse: None,
        val_mae: None,
        test_mse: None,
        test_mae: None,
        wall_ms: (flops / WORK_PER_MS) as u64,
        mem_bytes,
        seed,
    }
}

/// Train one configuration end to end and produce its record.
///
/// The memory gate runs before any training, so a configuration that
/// duplicates an earlier over-budget one fails fast the same way. Epochs
/// run mini-batch Adam with the halving learning-rate schedule; batch
/// order reshuffles per epoch from the trial seed; validation is evaluated
/// after every epoch with strict-improvement early stopping; test metrics
/// come from the parameters of the best validation epoch.
pub fn train_trial(
    variant: ModelVariant,
    cfg: &ParamConfig,
    ctx: &TrialContext,
    budget_bytes: u64,
    trial_id: u64,
    seed: u64,
) -> Result<TrialRecord> {
    let hp = hparams_from_config(cfg)?;
    let mem_bytes = estimate_memory(variant, &hp, &ctx.dims);
    if mem_bytes > budget_bytes {
        let gate = Error::MemoryGate { needed: mem_bytes, budget: budget_bytes };
        let status = classify_failure(&gate).expect("gate fault maps to a status");
        return Ok(failure_record(trial_id, cfg, status, Vec::new(), 0, mem_bytes, seed));
    }

    let mut model = build_model(
        variant,
        &hp,
        &ctx.dims,
        crate::seed::derive_seed(seed, DOMAIN_MODEL_INIT, 0),
    )?;
    let mut adam = AdamState::new(model.param_count());
    let mut stopper = EarlyStopper::new(ctx.task.patience);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut flops: u128 = 0;
    let per_window = window_flops(variant, &hp, &ctx.dims);
    let n_train = ctx.train.len();
    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (val_mse, val_mae, params)

    'epochs: for e in 1..=hp.train_epochs {
        let lr = scheduled_lr(hp.learning_rate, e);
        let mut rng = rng_from(seed, DOMAIN_EPOCH, e as u64);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        let mut sse_sum = 0.0;
        for batch in order.chunks(hp.batch_size.max(1)) {
            let inputs: Vec<_> = batch.iter().map(|&w| ctx.train.input(w)).collect();
            let targets: Vec<_> = batch.iter().map(|&w| ctx.train.target(w)).collect();
            // masks are drawn sequentially here so the parallel gradient
            // pass consumes no randomness
            let masks: Vec<WindowMasks> =
                batch.iter().map(|_| draw_masks(&model, &mut rng)).collect();
            match loss_and_grads(&model, &inputs, &targets, Some(&masks)) {
                Ok((batch_loss, grads)) => {
                    adam.step(&mut model.params, &grads, lr);
                    sse_sum += batch_loss * batch.len() as f64;
                    flops += 3 * per_window * batch.len() as u128;
                }
                Err(fault) => match classify_failure(&fault) {
                    Some(status) => {
                        return Ok(failure_record(
                            trial_id, cfg, status, epochs, flops, mem_bytes, seed,
                        ))
                    }
                    None => return Err(fault),
                },
            }
        }
        let train_loss = sse_sum / n_train as f64;
        let (val_mse, val_mae) = evaluate(&model, &ctx.val)?;
        flops += per_window * ctx.val.len() as u128;
        if !train_loss.is_finite() || !val_mse.is_finite() || !val_mae.is_finite() {
            return Ok(failure_record(
                trial_id,
                cfg,
                TrialStatus::FailedNumerical,
                epochs,
                flops,
                mem_bytes,
                seed,
            ));
        }
        epochs.push(EpochRecord { epoch: e, train_loss, val_loss: val_mse, lr_used: lr });
        if best.as_ref().is_none_or(|(b, _, _)| val_mse < *b) {
            best = Some((val_mse, val_mae, model.params.clone()));
        }
        if stopper.observe(val_mse) {
            break 'epochs;
        }
    }

    let (val_mse, val_mae, best_params) = best.expect("train_epochs >= 1 yields an epoch");
    model.params = best_params;
    let (test_mse, test_mae) = evaluate(&model, &ctx.test)?;
    flops += per_window * ctx.test.len() as u128;
    if !test_mse.is_finite() || !test_mae.is_finite() {
        return Ok(failure_record(
            trial_id,
            cfg,
            TrialStatus::FailedNumerical,
            epochs,
            flops,
            mem_bytes,
            seed,
        ));
    }
    Ok(TrialRecord {
        trial_id,
        params: cfg.clone(),
        status: TrialStatus::Completed,
        epochs,
        val_mse: Some(val_mse),
        val_mae: Some(val_mae),
        test_mse: Some(test_mse),
        test_mae: Some(test_mae),
        wall_ms: (flops / WORK_PER_MS) as u64,
        mem_bytes,
        seed,
    })
}
