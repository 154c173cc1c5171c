//! Two-stage training and final modem aggregation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use uwamod_core::dataset::{mean_matrix, DatasetPair};
use uwamod_core::modem::{normalize_modem, Modem};
use uwamod_core::{spawn_stream, Error, Result, SystemConfig};

use crate::adam::{adam_step, AdamState};
use crate::loss::{stage1_loss, stage2_loss, validation_metrics, BatchLoss, LossContext, ValidationMetrics};
use crate::model::{NetworkOutput, NetworkParams};

const EVAL_CHUNK: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub e1: usize,
    pub e2: usize,
    pub batch_size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl TrainingPlan {
    pub fn desk() -> Self {
        Self { e1: 50, e2: 50, batch_size: 20, train: 500, val: 100, test: 200 }
    }

    pub fn paper() -> Self {
        Self { e1: 400, e2: 400, batch_size: 100, train: 15_000, val: 5_000, test: 10_000 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!("batch size {} must be even and >= 2", self.batch_size)));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(&self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// One epoch's training means and validation metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_loss1: f64,
    pub train_spread: f64,
    pub val_loss1: f64,
    pub val_spread: f64,
    pub val_loss2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn extend(&mut self, other: History) {
        self.records.extend(other.records);
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    /// Validation metrics of the parameters the stage started from.
    pub entry: ValidationMetrics,
    pub history: History,
    pub adam: AdamState,
    pub best_epoch: Option<usize>,
}

/// Stacks the channel images of a set of pairs into `[B, 2, M', M]`.
pub fn stack_images(pairs: &[&DatasetPair]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in pairs {
        out.extend(p.h_image());
    }
    out
}

fn check_pairs(params: &NetworkParams, pairs: &[DatasetPair], what: &str) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Invalid(format!("{what} set is empty")));
    }
    let d = params.dims;
    for p in pairs {
        if p.h.rows() != d.m_prime || p.h.cols() != d.m || p.h_e_ofdm.size() != d.n {
            return Err(Error::Shape(format!(
                "{what} pair has H {}x{} and H_e {}, network expects {}x{} and {}",
                p.h.rows(),
                p.h.cols(),
                p.h_e_ofdm.size(),
                d.m_prime,
                d.m,
                d.n
            )));
        }
    }
    Ok(())
}

/// Eval-mode outputs for every pair.
pub fn infer_pairs(params: &NetworkParams, pairs: &[DatasetPair]) -> Result<NetworkOutput> {
    let refs: Vec<&DatasetPair> = pairs.iter().collect();
    params.infer(&stack_images(&refs), pairs.len(), EVAL_CHUNK)
}

pub fn validate(params: &NetworkParams, ctx: &LossContext, val: &[DatasetPair]) -> Result<ValidationMetrics> {
    let out = infer_pairs(params, val)?;
    let refs: Vec<&DatasetPair> = val.iter().collect();
    validation_metrics(ctx, &out, &refs)
}

type LossFn = fn(&LossContext, &NetworkOutput, &[&DatasetPair]) -> Result<BatchLoss>;

fn run_stage(
    stage: Stage,
    params: &mut NetworkParams,
    train: &[DatasetPair],
    val: &[DatasetPair],
    plan: &TrainingPlan,
    config: &SystemConfig,
) -> Result<StageOutcome> {
    plan.validate()?;
    check_pairs(params, train, "training")?;
    check_pairs(params, val, "validation")?;
    let ctx = LossContext::new(config)?;
    let (epochs, loss_fn, label): (usize, LossFn, &str) = match stage {
        Stage::One => (plan.e1, stage1_loss, "stage1"),
        Stage::Two => (plan.e2, stage2_loss, "stage2"),
    };
    let mut adam = AdamState::new(&params.learnable);
    let mut history = History::default();
    let mut shuffle = spawn_stream(config.seed, &format!("{label}/shuffle"));
    let batch = plan.batch_size.min(train.len() - train.len() % 2).max(2);
    if train.len() < batch {
        return Err(Error::Invalid(format!("need at least {batch} training pairs")));
    }
    let steps = train.len() / batch;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    let entry = validate(params, &ctx, val)?;

    for epoch in 1..=epochs {
        order.shuffle(&mut shuffle);
        let (mut sum_loss, mut sum_perf, mut sum_spread) = (0.0, 0.0, 0.0);
        for step in 0..steps {
            let pairs: Vec<&DatasetPair> = order[step * batch..(step + 1) * batch].iter().map(|&i| &train[i]).collect();
            let images = stack_images(&pairs);
            let (out, record) = params.forward_train(&images, batch)?;
            let loss = loss_fn(&ctx, &out, &pairs)?;
            let grads = params.backward(&record, &loss.grad_phi, &loss.grad_psi)?;
            adam_step(&mut params.learnable, &grads, &mut adam)?;
            sum_loss += loss.value;
            sum_perf += loss.perf;
            sum_spread += loss.spread;
        }
        let v = validate(params, &ctx, val)?;
        let s = steps as f64;
        history.records.push(EpochRecord {
            stage,
            epoch,
            train_loss: sum_loss / s,
            train_loss1: sum_perf / s,
            train_spread: sum_spread / s,
            val_loss1: v.loss1,
            val_spread: v.spread,
            val_loss2: v.loss2,
        });
        let score = match stage {
            Stage::One => v.loss1,
            Stage::Two => v.loss2,
        };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, epoch, params.clone()));
        }
    }
    let best_epoch = best.map(|(_, epoch, p)| {
        *params = p;
        epoch
    });
    Ok(StageOutcome { entry, history, adam, best_epoch })
}

/// Stage I: mini-batch Adam on batch-mean `loss1`; the best epoch by
/// validation `loss1` is kept.
pub fn train_stage1(
    params: &mut NetworkParams,
    train: &[DatasetPair],
    val: &[DatasetPair],
    plan: &TrainingPlan,
    config: &SystemConfig,
) -> Result<StageOutcome> {
    run_stage(Stage::One, params, train, val, plan, config)
}

/// Stage II: each batch is split into halves paired elementwise; the loss
/// trades `loss1` against output spread. The best epoch by validation
/// `loss2` is kept.
pub fn train_stage2(
    params: &mut NetworkParams,
    train: &[DatasetPair],
    val: &[DatasetPair],
    plan: &TrainingPlan,
    config: &SystemConfig,
) -> Result<StageOutcome> {
    run_stage(Stage::Two, params, train, val, plan, config)
}

/// Averages eval-mode outputs over the validation set, then renormalizes.
pub fn finalize_modem(params: &NetworkParams, val: &[DatasetPair]) -> Result<Modem> {
    check_pairs(params, val, "validation")?;
    aggregate_outputs(&infer_pairs(params, val)?)
}

/// Averages already-normalized modem outputs and renormalizes.
pub fn aggregate_outputs(out: &NetworkOutput) -> Result<Modem> {
    let phi = mean_matrix(&out.phis).ok_or_else(|| Error::Invalid("no outputs".into()))?;
    let psi = mean_matrix(&out.psis).ok_or_else(|| Error::Invalid("no outputs".into()))?;
    normalize_modem(phi, psi)
}
