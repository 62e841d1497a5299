use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{loss_and_grad, LossKind};
use super::task::{Dataset, Sample, Target, TaskKind};
use crate::error::{FusionError, Result};
use crate::fusion::{fuse, fuse_backward_into, fuse_forward, init_params, FusionParams, FusionSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 500,
            patience: 10,
            loss: LossKind::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FusionError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(FusionError::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(FusionError::Config(
                "batch_size and max_epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    /// Seed of the per-epoch shuffling stream (init uses `seed` itself).
    pub fn shuffle_seed(&self) -> u64 {
        self.seed ^ 0x5DEE_CE66_D1CE_5EED
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub spec_summary: String,
    pub param_count: usize,
    pub epochs: Vec<EpochMetrics>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Full-pass training loss of the best checkpoint.
    pub final_train_loss: f64,
    pub test_metric: f64,
    pub seconds: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl RunRecord {
    /// Same record without the wall-clock field, for determinism checks.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Mean loss over `samples`.
fn mean_loss(
    spec: &FusionSpec,
    params: &FusionParams,
    samples: &[Sample],
    loss: LossKind,
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let y = fuse(spec, params, &s.x1, &s.x2)?;
        total += loss_and_grad(loss, &y, &s.target)?.0;
    }
    Ok(total / samples.len() as f64)
}

/// Accuracy for classification, negative mean per-output MSE for regression.
pub fn evaluate(
    spec: &FusionSpec,
    params: &FusionParams,
    samples: &[Sample],
    kind: TaskKind,
) -> Result<f64> {
    match kind {
        TaskKind::Regression => Ok(-mean_loss(spec, params, samples, LossKind::Mse)?),
        TaskKind::Classification => {
            let mut correct = 0usize;
            for s in samples {
                let y = fuse(spec, params, &s.x1, &s.x2)?;
                let pred = y
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                if s.target == Target::Class(pred) {
                    correct += 1;
                }
            }
            Ok(correct as f64 / samples.len() as f64)
        }
    }
}

/// Trains a freshly initialized student (`init_params(spec, config.seed)`).
pub fn train_model(spec: &FusionSpec, data: &Dataset, config: &TrainConfig) -> Result<RunRecord> {
    let params = init_params(spec, config.seed);
    train_from(spec, params, data, config).map(|(record, _)| record)
}

/// Mini-batch Adam from the given parameters with early stopping on the
/// validation metric. Returns the record and the best checkpoint.
pub fn train_from(
    spec: &FusionSpec,
    mut params: FusionParams,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(RunRecord, FusionParams)> {
    config.validate()?;
    spec.validate()?;
    if spec.input_dims != data.input_dims || spec.output_dim != data.output_dim {
        return Err(FusionError::Config(format!(
            "student maps {:?} -> {} but the data is {:?} -> {}",
            spec.input_dims, spec.output_dim, data.input_dims, data.output_dim
        )));
    }
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(FusionError::Config("empty data split".into()));
    }
    let started = Instant::now();
    let adam = config.adam();
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed());
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let mut epochs = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &s in batch {
                let sample = &data.train[s];
                let (y, tape) = fuse_forward(spec, &params, &sample.x1, &sample.x2)?;
                let (loss, mut dy) = loss_and_grad(config.loss, &y, &sample.target)?;
                batch_loss += loss;
                dy.iter_mut().for_each(|g| *g *= scale);
                fuse_backward_into(spec, &params, &tape, &dy, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(FusionError::NonFinite {
                    epoch,
                    batch: batch_idx + 1,
                });
            }
            epoch_loss += batch_loss;
            let mut flat = params.flatten();
            adam_step(&mut flat, &grads.flatten(), &mut state, &adam);
            params.load_flat(&flat)?;
        }
        let val_metric = evaluate(spec, &params, &data.val, data.kind)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / data.train.len() as f64,
            val_metric,
        });
        if val_metric > best.0 {
            best = (val_metric, epoch, params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    let (best_val_metric, best_epoch, best_params) = best;
    let record = RunRecord {
        spec_summary: summarize(spec),
        param_count: spec.param_count(),
        stopping_epoch: epochs.len(),
        epochs,
        best_epoch,
        best_val_metric,
        final_train_loss: mean_loss(spec, &best_params, &data.train, config.loss)?,
        test_metric: evaluate(spec, &best_params, &data.test, data.kind)?,
        seconds: started.elapsed().as_secs_f64(),
        init_seed: config.seed,
        shuffle_seed: config.shuffle_seed(),
    };
    Ok((record, best_params))
}

/// One-line description like `block I=16 J=16 K=4 L=2 M=2 N=2 R=4`.
pub fn summarize(spec: &FusionSpec) -> String {
    use crate::fusion::Scheme;
    let [i, j] = spec.input_dims;
    let head = format!("{} I={i} J={j} K={}", spec.kind(), spec.output_dim);
    let tail = match &spec.scheme {
        Scheme::Block {
            core: [l, m, n],
            blocks,
            slice_rank,
        } => format!(
            " L={l} M={m} N={n} R={blocks}{}",
            slice_rank.map(|r| format!(" rank={r}")).unwrap_or_default()
        ),
        Scheme::Tucker {
            core: [l, m, n],
            slice_rank,
        } => format!(
            " L={l} M={m} N={n}{}",
            slice_rank.map(|r| format!(" rank={r}")).unwrap_or_default()
        ),
        Scheme::Cp { rank } => format!(" R={rank}"),
        Scheme::Mcb { sketch_dim, seed } => format!(" d={sketch_dim} seed={seed}"),
        Scheme::LinearSum { hidden } | Scheme::ConcatMlp { hidden } => format!(" h={hidden}"),
        Scheme::Mfb {
            factor_rank,
            pooled_dim,
        } => format!(" k={factor_rank} o={pooled_dim}"),
        Scheme::Mfh {
            cascade,
            factor_rank,
            pooled_dim,
        } => format!(" Q={cascade} k={factor_rank} o={pooled_dim}"),
        Scheme::Composite { branches } => format!(" branches={}", branches.len()),
    };
    head + &tail
}
