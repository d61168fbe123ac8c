//! Training loop for the probe: seeded epoch shuffling, mini-batches,
//! decoupled weight decay, linear learning-rate decay to zero, divergence
//! detection, and validation-based model selection with a per-epoch
//! history record.

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{loss_ce, loss_ce_backward, loss_mae, loss_mae_backward, BatchInput, Probe, ProbeKind};
use crate::error::{HarnessError, Result};
use crate::metrics::{confusion, mae_metric, ua, wa, wf1, MetricId};
use crate::nn::{polynomial_decay_lr, AdamW};

/// Initial learning rate for the deep-feature path.
pub const LR_DEEP: f64 = 5e-4;
/// Initial learning rate for the handcrafted-feature path.
pub const LR_HANDCRAFTED: f64 = 5e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for sequence features from a deep encoder.
    pub fn deep(seed: u64) -> Self {
        TrainConfig {
            lr: LR_DEEP,
            max_epochs: 60,
            weight_decay: 1e-2,
            batch_size: 32,
            seed,
        }
    }

    /// Defaults for handcrafted fixed-vector features.
    pub fn handcrafted(seed: u64) -> Self {
        TrainConfig {
            lr: LR_HANDCRAFTED,
            ..Self::deep(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(HarnessError::Config("learning rate must be positive".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Features for one sample, matching the probe's input path.
#[derive(Debug, Clone)]
pub enum SampleFeatures {
    Sequence(Array2<f64>),
    Stack(Array3<f64>),
    Vector(Array1<f64>),
}

/// Ground-truth targets for a feature set.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Scalars(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Scalars(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A split's worth of extracted features plus targets, index-aligned.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub features: Vec<SampleFeatures>,
    pub targets: Targets,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.targets.len() {
            return Err(HarnessError::Run(format!(
                "{} feature rows but {} targets",
                self.features.len(),
                self.targets.len()
            )));
        }
        Ok(())
    }
}

/// Summary of one training epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub val_metric: Option<f64>,
}

/// Everything the run record keeps about a completed training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    pub first_step_loss: f64,
    pub total_steps: u64,
    /// Sum of softmaxed fusion weights after every optimizer step (present
    /// only when fusion is enabled); each entry must be 1 within 1e-6.
    pub fusion_weight_sums: Vec<f64>,
    /// Epoch whose parameters were selected by validation, when a
    /// validation split existed; otherwise the final epoch's weights stand.
    pub selected_epoch: Option<usize>,
}

pub(crate) fn train_rng(seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-train");
    hasher.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Gather one mini-batch; all samples must share a feature family.
fn build_batch(features: &[SampleFeatures], indices: &[usize]) -> Result<BatchInput> {
    match &features[indices[0]] {
        SampleFeatures::Sequence(_) => {
            let seqs = indices
                .iter()
                .map(|&i| match &features[i] {
                    SampleFeatures::Sequence(m) => Ok(m.clone()),
                    _ => Err(mixed_features()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BatchInput::Sequences(seqs))
        }
        SampleFeatures::Stack(_) => {
            let stacks = indices
                .iter()
                .map(|&i| match &features[i] {
                    SampleFeatures::Stack(m) => Ok(m.clone()),
                    _ => Err(mixed_features()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(BatchInput::Stacks(stacks))
        }
        SampleFeatures::Vector(first) => {
            let h = first.len();
            let mut data = Array2::zeros((indices.len(), h));
            for (row, &i) in indices.iter().enumerate() {
                match &features[i] {
                    SampleFeatures::Vector(v) if v.len() == h => {
                        data.row_mut(row).assign(v);
                    }
                    SampleFeatures::Vector(_) => {
                        return Err(HarnessError::ShapeMismatch {
                            context: "vector batch".into(),
                            expected: format!("width {h}"),
                            got: "inconsistent width".into(),
                        })
                    }
                    _ => return Err(mixed_features()),
                }
            }
            Ok(BatchInput::Vectors(data))
        }
    }
}

fn mixed_features() -> HarnessError {
    HarnessError::Run("mixed feature families in one training set".into())
}

/// Train the probe in place. When a validation set is given, the epoch with
/// the best `selection_metric` is restored at the end; otherwise the final
/// epoch's parameters stand.
pub fn train_probe(
    probe: &mut Probe,
    data: &FeatureSet,
    val: Option<&FeatureSet>,
    cfg: &TrainConfig,
    selection_metric: MetricId,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(HarnessError::Run("empty train split".into()));
    }
    if let Some(v) = val {
        v.validate()?;
    }
    match (&probe.config.kind, &data.targets) {
        (ProbeKind::Classification { .. }, Targets::Classes(_)) => {}
        (ProbeKind::Regression, Targets::Scalars(_)) => {}
        _ => {
            return Err(HarnessError::Run(
                "target kind does not match the probe output".into(),
            ))
        }
    }

    let n = data.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.max_epochs * batches_per_epoch) as u64;
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut rng = train_rng(cfg.seed);
    let mut history = TrainingHistory {
        epochs: Vec::with_capacity(cfg.max_epochs),
        first_step_loss: f64::NAN,
        total_steps,
        fusion_weight_sums: Vec::new(),
        selected_epoch: None,
    };
    let mut best: Option<(f64, Vec<Array2<f64>>, usize)> = None;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;

    for epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let lr_start = polynomial_decay_lr(cfg.lr, step, total_steps);
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = build_batch(&data.features, chunk)?;
            let lr_t = polynomial_decay_lr(cfg.lr, step, total_steps);
            let (output, cache) = probe.forward(&batch, true, &mut rng)?;
            let (loss, d_output) = match &data.targets {
                Targets::Classes(all) => {
                    let targets: Vec<usize> = chunk.iter().map(|&i| all[i]).collect();
                    let loss = loss_ce(&output, &targets)?;
                    (loss, loss_ce_backward(&output, &targets))
                }
                Targets::Scalars(all) => {
                    let targets: Vec<f64> = chunk.iter().map(|&i| all[i]).collect();
                    let preds: Vec<f64> = output.column(0).to_vec();
                    let loss = loss_mae(&preds, &targets)?;
                    let d = loss_mae_backward(&preds, &targets);
                    let mut d_out = Array2::zeros(output.raw_dim());
                    for (i, g) in d.into_iter().enumerate() {
                        d_out[(i, 0)] = g;
                    }
                    (loss, d_out)
                }
            };
            if !loss.is_finite() {
                return Err(HarnessError::Divergence {
                    epoch,
                    step: step as usize,
                    loss,
                });
            }
            if step == 0 {
                history.first_step_loss = loss;
            }
            probe.zero_grads();
            probe.backward(&cache, &d_output);
            opt.step(lr_t, probe.params_mut());
            if probe.fusion.is_some() {
                let sum: f64 = probe.fusion_weights().expect("fusion enabled").iter().sum();
                history.fusion_weight_sums.push(sum);
            }
            epoch_loss += loss;
            step += 1;
        }
        let lr_end = polynomial_decay_lr(cfg.lr, step.saturating_sub(1), total_steps);
        let val_metric = match val {
            Some(v) => Some(evaluate_metric(probe, v, selection_metric, cfg.batch_size)?),
            None => None,
        };
        if let Some(value) = val_metric {
            let better = match &best {
                None => true,
                Some((incumbent, _, _)) => {
                    if selection_metric.higher_is_better() {
                        value > *incumbent
                    } else {
                        value < *incumbent
                    }
                }
            };
            if better {
                let snapshot = probe.params().iter().map(|p| p.value.clone()).collect();
                best = Some((value, snapshot, epoch));
            }
        }
        history.epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches_per_epoch as f64,
            lr_start,
            lr_end,
            val_metric,
        });
    }

    if let Some((_, snapshot, epoch)) = best {
        for (param, value) in probe.params_mut().into_iter().zip(snapshot) {
            param.value = value;
        }
        history.selected_epoch = Some(epoch);
    }
    Ok(history)
}

/// Class predictions (argmax; ties resolve to the lowest index).
pub fn predict_classes(
    probe: &Probe,
    features: &[SampleFeatures],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(features.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let indices: Vec<usize> = (0..features.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = build_batch(features, chunk)?;
        let (p, _) = probe.forward(&batch, false, &mut rng)?;
        for row in p.rows() {
            let mut arg = 0;
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v > max {
                    max = v;
                    arg = j;
                }
            }
            out.push(arg);
        }
    }
    Ok(out)
}

/// Scalar predictions for regression probes.
pub fn predict_scalars(
    probe: &Probe,
    features: &[SampleFeatures],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(features.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let indices: Vec<usize> = (0..features.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = build_batch(features, chunk)?;
        let (p, _) = probe.forward(&batch, false, &mut rng)?;
        out.extend(p.column(0).iter().copied());
    }
    Ok(out)
}

/// Evaluate one metric of the probe over a feature set.
pub fn evaluate_metric(
    probe: &Probe,
    set: &FeatureSet,
    metric: MetricId,
    batch_size: usize,
) -> Result<f64> {
    set.validate()?;
    match (&set.targets, metric) {
        (Targets::Scalars(y), MetricId::Mae) => {
            let preds = predict_scalars(probe, &set.features, batch_size)?;
            mae_metric(y, &preds)
        }
        (Targets::Classes(y), m) => {
            let preds = predict_classes(probe, &set.features, batch_size)?;
            let cm = confusion(y, &preds, probe.output_dim())?;
            Ok(match m {
                MetricId::Wa => wa(&cm),
                MetricId::Ua => ua(&cm),
                MetricId::Wf1 => wf1(&cm),
                MetricId::Mae => {
                    return Err(HarnessError::Config(
                        "MAE is not defined for classification outputs".into(),
                    ))
                }
            })
        }
        (Targets::Scalars(_), _) => Err(HarnessError::Config(
            "classification metrics are not defined for regression outputs".into(),
        )),
    }
}
