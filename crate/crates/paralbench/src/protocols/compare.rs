//! Swept and paired protocol drivers: per-layer sweeps over a layered
//! extractor, last-hidden versus learned layer fusion, and frozen-backbone
//! versus low-rank adapter tuning. The tuning comparison drives features
//! through the backbone model itself (not the feature cache) so gradients
//! can reach the adapters and both legs share one bit-exact forward path.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;

use super::{
    finish_artifact, spec_hash, train_and_eval, LoraInfo, Protocol, RecordOutcome, RecordSuccess,
    ResultRecord, RunArtifact, RunContext, RunSpec,
};
use crate::corpus::synthetic::SIGNATURE_DIM;
use crate::corpus::{Manifest, ResolvedLabel, Sample, Split};
use crate::error::{HarnessError, Result};
use crate::features::backbone::BackboneModel;
use crate::features::{load_waveform, ExtractorSpec, LayerSpec};
use crate::metrics::{MetricId, MetricReport};
use crate::nn::{polynomial_decay_lr, AdamW, Packed};
use crate::probe::train::{
    train_rng, EpochStats, FeatureSet, SampleFeatures, Targets, TrainConfig, TrainingHistory,
};
use crate::probe::{
    loss_ce, loss_ce_backward, loss_mae, loss_mae_backward, BatchInput, Probe, ProbePath,
};
use crate::registry::{TaskKind, TaskSpec};

fn failure_record(
    ctx: &RunContext,
    spec: &RunSpec,
    layer: LayerSpec,
    layer_index: Option<usize>,
    variant: &str,
    err: &HarnessError,
    started: Instant,
) -> ResultRecord {
    ResultRecord {
        spec_hash: spec_hash(spec),
        protocol: spec.protocol,
        task_id: spec.task_id.clone(),
        extractor_id: spec.extractor_id.clone(),
        layer: layer.canonical(),
        layer_index,
        variant: variant.to_string(),
        seed: spec.seed,
        config_hash: ctx.config_hash.clone(),
        outcome: RecordOutcome::failed(err),
        wall_clock_s: started.elapsed().as_secs_f64(),
    }
}

fn require_layered(extractor: &ExtractorSpec) -> Result<usize> {
    extractor.num_layers.ok_or_else(|| {
        HarnessError::Config(format!(
            "extractor `{}` does not expose layered hidden states",
            extractor.extractor_id
        ))
    })
}

/// The layer index set a sweep evaluates: every `stride`-th layer from 0,
/// with the final layer always appended so the last-hidden comparison point
/// exists even when the stride would skip it.
pub fn sweep_layer_indices(num_layers: usize, stride: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..num_layers).step_by(stride.max(1)).collect();
    let last = num_layers.saturating_sub(1);
    if !indices.contains(&last) {
        indices.push(last);
    }
    indices
}

/// One within-corpus run per selected layer. A failing layer yields a
/// durable failure record and the sweep continues.
pub fn run_layer_sweep(ctx: &RunContext, spec: &RunSpec) -> Result<RunArtifact> {
    let started = Instant::now();
    spec.validate()?;
    if spec.protocol != Protocol::LayerSweep {
        return Err(HarnessError::Config(
            "run spec: protocol is not `layer_sweep`".into(),
        ));
    }
    let extractor = ctx.extractor(&spec.extractor_id)?;
    let num_layers = require_layered(extractor)?;
    let stride = spec.stride.expect("validated");
    let mut records = Vec::new();
    for k in sweep_layer_indices(num_layers, stride) {
        let layer_started = Instant::now();
        match train_and_eval(ctx, spec, LayerSpec::Index(k), "layer", Some(k)) {
            Ok(run) => records.push(run.record),
            Err(err) => records.push(failure_record(
                ctx,
                spec,
                LayerSpec::Index(k),
                Some(k),
                "layer",
                &err,
                layer_started,
            )),
        }
    }
    Ok(finish_artifact(spec, records, started))
}

fn metric_delta(
    baseline: &MetricReport,
    variant: &MetricReport,
) -> BTreeMap<MetricId, f64> {
    variant
        .values
        .iter()
        .filter_map(|(id, v)| baseline.value(*id).map(|b| (*id, v - b)))
        .collect()
}

/// Two runs under identical seeds and configs — the last hidden state and
/// softmax-fused hidden states — reported side by side with the delta.
pub fn run_fusion_compare(ctx: &RunContext, spec: &RunSpec) -> Result<RunArtifact> {
    let started = Instant::now();
    spec.validate()?;
    if spec.protocol != Protocol::FusionCompare {
        return Err(HarnessError::Config(
            "run spec: protocol is not `fusion_compare`".into(),
        ));
    }
    require_layered(ctx.extractor(&spec.extractor_id)?)?;
    let last = train_and_eval(ctx, spec, LayerSpec::LastHidden, "last_hidden", None)?;
    let mut fused = train_and_eval(ctx, spec, LayerSpec::AllLayers, "fusion", None)?;
    if let (Some(base), RecordOutcome::Success(s)) =
        (last.record.outcome.success(), &mut fused.record.outcome)
    {
        s.delta_vs_baseline = Some(metric_delta(&base.metrics, &s.metrics));
    }
    Ok(finish_artifact(spec, vec![last.record, fused.record], started))
}

/// Per-sample encoder-input frames plus resolved targets for one split.
fn frames_and_targets(
    extractor: &ExtractorSpec,
    manifest: &Manifest,
    task: &TaskSpec,
    split: Split,
) -> Result<(Vec<Array2<f64>>, Targets)> {
    let samples: Vec<&Sample> = manifest.split_samples(split);
    if samples.is_empty() {
        return Err(HarnessError::Run(format!(
            "task `{}` has an empty {split} split",
            task.task_id
        )));
    }
    let mut frames = Vec::with_capacity(samples.len());
    let mut classes = Vec::new();
    let mut scalars = Vec::new();
    for sample in samples {
        let waveform = load_waveform(sample, extractor.input_rate_hz)?;
        let sigs = crate::features::synth_adapters::frame_signatures(
            &waveform,
            extractor.frame_len(),
        );
        if sigs.is_empty() {
            return Err(HarnessError::AudioTooShort {
                sample_id: sample.sample_id.clone(),
            });
        }
        frames.push(Array2::from_shape_fn((sigs.len(), SIGNATURE_DIM), |(i, j)| {
            sigs[i][j]
        }));
        match manifest.resolve_for(task, sample)? {
            ResolvedLabel::Class(c) => classes.push(c),
            ResolvedLabel::Scalar(v) => scalars.push(v),
        }
    }
    let targets = match task.kind {
        TaskKind::Classification => Targets::Classes(classes),
        TaskKind::Regression => Targets::Scalars(scalars),
    };
    Ok((frames, targets))
}

fn batch_loss(
    output: &Array2<f64>,
    targets: &Targets,
    chunk: &[usize],
) -> Result<(f64, Array2<f64>)> {
    match targets {
        Targets::Classes(all) => {
            let t: Vec<usize> = chunk.iter().map(|&i| all[i]).collect();
            let loss = loss_ce(output, &t)?;
            Ok((loss, loss_ce_backward(output, &t)))
        }
        Targets::Scalars(all) => {
            let t: Vec<f64> = chunk.iter().map(|&i| all[i]).collect();
            let preds: Vec<f64> = output.column(0).to_vec();
            let loss = loss_mae(&preds, &t)?;
            let grads = loss_mae_backward(&preds, &t);
            let mut d = Array2::zeros(output.raw_dim());
            for (i, g) in grads.into_iter().enumerate() {
                d[(i, 0)] = g;
            }
            Ok((loss, d))
        }
    }
}

/// The probe trainer with features computed by the backbone each step.
/// Frozen backbones pass through unchanged (their parameters are not
/// trainable); backbones with adapters attached receive gradients and the
/// optimizer moves exactly their trainable parameters.
fn train_through_backbone(
    probe: &mut Probe,
    backbone: &mut BackboneModel,
    frames: &[Array2<f64>],
    targets: &Targets,
    cfg: &TrainConfig,
    upto: usize,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    let n = frames.len();
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
    let mut indices: Vec<usize> = (0..n).collect();
    let mut step: u64 = 0;

    for epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let lr_start = polynomial_decay_lr(cfg.lr, step, total_steps);
        for chunk in indices.chunks(cfg.batch_size) {
            let lr_t = polynomial_decay_lr(cfg.lr, step, total_steps);
            let seqs: Vec<Array2<f64>> = chunk.iter().map(|&i| frames[i].clone()).collect();
            let packed = Packed::from_sequences(&seqs);
            let (state, trace) = backbone.forward_to_layer(&packed, upto);
            let feats: Vec<Array2<f64>> = (0..state.n_sequences())
                .map(|i| state.rows(i).to_owned())
                .collect();
            let (output, cache) = probe.forward(&BatchInput::Sequences(feats), true, &mut rng)?;
            let (loss, d_output) = batch_loss(&output, targets, chunk)?;
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
            for p in backbone.params_mut() {
                p.zero_grad();
            }
            let d_features = probe.backward(&cache, &d_output);
            if backbone.adapters_attached() {
                backbone.backward_from_layer(&trace, &d_features);
            }
            let mut params = probe.params_mut();
            params.extend(backbone.params_mut());
            opt.step(lr_t, params);
            epoch_loss += loss;
            step += 1;
        }
        let lr_end = polynomial_decay_lr(cfg.lr, step.saturating_sub(1), total_steps);
        history.epochs.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches_per_epoch as f64,
            lr_start,
            lr_end,
            val_metric: None,
        });
    }
    Ok(history)
}

/// Run all samples through the backbone (evaluation mode) and hand back
/// per-sample feature sequences, batched the same way as training.
fn features_through_backbone(
    backbone: &BackboneModel,
    frames: &[Array2<f64>],
    upto: usize,
    batch_size: usize,
) -> Vec<SampleFeatures> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch_size.max(1)) {
        let packed = Packed::from_sequences(chunk);
        let (state, _trace) = backbone.forward_to_layer(&packed, upto);
        for i in 0..state.n_sequences() {
            out.push(SampleFeatures::Sequence(state.rows(i).to_owned()));
        }
    }
    out
}

fn eval_through_backbone(
    probe: &Probe,
    backbone: &BackboneModel,
    task: &TaskSpec,
    frames: &[Array2<f64>],
    targets: &Targets,
    upto: usize,
    batch_size: usize,
) -> Result<MetricReport> {
    let features = features_through_backbone(backbone, frames, upto, batch_size);
    let set = FeatureSet {
        features,
        targets: targets.clone(),
    };
    super::evaluate_probe(probe, task, &set, batch_size)
}

struct TunedLeg {
    metrics: MetricReport,
    history: TrainingHistory,
    lora: LoraInfo,
}

/// Train one leg of the tuning comparison: a fresh probe over a fresh
/// backbone, optionally with adapters attached.
#[allow(clippy::too_many_arguments)]
fn tuned_leg(
    spec: &RunSpec,
    task: &TaskSpec,
    extractor: &ExtractorSpec,
    train_data: (&[Array2<f64>], &Targets),
    test_data: (&[Array2<f64>], &Targets),
    upto: usize,
    adapters: Option<&super::LoraSettings>,
) -> Result<TunedLeg> {
    let mut backbone = BackboneModel::from_ref(&extractor.checkpoint_ref)?;
    match adapters {
        // Attaching adapters freezes the base weights itself.
        Some(l) => backbone.attach_lora(l.rank, l.alpha, spec.seed),
        // The baseline leg is the frozen condition: without this, decoupled
        // weight decay would shrink the backbone even with zero gradients.
        None => backbone.set_base_trainable(false),
    }
    let checksum_before = backbone.base_checksum();

    let config = spec.probe.to_config(super::probe_kind_for(task)?);
    let mut probe = Probe::new(
        config,
        ProbePath::Sequence,
        backbone.hidden_dim,
        None,
        super::binding_for(extractor),
        spec.seed,
    )?;
    let train_cfg = spec.train.to_config(spec.seed);
    let history = train_through_backbone(
        &mut probe,
        &mut backbone,
        train_data.0,
        train_data.1,
        &train_cfg,
        upto,
    )?;
    let metrics = eval_through_backbone(
        &probe,
        &backbone,
        task,
        test_data.0,
        test_data.1,
        upto,
        spec.train.batch_size,
    )?;
    let adapter_parameter_count = backbone.trainable_parameter_count();
    let lora = LoraInfo {
        rank: adapters.map(|l| l.rank).unwrap_or(0),
        alpha: adapters.map(|l| l.alpha).unwrap_or(0.0),
        backbone_parameter_count: backbone.base_parameter_count(),
        adapter_parameter_count,
        trainable_parameter_count: probe.trainable_parameter_count() + adapter_parameter_count,
        backbone_checksum_before: checksum_before,
        backbone_checksum_after: backbone.base_checksum(),
    };
    Ok(TunedLeg {
        metrics,
        history,
        lora,
    })
}

/// Frozen-backbone run and adapter-tuning run under identical seeds. Both
/// legs compute features through the same backbone forward path, so with
/// zero-initialized adapter up-projections the first optimization step of
/// both runs sees bit-identical losses.
pub fn run_lora_compare(ctx: &RunContext, spec: &RunSpec) -> Result<RunArtifact> {
    let started = Instant::now();
    spec.validate()?;
    if spec.protocol != Protocol::LoraCompare {
        return Err(HarnessError::Config(
            "run spec: protocol is not `lora_compare`".into(),
        ));
    }
    let settings = spec.lora.clone().unwrap_or_default();
    let extractor = ctx.extractor(&spec.extractor_id)?;
    let hash = spec_hash(spec);

    if extractor.scheme() != "backbone" {
        let record = ResultRecord {
            spec_hash: hash,
            protocol: spec.protocol,
            task_id: spec.task_id.clone(),
            extractor_id: spec.extractor_id.clone(),
            layer: spec.layer.canonical(),
            layer_index: None,
            variant: "skipped".to_string(),
            seed: spec.seed,
            config_hash: ctx.config_hash.clone(),
            outcome: RecordOutcome::Skipped {
                reason: format!(
                    "extractor `{}` does not expose tunable transformer internals",
                    extractor.extractor_id
                ),
            },
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        return Ok(finish_artifact(spec, vec![record], started));
    }

    let task = ctx.task(&spec.task_id)?;
    let manifest = ctx.manifest_for(&task.dataset_id)?;
    let num_blocks = require_layered(extractor)?;
    let upto = match spec.layer {
        LayerSpec::LastHidden => num_blocks - 1,
        LayerSpec::Index(k) if k < num_blocks => k,
        LayerSpec::Index(k) => {
            return Err(HarnessError::Config(format!(
                "layer index {k} out of range for a {num_blocks}-block backbone"
            )))
        }
        other => {
            return Err(HarnessError::Config(format!(
                "tuning comparison needs a single hidden state, not `{}`",
                other.canonical()
            )))
        }
    };

    let (train_frames, train_targets) = frames_and_targets(extractor, manifest, task, Split::Train)?;
    let (test_frames, test_targets) = frames_and_targets(extractor, manifest, task, Split::Test)?;

    let frozen_started = Instant::now();
    let frozen = tuned_leg(
        spec,
        task,
        extractor,
        (&train_frames, &train_targets),
        (&test_frames, &test_targets),
        upto,
        None,
    )?;
    let frozen_elapsed = frozen_started.elapsed().as_secs_f64();

    let lora_started = Instant::now();
    let adapted = tuned_leg(
        spec,
        task,
        extractor,
        (&train_frames, &train_targets),
        (&test_frames, &test_targets),
        upto,
        Some(&settings),
    )?;
    let lora_elapsed = lora_started.elapsed().as_secs_f64();

    let layer_used = LayerSpec::Index(upto).canonical();
    let make_record = |variant: &str,
                       leg: &TunedLeg,
                       delta: Option<BTreeMap<MetricId, f64>>,
                       elapsed: f64| ResultRecord {
        spec_hash: spec_hash(spec),
        protocol: spec.protocol,
        task_id: task.task_id.clone(),
        extractor_id: extractor.extractor_id.clone(),
        layer: layer_used.clone(),
        layer_index: Some(upto),
        variant: variant.to_string(),
        seed: spec.seed,
        config_hash: ctx.config_hash.clone(),
        outcome: RecordOutcome::Success(RecordSuccess {
            metrics: leg.metrics.clone(),
            history: super::HistorySummary::from(&leg.history),
            train_count: train_frames.len(),
            validation_count: 0,
            test_count: test_frames.len(),
            cross: None,
            fusion: None,
            lora: Some(leg.lora.clone()),
            delta_vs_baseline: delta,
        }),
        wall_clock_s: elapsed,
    };

    let delta = metric_delta(&frozen.metrics, &adapted.metrics);
    let records = vec![
        make_record("frozen", &frozen, None, frozen_elapsed),
        make_record("lora", &adapted, Some(delta), lora_elapsed),
    ];
    Ok(finish_artifact(spec, records, started))
}
