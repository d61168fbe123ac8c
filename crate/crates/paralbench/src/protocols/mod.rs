//! Evaluation drivers. Each protocol turns a declarative [`RunSpec`] into a
//! durable [`RunArtifact`]: features are assembled through the extraction
//! cache, the probe is trained and evaluated, and every outcome — success,
//! failure, or documented skip — is recorded under the spec's content hash
//! so grids stay auditable and reruns are deduplicated.

mod compare;

pub use compare::{run_fusion_compare, run_layer_sweep, run_lora_compare, sweep_layer_indices};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Manifest, ResolvedLabel, Sample, Split};
use crate::error::{ErrorCategory, HarnessError, Result};
use crate::features::{ExtractionEngine, ExtractorFamily, ExtractorSpec, FeatureCache, LayerSpec};
use crate::metrics::{
    classification_report, confusion, MetricId, MetricReport, regression_report,
};
use crate::probe::checkpoint::{load_probe, save_probe, verify_binding};
use crate::probe::train::{
    predict_classes, predict_scalars, train_probe, FeatureSet, SampleFeatures, Targets,
    TrainConfig, TrainingHistory, LR_DEEP, LR_HANDCRAFTED,
};
use crate::probe::{
    ExtractorBinding, Pooling, Probe, ProbeConfig, ProbeKind, ProbePath, DEFAULT_WORKING_DIM,
};
use crate::registry::{build_label_mapping, TaskKind, TaskRegistry, TaskSpec};

/// The five evaluation protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Within,
    CrossCorpus,
    LayerSweep,
    FusionCompare,
    LoraCompare,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Within => "within",
            Protocol::CrossCorpus => "cross_corpus",
            Protocol::LayerSweep => "layer_sweep",
            Protocol::FusionCompare => "fusion_compare",
            Protocol::LoraCompare => "lora_compare",
        }
    }
}

/// Probe architecture knobs carried by a run spec. The output kind
/// (classification width or regression) is derived from the task at run
/// time, so a grid entry cannot disagree with the task it names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub d: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub encoder_dropout: f64,
    pub classifier_dropout: f64,
    pub pooling: Pooling,
}

impl ProbeSettings {
    /// The standard deep-feature probe: working dimension 768, two encoder
    /// layers, eight heads, dropout 0.1 / 0.5.
    pub fn deep() -> Self {
        ProbeSettings {
            d: DEFAULT_WORKING_DIM,
            encoder_layers: 2,
            attention_heads: 8,
            encoder_dropout: 0.1,
            classifier_dropout: 0.5,
            pooling: Pooling::PrependedToken,
        }
    }

    /// A small probe for quick runs; same shape, narrow working dimension.
    pub fn small(d: usize) -> Self {
        ProbeSettings {
            d,
            encoder_layers: 1,
            attention_heads: 2,
            encoder_dropout: 0.1,
            classifier_dropout: 0.1,
            pooling: Pooling::PrependedToken,
        }
    }

    pub fn to_config(&self, kind: ProbeKind) -> ProbeConfig {
        ProbeConfig {
            d: self.d,
            encoder_layers: self.encoder_layers,
            attention_heads: self.attention_heads,
            encoder_dropout: self.encoder_dropout,
            classifier_dropout: self.classifier_dropout,
            kind,
            pooling: self.pooling,
        }
    }
}

/// Optimization knobs carried by a run spec; the spec's seed feeds both
/// probe initialization and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl TrainSettings {
    /// Deep-feature defaults: lr 5e-4, up to 60 epochs, decoupled weight
    /// decay 1e-2, batch 32.
    pub fn deep() -> Self {
        TrainSettings {
            lr: LR_DEEP,
            max_epochs: 60,
            weight_decay: 1e-2,
            batch_size: 32,
        }
    }

    /// Handcrafted-feature defaults (lr 5e-5).
    pub fn handcrafted() -> Self {
        TrainSettings {
            lr: LR_HANDCRAFTED,
            ..TrainSettings::deep()
        }
    }

    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            max_epochs: self.max_epochs,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed,
        }
    }
}

/// Low-rank adapter settings for the tuning-comparison protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraSettings {
    fn default() -> Self {
        LoraSettings { rank: 8, alpha: 16.0 }
    }
}

/// Declarative description of one evaluation run. Hashing the canonical
/// JSON of this struct yields the run's identity in the results store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub protocol: Protocol,
    /// Task to train on (and to test on, except for cross-corpus runs).
    pub task_id: String,
    /// Cross-corpus only: the task whose test split is evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_task_id: Option<String>,
    pub extractor_id: String,
    /// Representation to extract. Sweeps and the fusion comparison derive
    /// their own selectors and require the `last_hidden` placeholder here.
    pub layer: LayerSpec,
    /// Layer-sweep stride.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Adapter settings for the tuning comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraSettings>,
    pub probe: ProbeSettings,
    pub train: TrainSettings,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunSpec {
    pub fn within(task_id: &str, extractor_id: &str, layer: LayerSpec, seed: u64) -> Self {
        RunSpec {
            protocol: Protocol::Within,
            task_id: task_id.to_string(),
            test_task_id: None,
            extractor_id: extractor_id.to_string(),
            layer,
            stride: None,
            lora: None,
            probe: ProbeSettings::deep(),
            train: TrainSettings::deep(),
            seed,
            notes: Vec::new(),
        }
    }

    pub fn cross(train_task: &str, test_task: &str, extractor_id: &str, layer: LayerSpec, seed: u64) -> Self {
        RunSpec {
            protocol: Protocol::CrossCorpus,
            test_task_id: Some(test_task.to_string()),
            ..RunSpec::within(train_task, extractor_id, layer, seed)
        }
    }

    pub fn sweep(task_id: &str, extractor_id: &str, stride: usize, seed: u64) -> Self {
        RunSpec {
            protocol: Protocol::LayerSweep,
            stride: Some(stride),
            ..RunSpec::within(task_id, extractor_id, LayerSpec::LastHidden, seed)
        }
    }

    pub fn fusion(task_id: &str, extractor_id: &str, seed: u64) -> Self {
        RunSpec {
            protocol: Protocol::FusionCompare,
            ..RunSpec::within(task_id, extractor_id, LayerSpec::LastHidden, seed)
        }
    }

    pub fn lora_compare(task_id: &str, extractor_id: &str, seed: u64) -> Self {
        RunSpec {
            protocol: Protocol::LoraCompare,
            lora: Some(LoraSettings::default()),
            ..RunSpec::within(task_id, extractor_id, LayerSpec::LastHidden, seed)
        }
    }

    /// Protocol-specific field discipline: unused fields must hold their
    /// defaults so equal runs cannot hash differently.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Err(HarnessError::Config(format!("run spec: {reason}")));
        match self.protocol {
            Protocol::CrossCorpus => {
                if self.test_task_id.is_none() {
                    return fail("cross_corpus needs a test task");
                }
            }
            _ => {
                if self.test_task_id.is_some() {
                    return fail("test task is only valid for cross_corpus");
                }
            }
        }
        match self.protocol {
            Protocol::LayerSweep => match self.stride {
                None => return fail("layer_sweep needs a stride"),
                Some(0) => return fail("stride must be at least 1"),
                Some(_) => {}
            },
            _ => {
                if self.stride.is_some() {
                    return fail("stride is only valid for layer_sweep");
                }
            }
        }
        if self.protocol != Protocol::LoraCompare && self.lora.is_some() {
            return fail("adapter settings are only valid for lora_compare");
        }
        if matches!(
            self.protocol,
            Protocol::LayerSweep | Protocol::FusionCompare
        ) && self.layer != LayerSpec::LastHidden
        {
            return fail("sweeps and fusion comparisons choose their own layers; use last_hidden");
        }
        if let Some(l) = &self.lora {
            if l.rank == 0 || !(l.alpha > 0.0) {
                return fail("adapter rank and alpha must be positive");
            }
        }
        Ok(())
    }

    /// The within-corpus spec a paired or derived protocol would train:
    /// used to share trained probes with matching hashes.
    pub fn derived_within(&self) -> RunSpec {
        RunSpec {
            protocol: Protocol::Within,
            task_id: self.task_id.clone(),
            test_task_id: None,
            extractor_id: self.extractor_id.clone(),
            layer: self.layer,
            stride: None,
            lora: None,
            probe: self.probe.clone(),
            train: self.train.clone(),
            seed: self.seed,
            notes: Vec::new(),
        }
    }
}

/// Content hash identifying a run: SHA-256 over the spec's canonical JSON.
pub fn spec_hash(spec: &RunSpec) -> String {
    let json = serde_json::to_vec(spec).expect("run spec serializes");
    let mut hasher = Sha256::new();
    hasher.update(&json);
    hex::encode(hasher.finalize())
}

/// Where and how a record was produced; recorded for provenance, not
/// compared for equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentFingerprint {
    pub harness_version: String,
    pub os: String,
    pub arch: String,
    pub endianness: String,
    pub threads: usize,
}

impl EnvironmentFingerprint {
    pub fn current() -> Self {
        EnvironmentFingerprint {
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            endianness: if cfg!(target_endian = "little") {
                "little".into()
            } else {
                "big".into()
            },
            threads: 1,
        }
    }
}

/// Compact training trace kept in the record. Loss fields are optional so
/// records that involve no training (reused probes) stay JSON-clean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistorySummary {
    pub epochs_run: usize,
    pub total_steps: u64,
    pub first_step_loss: Option<f64>,
    pub final_mean_loss: Option<f64>,
    pub selected_epoch: Option<usize>,
    pub best_val_metric: Option<f64>,
}

impl HistorySummary {
    /// Summary for a record whose probe was not trained in this run.
    pub fn untrained() -> Self {
        HistorySummary {
            epochs_run: 0,
            total_steps: 0,
            first_step_loss: None,
            final_mean_loss: None,
            selected_epoch: None,
            best_val_metric: None,
        }
    }
}

impl From<&TrainingHistory> for HistorySummary {
    fn from(h: &TrainingHistory) -> Self {
        let best_val = match h.selected_epoch {
            Some(e) => h.epochs.get(e).and_then(|s| s.val_metric),
            None => None,
        };
        HistorySummary {
            epochs_run: h.epochs.len(),
            total_steps: h.total_steps,
            first_step_loss: Some(h.first_step_loss).filter(|v| v.is_finite()),
            final_mean_loss: h.epochs.last().map(|e| e.mean_loss),
            selected_epoch: h.selected_epoch,
            best_val_metric: best_val,
        }
    }
}

/// Label-harmonization bookkeeping for a cross-corpus record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossCorpusInfo {
    pub train_task_id: String,
    pub test_task_id: String,
    pub original_test_count: usize,
    pub filtered_test_count: usize,
    /// Target-space classes removed because the source space lacks them.
    pub dropped_classes: Vec<String>,
    /// (target class, source class) pairs that survived harmonization.
    pub mapped_pairs: Vec<(String, String)>,
}

/// Fusion-weight bookkeeping for a fusion record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionInfo {
    /// Softmax-normalized per-layer weights after training.
    pub final_weights: Vec<f64>,
    /// Sum of the normalized weights after every optimizer step.
    pub weight_sums_per_step: Vec<f64>,
    pub weight_sum_min: f64,
    pub weight_sum_max: f64,
}

/// Parameter accounting for the tuning-comparison records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoraInfo {
    pub rank: usize,
    pub alpha: f64,
    pub backbone_parameter_count: usize,
    pub adapter_parameter_count: usize,
    /// All parameters the optimizer may move in this run (probe + adapters).
    pub trainable_parameter_count: usize,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
}

/// Everything a successful evaluation yields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordSuccess {
    pub metrics: MetricReport,
    pub history: HistorySummary,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<CrossCorpusInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<FusionInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lora: Option<LoraInfo>,
    /// Paired protocols: this variant's metrics minus the baseline's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_vs_baseline: Option<BTreeMap<MetricId, f64>>,
}

/// Outcome of one evaluation; failures and documented skips are durable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RecordOutcome {
    Success(RecordSuccess),
    Failed { category: String, error: String },
    Skipped { reason: String },
}

impl RecordOutcome {
    pub fn failed(err: &HarnessError) -> Self {
        let category = match err.category() {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Run => "run",
        };
        RecordOutcome::Failed {
            category: category.to_string(),
            error: err.to_string(),
        }
    }

    pub fn success(&self) -> Option<&RecordSuccess> {
        match self {
            RecordOutcome::Success(s) => Some(s),
            _ => None,
        }
    }
}

/// One evaluation outcome, traceable to its spec hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec_hash: String,
    pub protocol: Protocol,
    /// Task the metrics describe (for cross-corpus runs, the test task).
    pub task_id: String,
    pub extractor_id: String,
    /// Canonical form of the layer selector actually evaluated.
    pub layer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<usize>,
    /// Which leg of the protocol this is: `within`, `cross`, `layer`,
    /// `last_hidden`, `fusion`, `frozen`, or `lora`.
    pub variant: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub outcome: RecordOutcome,
    pub wall_clock_s: f64,
}

impl ResultRecord {
    pub fn metric(&self, id: MetricId) -> Option<f64> {
        self.outcome.success().and_then(|s| s.metrics.value(id))
    }
}

/// The durable artifact for one run spec: all records it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format_version: u32,
    pub spec_hash: String,
    pub spec: RunSpec,
    pub environment: EnvironmentFingerprint,
    pub created_utc: String,
    pub wall_clock_s: f64,
    pub records: Vec<ResultRecord>,
}

impl RunArtifact {
    pub fn record(&self, variant: &str) -> Option<&ResultRecord> {
        self.records.iter().find(|r| r.variant == variant)
    }
}

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Append-only directory of run artifacts, one JSON file per spec hash.
#[derive(Debug, Clone)]
pub struct ResultsStore {
    root: PathBuf,
}

impl ResultsStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResultsStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, spec_hash: &str) -> PathBuf {
        self.root.join(format!("{spec_hash}.json"))
    }

    pub fn contains(&self, spec_hash: &str) -> bool {
        self.path_for(spec_hash).exists()
    }

    /// Persist an artifact. Refuses to overwrite an existing record for the
    /// same spec hash unless `force` is set.
    pub fn append(&self, artifact: &RunArtifact, force: bool) -> Result<PathBuf> {
        let path = self.path_for(&artifact.spec_hash);
        if path.exists() && !force {
            return Err(HarnessError::RunExists {
                spec_hash: artifact.spec_hash.clone(),
            });
        }
        std::fs::create_dir_all(&self.root)?;
        let json = serde_json::to_string_pretty(artifact)?;
        crate::features::atomic_write(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn load(&self, spec_hash: &str) -> Result<RunArtifact> {
        let path = self.path_for(spec_hash);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            HarnessError::MissingResult(format!("no record for spec hash {spec_hash}"))
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// All stored artifacts, ordered by spec hash for deterministic reports.
    pub fn load_all(&self) -> Result<Vec<RunArtifact>> {
        let mut hashes = Vec::new();
        let entries = match std::fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(_) => return Ok(Vec::new()),
        };
        for entry in entries {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    hashes.push(stem.to_string());
                }
            }
        }
        hashes.sort();
        hashes.iter().map(|h| self.load(h)).collect()
    }
}

/// Everything a protocol needs to resolve a spec: the task registry, the
/// extraction machinery, manifests by dataset, and extractor specs by id.
pub struct RunContext<'a> {
    pub registry: &'a TaskRegistry,
    pub engine: &'a ExtractionEngine,
    pub cache: &'a FeatureCache,
    manifests: BTreeMap<String, Manifest>,
    extractors: BTreeMap<String, ExtractorSpec>,
    /// When set, trained probes are saved here (keyed by the within-corpus
    /// spec hash) and reused by cross-corpus runs with matching hashes.
    pub checkpoints_root: Option<PathBuf>,
    /// Hash of the harness configuration, stamped into records.
    pub config_hash: Option<String>,
}

impl<'a> RunContext<'a> {
    pub fn new(
        registry: &'a TaskRegistry,
        engine: &'a ExtractionEngine,
        cache: &'a FeatureCache,
    ) -> Self {
        RunContext {
            registry,
            engine,
            cache,
            manifests: BTreeMap::new(),
            extractors: BTreeMap::new(),
            checkpoints_root: None,
            config_hash: None,
        }
    }

    pub fn add_manifest(&mut self, manifest: Manifest) {
        self.manifests.insert(manifest.dataset_id.clone(), manifest);
    }

    pub fn add_extractor(&mut self, spec: ExtractorSpec) {
        self.extractors.insert(spec.extractor_id.clone(), spec);
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskSpec> {
        self.registry.task(task_id)
    }

    pub fn manifest_for(&self, dataset_id: &str) -> Result<&Manifest> {
        self.manifests.get(dataset_id).ok_or_else(|| {
            HarnessError::Config(format!("no manifest loaded for dataset `{dataset_id}`"))
        })
    }

    pub fn extractor(&self, extractor_id: &str) -> Result<&ExtractorSpec> {
        self.extractors.get(extractor_id).ok_or_else(|| {
            HarnessError::Config(format!("unknown extractor `{extractor_id}`"))
        })
    }
}

/// Features plus targets for one split, ready for the probe.
pub(crate) struct AssembledSet {
    pub set: FeatureSet,
    pub input_dim: usize,
    pub stack_layers: Option<usize>,
}

fn record_to_features(
    record: &crate::features::FeatureRecord,
    layer: &LayerSpec,
) -> Result<(SampleFeatures, usize, Option<usize>)> {
    match layer {
        LayerSpec::LastHidden | LayerSpec::Index(_) => {
            let view = record.sequence_view()?;
            let seq: Array2<f64> = view.mapv(|v| v as f64);
            let dim = seq.ncols();
            Ok((SampleFeatures::Sequence(seq), dim, None))
        }
        LayerSpec::AllLayers => {
            let view = record.layers_view()?;
            let stack: Array3<f64> = view.mapv(|v| v as f64);
            let dim = stack.shape()[2];
            let layers = stack.shape()[0];
            Ok((SampleFeatures::Stack(stack), dim, Some(layers)))
        }
        LayerSpec::FixedVector => {
            let values: Vec<f64> = record.vector_view()?.iter().map(|&v| v as f64).collect();
            let dim = values.len();
            Ok((SampleFeatures::Vector(Array1::from_vec(values)), dim, None))
        }
    }
}

/// Extract (through the cache) and label every sample of one split.
/// Returns `None` when the manifest has no samples in that split.
pub(crate) fn assemble_split(
    ctx: &RunContext,
    extractor: &ExtractorSpec,
    manifest: &Manifest,
    task: &TaskSpec,
    layer: &LayerSpec,
    split: Split,
) -> Result<Option<AssembledSet>> {
    let samples = manifest.split_samples(split);
    if samples.is_empty() {
        return Ok(None);
    }
    assemble_samples(ctx, extractor, manifest, task, layer, &samples).map(Some)
}

fn assemble_samples(
    ctx: &RunContext,
    extractor: &ExtractorSpec,
    manifest: &Manifest,
    task: &TaskSpec,
    layer: &LayerSpec,
    samples: &[&Sample],
) -> Result<AssembledSet> {
    let mut features = Vec::with_capacity(samples.len());
    let mut classes = Vec::new();
    let mut scalars = Vec::new();
    let mut input_dim = 0;
    let mut stack_layers = None;
    for sample in samples {
        let (record, _event) = ctx.cache.get_or_extract(ctx.engine, extractor, sample, layer)?;
        let (f, dim, layers) = record_to_features(&record, layer)?;
        if input_dim == 0 {
            input_dim = dim;
            stack_layers = layers;
        } else if dim != input_dim {
            return Err(HarnessError::ShapeMismatch {
                context: format!("features for sample `{}`", sample.sample_id),
                expected: format!("width {input_dim}"),
                got: format!("width {dim}"),
            });
        }
        features.push(f);
        match manifest.resolve_for(task, sample)? {
            ResolvedLabel::Class(c) => classes.push(c),
            ResolvedLabel::Scalar(v) => scalars.push(v),
        }
    }
    let targets = match task.kind {
        TaskKind::Classification => Targets::Classes(classes),
        TaskKind::Regression => Targets::Scalars(scalars),
    };
    let set = FeatureSet { features, targets };
    set.validate()?;
    Ok(AssembledSet {
        set,
        input_dim,
        stack_layers,
    })
}

fn probe_kind_for(task: &TaskSpec) -> Result<ProbeKind> {
    match task.kind {
        TaskKind::Classification => {
            let space = task.label_space.as_ref().ok_or_else(|| {
                HarnessError::Config(format!("task `{}` lacks a label space", task.task_id))
            })?;
            Ok(ProbeKind::Classification {
                classes: space.len(),
            })
        }
        TaskKind::Regression => Ok(ProbeKind::Regression),
    }
}

fn probe_path_for(extractor: &ExtractorSpec, layer: &LayerSpec) -> ProbePath {
    if extractor.family == ExtractorFamily::HandcraftedVector
        || *layer == LayerSpec::FixedVector
    {
        ProbePath::Vector
    } else {
        ProbePath::Sequence
    }
}

fn binding_for(extractor: &ExtractorSpec) -> ExtractorBinding {
    ExtractorBinding {
        extractor_id: extractor.extractor_id.clone(),
        version_hash: extractor.version_hash.clone(),
    }
}

/// A completed train + evaluate cycle; the record embeds the history
/// summary and any fusion bookkeeping.
pub(crate) struct TrainedRun {
    pub record: ResultRecord,
    pub probe: Probe,
}

/// Core of the within-corpus protocol, shared by sweeps and comparisons:
/// assemble features for the given layer, train the probe on the task's
/// train (+ validation) splits, evaluate on test.
pub(crate) fn train_and_eval(
    ctx: &RunContext,
    spec: &RunSpec,
    layer: LayerSpec,
    variant: &str,
    layer_index: Option<usize>,
) -> Result<TrainedRun> {
    let started = Instant::now();
    let hash = spec_hash(spec);
    let task = ctx.task(&spec.task_id)?;
    let extractor = ctx.extractor(&spec.extractor_id)?;
    let manifest = ctx.manifest_for(&task.dataset_id)?;
    layer.validate_for(extractor)?;

    let train = assemble_split(ctx, extractor, manifest, task, &layer, Split::Train)?
        .ok_or_else(|| {
            HarnessError::Run(format!("task `{}` has an empty train split", task.task_id))
        })?;
    let validation = assemble_split(ctx, extractor, manifest, task, &layer, Split::Validation)?;
    let test = assemble_split(ctx, extractor, manifest, task, &layer, Split::Test)?
        .ok_or_else(|| {
            HarnessError::Run(format!("task `{}` has an empty test split", task.task_id))
        })?;

    let fusion_layers = train.stack_layers;
    let config = spec.probe.to_config(probe_kind_for(task)?);
    let path = probe_path_for(extractor, &layer);
    let mut probe = Probe::new(
        config,
        path,
        train.input_dim,
        fusion_layers,
        binding_for(extractor),
        spec.seed,
    )?;

    let train_cfg = spec.train.to_config(spec.seed);
    let history = train_probe(
        &mut probe,
        &train.set,
        validation.as_ref().map(|v| &v.set),
        &train_cfg,
        task.primary_metric(),
    )?;

    let metrics = evaluate_probe(&probe, task, &test.set, spec.train.batch_size)?;

    let fusion = probe.fusion_weights().map(|final_weights| {
        let sums = &history.fusion_weight_sums;
        FusionInfo {
            final_weights,
            weight_sum_min: sums.iter().copied().fold(f64::INFINITY, f64::min),
            weight_sum_max: sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            weight_sums_per_step: sums.clone(),
        }
    });

    let success = RecordSuccess {
        metrics,
        history: HistorySummary::from(&history),
        train_count: train.set.len(),
        validation_count: validation.as_ref().map(|v| v.set.len()).unwrap_or(0),
        test_count: test.set.len(),
        cross: None,
        fusion,
        lora: None,
        delta_vs_baseline: None,
    };
    let record = ResultRecord {
        spec_hash: hash,
        protocol: spec.protocol,
        task_id: task.task_id.clone(),
        extractor_id: extractor.extractor_id.clone(),
        layer: layer.canonical(),
        layer_index,
        variant: variant.to_string(),
        seed: spec.seed,
        config_hash: ctx.config_hash.clone(),
        outcome: RecordOutcome::Success(success),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(TrainedRun { record, probe })
}

/// Evaluate a trained probe on a feature set under the task's metric set.
fn evaluate_probe(
    probe: &Probe,
    task: &TaskSpec,
    set: &FeatureSet,
    batch_size: usize,
) -> Result<MetricReport> {
    match (&set.targets, task.kind) {
        (Targets::Classes(y_true), TaskKind::Classification) => {
            let y_pred = predict_classes(probe, &set.features, batch_size)?;
            let space = task.label_space.as_ref().expect("validated classification task");
            let cm = confusion(y_true, &y_pred, space.len())?;
            classification_report(&task.task_id, space.classes(), &cm, &task.metrics)
        }
        (Targets::Scalars(y_true), TaskKind::Regression) => {
            let y_pred = predict_scalars(probe, &set.features, batch_size)?;
            regression_report(&task.task_id, y_true, &y_pred)
        }
        _ => Err(HarnessError::Run(format!(
            "assembled targets do not match task `{}`",
            task.task_id
        ))),
    }
}

pub(crate) fn finish_artifact(
    spec: &RunSpec,
    records: Vec<ResultRecord>,
    started: Instant,
) -> RunArtifact {
    RunArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        spec_hash: spec_hash(spec),
        spec: spec.clone(),
        environment: EnvironmentFingerprint::current(),
        created_utc: now_utc(),
        wall_clock_s: started.elapsed().as_secs_f64(),
        records,
    }
}

/// Train on a task's train split and evaluate on its test split.
pub fn run_within_corpus(ctx: &RunContext, spec: &RunSpec) -> Result<RunArtifact> {
    let started = Instant::now();
    spec.validate()?;
    if spec.protocol != Protocol::Within {
        return Err(HarnessError::Config(
            "run spec: protocol is not `within`".into(),
        ));
    }
    let run = train_and_eval(ctx, spec, spec.layer, "within", None)?;
    if let Some(root) = &ctx.checkpoints_root {
        std::fs::create_dir_all(root)?;
        save_probe(&run.probe, &[], &root.join(format!("{}.ckpt", spec_hash(spec))))?;
    }
    Ok(finish_artifact(spec, vec![run.record], started))
}

/// Obtain a probe trained on the spec's (within-corpus) train task:
/// loaded from a checkpoint when one exists under the matching spec hash,
/// freshly trained (and checkpointed) otherwise.
fn trained_probe_for(ctx: &RunContext, within_spec: &RunSpec) -> Result<Probe> {
    let hash = spec_hash(within_spec);
    let extractor = ctx.extractor(&within_spec.extractor_id)?;
    if let Some(root) = &ctx.checkpoints_root {
        let path = root.join(format!("{hash}.ckpt"));
        if path.exists() {
            if let Ok((probe, _adapters)) = load_probe(&path) {
                if verify_binding(
                    &probe.binding,
                    &extractor.extractor_id,
                    &extractor.version_hash,
                )
                .is_ok()
                {
                    return Ok(probe);
                }
            }
            // Unusable checkpoint: fall through and retrain.
        }
    }
    let run = train_and_eval(ctx, within_spec, within_spec.layer, "within", None)?;
    if let Some(root) = &ctx.checkpoints_root {
        std::fs::create_dir_all(root)?;
        save_probe(&run.probe, &[], &root.join(format!("{hash}.ckpt")))?;
    }
    Ok(run.probe)
}

/// Train on one corpus, evaluate on another: the target corpus's test
/// labels are filtered to the classes the source space shares, remapped
/// into source indices, and scored with the source task's metric set.
pub fn run_cross_corpus(ctx: &RunContext, spec: &RunSpec) -> Result<RunArtifact> {
    let started = Instant::now();
    spec.validate()?;
    if spec.protocol != Protocol::CrossCorpus {
        return Err(HarnessError::Config(
            "run spec: protocol is not `cross_corpus`".into(),
        ));
    }
    let test_task_id = spec.test_task_id.as_deref().expect("validated");
    let train_task = ctx.task(&spec.task_id)?;
    let test_task = ctx.task(test_task_id)?;
    let train_space = train_task.label_space.as_ref().ok_or_else(|| {
        HarnessError::Config(format!(
            "cross-corpus source task `{}` is not a classification task",
            train_task.task_id
        ))
    })?;
    let test_space = test_task.label_space.as_ref().ok_or_else(|| {
        HarnessError::Config(format!(
            "cross-corpus target task `{}` is not a classification task",
            test_task.task_id
        ))
    })?;
    let mapping = build_label_mapping(train_space, test_space)?;
    let index_map = mapping.index_map();

    let probe = trained_probe_for(ctx, &spec.derived_within())?;
    let extractor = ctx.extractor(&spec.extractor_id)?;
    verify_binding(&probe.binding, &extractor.extractor_id, &extractor.version_hash)?;

    // Filter the target test split to mappable labels, remembering counts.
    let test_manifest = ctx.manifest_for(&test_task.dataset_id)?;
    let all_test = test_manifest.split_samples(Split::Test);
    let original_test_count = all_test.len();
    let mut kept: Vec<&Sample> = Vec::with_capacity(all_test.len());
    let mut y_true: Vec<usize> = Vec::with_capacity(all_test.len());
    for sample in all_test {
        let target_idx = match test_manifest.resolve_for(test_task, sample)? {
            ResolvedLabel::Class(j) => j,
            ResolvedLabel::Scalar(_) => {
                return Err(HarnessError::Run(format!(
                    "cross-corpus target task `{}` produced a scalar label",
                    test_task.task_id
                )))
            }
        };
        if let Some(source_idx) = index_map[target_idx] {
            if source_idx >= train_space.len() {
                return Err(HarnessError::Run(format!(
                    "label harmonization produced out-of-space index {source_idx}"
                )));
            }
            kept.push(sample);
            y_true.push(source_idx);
        }
    }
    if kept.is_empty() {
        return Err(HarnessError::FilterEmptiedSplit(format!(
            "label harmonization onto `{}` left no scorable samples in the `{}` test split",
            train_task.task_id, test_task.task_id
        )));
    }

    let assembled = assemble_samples(
        ctx,
        extractor,
        test_manifest,
        test_task,
        &spec.layer,
        &kept,
    )?;
    // The assembled targets are in the *target* space; score against the
    // remapped source-space labels instead.
    let y_pred = predict_classes(&probe, &assembled.set.features, spec.train.batch_size)?;
    let cm = confusion(&y_true, &y_pred, train_space.len())?;
    let pair_id = format!("{}->{}", train_task.task_id, test_task.task_id);
    let mut metrics = classification_report(&pair_id, train_space.classes(), &cm, &train_task.metrics)?;
    metrics.notes.push(format!(
        "label harmonization kept {} of {} target classes; UA is averaged over the filtered test class set",
        mapping.pairs.len(),
        test_space.len(),
    ));

    let success = RecordSuccess {
        metrics,
        history: HistorySummary::untrained(),
        train_count: 0,
        validation_count: 0,
        test_count: assembled.set.len(),
        cross: Some(CrossCorpusInfo {
            train_task_id: train_task.task_id.clone(),
            test_task_id: test_task.task_id.clone(),
            original_test_count,
            filtered_test_count: kept.len(),
            dropped_classes: mapping.dropped_target_classes.clone(),
            mapped_pairs: mapping.pairs.clone(),
        }),
        fusion: None,
        lora: None,
        delta_vs_baseline: None,
    };
    let record = ResultRecord {
        spec_hash: spec_hash(spec),
        protocol: spec.protocol,
        task_id: test_task.task_id.clone(),
        extractor_id: spec.extractor_id.clone(),
        layer: spec.layer.canonical(),
        layer_index: None,
        variant: "cross".to_string(),
        seed: spec.seed,
        config_hash: ctx.config_hash.clone(),
        outcome: RecordOutcome::Success(success),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(finish_artifact(spec, vec![record], started))
}

/// Dispatch a spec to its protocol driver.
pub fn execute(ctx: &RunContext, spec: &RunSpec) -> Result<RunArtifact> {
    spec.validate()?;
    match spec.protocol {
        Protocol::Within => run_within_corpus(ctx, spec),
        Protocol::CrossCorpus => run_cross_corpus(ctx, spec),
        Protocol::LayerSweep => run_layer_sweep(ctx, spec),
        Protocol::FusionCompare => run_fusion_compare(ctx, spec),
        Protocol::LoraCompare => run_lora_compare(ctx, spec),
    }
}

/// Constant-prediction baseline: predict the train-target mean everywhere.
/// Its MAE equals the mean absolute deviation of the test targets around
/// the train mean — a closed-form floor for regression tasks.
pub fn mean_baseline_report(
    task_id: &str,
    train_targets: &[f64],
    test_targets: &[f64],
) -> Result<MetricReport> {
    if train_targets.is_empty() {
        return Err(HarnessError::Run("empty train targets for baseline".into()));
    }
    let mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    let preds = vec![mean; test_targets.len()];
    let mut report = regression_report(task_id, test_targets, &preds)?;
    report.notes.push("constant mean-of-train baseline".into());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{ready_manifest, register, SyntheticCorpusSpec};
    use crate::features::synth_adapters::{
        make_synthetic_extractor, make_synthetic_vector_extractor,
    };
    use crate::registry::TaskRegistry;
    use tempfile::tempdir;

    /// Small, fast spec: narrow probe, enough steps to fit the separable
    /// synthetic corpora.
    fn quick(spec: &mut RunSpec) {
        spec.probe = ProbeSettings::small(16);
        spec.train = TrainSettings {
            lr: 2e-3,
            max_epochs: 12,
            weight_decay: 1e-2,
            batch_size: 16,
        };
    }

    struct Fixture {
        registry: TaskRegistry,
        engine: ExtractionEngine,
        corpora: Vec<(SyntheticCorpusSpec, Manifest)>,
        extractors: Vec<ExtractorSpec>,
    }

    impl Fixture {
        fn new(corpora: &[SyntheticCorpusSpec], extractors: Vec<ExtractorSpec>) -> Self {
            let mut registry = TaskRegistry::builtin();
            let mut pairs = Vec::new();
            for spec in corpora {
                register(&mut registry, spec).unwrap();
                pairs.push((spec.clone(), ready_manifest(spec).unwrap()));
            }
            Fixture {
                registry,
                engine: ExtractionEngine::with_default_adapters(),
                corpora: pairs,
                extractors,
            }
        }

        fn context<'a>(&'a self, cache: &'a FeatureCache) -> RunContext<'a> {
            let mut ctx = RunContext::new(&self.registry, &self.engine, cache);
            for (_, manifest) in &self.corpora {
                ctx.add_manifest(manifest.clone());
            }
            for e in &self.extractors {
                ctx.add_extractor(e.clone());
            }
            ctx
        }
    }

    #[test]
    fn spec_hash_is_stable_and_sensitive() {
        let a = RunSpec::within("t", "x", LayerSpec::LastHidden, 7);
        let b = RunSpec::within("t", "x", LayerSpec::LastHidden, 7);
        assert_eq!(spec_hash(&a), spec_hash(&b));
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(spec_hash(&a), spec_hash(&c));
        let mut d = a.clone();
        d.train.lr *= 2.0;
        assert_ne!(spec_hash(&a), spec_hash(&d));
    }

    #[test]
    fn spec_validation_rejects_misplaced_fields() {
        let mut spec = RunSpec::within("t", "x", LayerSpec::LastHidden, 1);
        spec.stride = Some(3);
        assert!(spec.validate().is_err());

        let mut spec = RunSpec::sweep("t", "x", 0, 1);
        assert!(spec.validate().is_err());
        spec.stride = None;
        assert!(spec.validate().is_err());

        let mut spec = RunSpec::fusion("t", "x", 1);
        spec.layer = LayerSpec::AllLayers;
        assert!(spec.validate().is_err());

        let mut spec = RunSpec::within("t", "x", LayerSpec::LastHidden, 1);
        spec.test_task_id = Some("u".into());
        assert!(spec.validate().is_err());

        let mut spec = RunSpec::cross("t", "u", "x", LayerSpec::LastHidden, 1);
        assert!(spec.validate().is_ok());
        spec.test_task_id = None;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn within_corpus_trains_and_records() {
        let corpus = SyntheticCorpusSpec::classification("synthetic3", &["calm", "angry", "sad"], 90, 5);
        let extractor = make_synthetic_extractor(5, 16, 3);
        let extractor_id = extractor.extractor_id.clone();
        let informative = 1; // num_layers - 2
        let fx = Fixture::new(&[corpus.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ckpt_dir = tempdir().unwrap();
        let mut ctx = fx.context(&cache);
        ctx.checkpoints_root = Some(ckpt_dir.path().to_path_buf());

        let mut spec = RunSpec::within(
            &corpus.task_id(),
            &extractor_id,
            LayerSpec::Index(informative),
            5,
        );
        quick(&mut spec);
        spec.train.max_epochs = 30;
        let artifact = run_within_corpus(&ctx, &spec).unwrap();
        assert_eq!(artifact.records.len(), 1);
        let record = &artifact.records[0];
        assert_eq!(record.variant, "within");
        let success = record.outcome.success().expect("run succeeded");
        let wa = success.metrics.value(MetricId::Wa).unwrap();
        assert!(wa >= 0.9, "separable corpus should be learnable, WA={wa}");
        assert_eq!(success.train_count + success.test_count, 90);
        assert!(success.history.epochs_run > 0);
        // A checkpoint lands under the spec hash when a root is configured.
        assert!(ckpt_dir
            .path()
            .join(format!("{}.ckpt", artifact.spec_hash))
            .exists());
    }

    #[test]
    fn rerun_reproduces_metrics_exactly() {
        let corpus = SyntheticCorpusSpec::classification("synthetic3", &["calm", "angry", "sad"], 60, 6);
        let extractor = make_synthetic_extractor(6, 16, 3);
        let extractor_id = extractor.extractor_id.clone();
        let fx = Fixture::new(&[corpus.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ctx = fx.context(&cache);

        let mut spec = RunSpec::within(&corpus.task_id(), &extractor_id, LayerSpec::Index(1), 6);
        quick(&mut spec);
        let a = run_within_corpus(&ctx, &spec).unwrap();
        let b = run_within_corpus(&ctx, &spec).unwrap();
        for id in [MetricId::Wa, MetricId::Ua, MetricId::Wf1] {
            let va = a.records[0].metric(id).unwrap();
            let vb = b.records[0].metric(id).unwrap();
            assert!((va - vb).abs() < 1e-6, "{id:?}: {va} vs {vb}");
        }
    }

    #[test]
    fn results_store_appends_and_dedups() {
        let corpus = SyntheticCorpusSpec::classification("synthetic2", &["calm", "angry"], 40, 7);
        let extractor = make_synthetic_extractor(7, 12, 2);
        let extractor_id = extractor.extractor_id.clone();
        let fx = Fixture::new(&[corpus.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ctx = fx.context(&cache);

        let mut spec = RunSpec::within(&corpus.task_id(), &extractor_id, LayerSpec::Index(0), 7);
        quick(&mut spec);
        let artifact = run_within_corpus(&ctx, &spec).unwrap();

        let store_dir = tempdir().unwrap();
        let store = ResultsStore::new(store_dir.path());
        assert!(!store.contains(&artifact.spec_hash));
        store.append(&artifact, false).unwrap();
        assert!(store.contains(&artifact.spec_hash));
        let err = store.append(&artifact, false).unwrap_err();
        assert!(matches!(err, HarnessError::RunExists { .. }));
        store.append(&artifact, true).unwrap();

        let loaded = store.load(&artifact.spec_hash).unwrap();
        assert_eq!(loaded.spec, artifact.spec);
        assert_eq!(
            loaded.records[0].metric(MetricId::Wa),
            artifact.records[0].metric(MetricId::Wa)
        );
        assert_eq!(store.load_all().unwrap().len(), 1);
    }

    #[test]
    fn regression_within_and_mean_baseline() {
        let corpus = SyntheticCorpusSpec::regression("synthreg", 60, 8);
        let extractor = make_synthetic_vector_extractor(8, 16);
        let extractor_id = extractor.extractor_id.clone();
        let fx = Fixture::new(&[corpus.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ctx = fx.context(&cache);

        let mut spec = RunSpec::within(
            &corpus.task_id(),
            &extractor_id,
            LayerSpec::FixedVector,
            8,
        );
        quick(&mut spec);
        spec.train.lr = LR_HANDCRAFTED * 10.0;
        let artifact = run_within_corpus(&ctx, &spec).unwrap();
        let mae = artifact.records[0].metric(MetricId::Mae).unwrap();
        assert!(mae.is_finite() && mae >= 0.0);

        // Closed-form check of the constant-mean baseline.
        let train = [0.0, 0.5, 1.0, 0.5];
        let test = [0.25, 0.75];
        let report = mean_baseline_report("synthreg", &train, &test).unwrap();
        let expected = (0.25f64 - 0.5).abs().max(0.0) * 0.5 + (0.75f64 - 0.5).abs() * 0.5;
        assert!((report.value(MetricId::Mae).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_corpus_filters_and_remaps() {
        let train_corpus =
            crate::corpus::synthetic::corpus_from_id("synthetic-iemocap4", Some(120), 9).unwrap();
        let test_corpus = crate::corpus::synthetic::corpus_from_id("synthetic-msp5", Some(100), 10).unwrap();
        let extractor = make_synthetic_extractor(9, 16, 3);
        let extractor_id = extractor.extractor_id.clone();
        let fx = Fixture::new(&[train_corpus.clone(), test_corpus.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ckpt_dir = tempdir().unwrap();
        let mut ctx = fx.context(&cache);
        ctx.checkpoints_root = Some(ckpt_dir.path().to_path_buf());

        let mut spec = RunSpec::cross(
            &train_corpus.task_id(),
            &test_corpus.task_id(),
            &extractor_id,
            LayerSpec::Index(1),
            9,
        );
        quick(&mut spec);
        let artifact = run_cross_corpus(&ctx, &spec).unwrap();
        let record = &artifact.records[0];
        let success = record.outcome.success().unwrap();
        let info = success.cross.as_ref().unwrap();
        assert_eq!(info.dropped_classes, vec!["disgust".to_string()]);
        assert!(info.filtered_test_count < info.original_test_count);
        // Exactly the disgust samples of the target test split are dropped.
        let test_manifest = &fx.corpora[1].1;
        let disgust_in_test = test_manifest
            .split_samples(Split::Test)
            .iter()
            .filter(|s| s.class_label(&test_corpus.task_id()) == Some("disgust"))
            .count();
        assert!(disgust_in_test > 0, "fixture must exercise the filter");
        assert_eq!(
            info.original_test_count - info.filtered_test_count,
            disgust_in_test
        );
        assert!(success
            .metrics
            .notes
            .iter()
            .any(|n| n.contains("filtered test class set")));
        // Metrics are scored in the 4-class source space.
        assert_eq!(success.metrics.per_class.len(), 4);

        // A checkpoint was produced for the derived within-corpus run and a
        // second cross run reuses it (bitwise-equal metrics).
        let within_hash = spec_hash(&spec.derived_within());
        assert!(ckpt_dir.path().join(format!("{within_hash}.ckpt")).exists());
        let again = run_cross_corpus(&ctx, &spec).unwrap();
        assert_eq!(
            again.records[0].metric(MetricId::Wa),
            artifact.records[0].metric(MetricId::Wa)
        );
    }

    #[test]
    fn cross_corpus_identity_spaces_keep_all_samples() {
        let a = SyntheticCorpusSpec::classification("synthcross-a", &["calm", "angry"], 40, 11);
        let b = SyntheticCorpusSpec::classification("synthcross-b", &["calm", "angry"], 30, 12);
        let extractor = make_synthetic_extractor(11, 12, 2);
        let extractor_id = extractor.extractor_id.clone();
        let fx = Fixture::new(&[a.clone(), b.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ctx = fx.context(&cache);

        let mut spec = RunSpec::cross(&a.task_id(), &b.task_id(), &extractor_id, LayerSpec::Index(0), 11);
        quick(&mut spec);
        let artifact = run_cross_corpus(&ctx, &spec).unwrap();
        let info = artifact.records[0]
            .outcome
            .success()
            .unwrap()
            .cross
            .as_ref()
            .unwrap()
            .clone();
        assert_eq!(info.original_test_count, info.filtered_test_count);
        assert!(info.dropped_classes.is_empty());
    }

    #[test]
    fn cross_corpus_single_class_overlap() {
        let a = SyntheticCorpusSpec::classification("synthcross-c", &["calm", "angry"], 40, 13);
        let b = SyntheticCorpusSpec::classification("synthcross-d", &["calm", "bored"], 30, 14);
        let extractor = make_synthetic_extractor(13, 12, 2);
        let extractor_id = extractor.extractor_id.clone();
        let fx = Fixture::new(&[a.clone(), b.clone()], vec![extractor]);
        let cache_dir = tempdir().unwrap();
        let cache = FeatureCache::new(cache_dir.path());
        let ctx = fx.context(&cache);

        let mut spec = RunSpec::cross(&a.task_id(), &b.task_id(), &extractor_id, LayerSpec::Index(0), 13);
        quick(&mut spec);
        let artifact = run_cross_corpus(&ctx, &spec).unwrap();
        let success = artifact.records[0].outcome.success().unwrap();
        let info = success.cross.as_ref().unwrap();
        assert_eq!(info.mapped_pairs.len(), 1);
        assert_eq!(info.dropped_classes, vec!["bored".to_string()]);
        // UA averages over the single surviving class.
        assert_eq!(
            success.metrics.excluded_empty_classes.len(),
            1,
            "the unmatched source class is empty in the filtered test set"
        );
    }
}
