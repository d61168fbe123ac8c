//! Command-line front end.
//!
//! Verbs cover the full harness lifecycle: `manifest` builds dataset
//! manifests, `extract` warms the feature cache, `run`/`cross`/`sweep`/
//! `fusion`/`lora` execute evaluation protocols into the results store,
//! `report` renders a leaderboard from stored records, and `verify` checks
//! a manifest against recorded split counts.
//!
//! Exit codes: 0 success, 2 configuration problems (including bad flags),
//! 3 data/manifest problems, 4 run-time evaluation failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::config::{self, HarnessConfig};
use crate::corpus::{
    build_manifest, synthetic, verify_manifest, Manifest, Split, SplitPolicy,
};
use crate::error::{HarnessError, Result};
use crate::features::backbone::make_backbone_extractor;
use crate::features::catalog as extractor_catalog;
use crate::features::synth_adapters::{
    make_synthetic_extractor, make_synthetic_extractor_with_informative,
    make_synthetic_vector_extractor,
};
use crate::features::{
    CacheEvent, ExtractionEngine, ExtractorFamily, ExtractorSpec, FeatureCache, LayerSpec,
};
use crate::protocols::{
    execute, spec_hash, LoraSettings, Protocol, RecordOutcome, ResultRecord, ResultsStore,
    RunArtifact, RunContext, RunSpec, TrainSettings,
};
use crate::registry::TaskRegistry;
use crate::report::{build_leaderboard, LeaderboardFilter};

/// Version tag expected at the top of grid files.
pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "paralbench",
    version,
    about = "Speech-trait evaluation harness: extract features, train probes, report results",
    max_term_width = 100
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Configuration file (overrides the PARALBENCH_CONFIG environment variable).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed override for this invocation (default: the configured seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Feature-cache directory override.
    #[arg(long, global = true, value_name = "DIR")]
    cache_root: Option<PathBuf>,
    /// Results-store directory override.
    #[arg(long, global = true, value_name = "DIR")]
    results_root: Option<PathBuf>,
    /// Overwrite existing outputs and re-run stored specs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a dataset manifest and write it as JSONL.
    Manifest(ManifestArgs),
    /// Extract features for a manifest's samples, warming the cache.
    Extract(ExtractArgs),
    /// Train and evaluate within one corpus (single run or a grid file).
    Run(RunArgs),
    /// Train on one corpus, evaluate on another with harmonized labels.
    Cross(CrossArgs),
    /// Probe every hidden layer of an extractor at a stride.
    Sweep(SweepArgs),
    /// Compare learned layer fusion against the last hidden layer.
    Fusion(FusionArgs),
    /// Compare a frozen backbone against low-rank adapter tuning.
    Lora(LoraArgs),
    /// Render a leaderboard from stored results.
    Report(ReportArgs),
    /// Check a manifest's split counts against the recorded reference.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct ManifestArgs {
    /// Dataset id (synthetic corpora are generated, real corpora load from --raw-root).
    #[arg(long)]
    dataset: String,
    /// Root directory of the raw dataset copy (real corpora only).
    #[arg(long, value_name = "DIR")]
    raw_root: Option<PathBuf>,
    /// Sample count override for synthetic corpora.
    #[arg(long)]
    samples: Option<usize>,
    /// Split policy (default: the dataset's own layout or catalog default).
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Train fraction for random split policies.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Grouping metadata key for group-random splits (e.g. speaker).
    #[arg(long)]
    group_key: Option<String>,
    /// Output manifest path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    /// Use the dataset's own partition files.
    Official,
    /// Seeded random split by sample.
    Random,
    /// Seeded random split by metadata group (no group straddles splits).
    GroupRandom,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Manifest to extract features for.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Extractor id.
    #[arg(long)]
    extractor: String,
    /// Layer selector: last_hidden, all, index:<k>, or fixed_vector.
    #[arg(long, alias = "layers", default_value = "last_hidden")]
    layer: String,
    /// Restrict extraction to one split (train, validation, test, or all).
    #[arg(long, default_value = "all")]
    split: String,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Manifest files backing the tasks (repeatable).
    #[arg(long, value_name = "FILE")]
    manifest: Vec<PathBuf>,
    /// Task id to train and evaluate on.
    #[arg(long)]
    task: Option<String>,
    /// Extractor id.
    #[arg(long)]
    extractor: Option<String>,
    /// Layer selector (default: last_hidden; fixed_vector for vector extractors).
    #[arg(long)]
    layer: Option<String>,
    /// TOML grid file: run every entry, isolating failures.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["task", "extractor", "layer"])]
    grid: Option<PathBuf>,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Debug, Args)]
struct CrossArgs {
    /// Manifest files backing both tasks (repeatable).
    #[arg(long, value_name = "FILE")]
    manifest: Vec<PathBuf>,
    /// Task to train on (its label space drives the evaluation).
    #[arg(long)]
    task: String,
    /// Task whose test split is evaluated after label harmonization.
    #[arg(long)]
    test_task: String,
    /// Extractor id.
    #[arg(long)]
    extractor: String,
    /// Layer selector (default: last_hidden; fixed_vector for vector extractors).
    #[arg(long)]
    layer: Option<String>,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Manifest files backing the task (repeatable).
    #[arg(long, value_name = "FILE")]
    manifest: Vec<PathBuf>,
    /// Task id to train and evaluate on.
    #[arg(long)]
    task: String,
    /// Extractor id (must expose layered hidden states).
    #[arg(long)]
    extractor: String,
    /// Probe every stride-th layer (the last hidden layer is always included).
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Debug, Args)]
struct FusionArgs {
    /// Manifest files backing the task (repeatable).
    #[arg(long, value_name = "FILE")]
    manifest: Vec<PathBuf>,
    /// Task id to train and evaluate on.
    #[arg(long)]
    task: String,
    /// Extractor id (must expose layered hidden states).
    #[arg(long)]
    extractor: String,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Debug, Args)]
struct LoraArgs {
    /// Manifest files backing the task (repeatable).
    #[arg(long, value_name = "FILE")]
    manifest: Vec<PathBuf>,
    /// Task id to train and evaluate on.
    #[arg(long)]
    task: String,
    /// Extractor id (must be an adaptable backbone).
    #[arg(long)]
    extractor: String,
    /// Layer selector for the probed representation (default: last_hidden).
    #[arg(long)]
    layer: Option<String>,
    /// Adapter rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Adapter scaling numerator (effective scale is alpha / rank).
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Keep only these task ids (repeatable; default: all).
    #[arg(long)]
    task: Vec<String>,
    /// Keep only these extractor ids (repeatable; default: all).
    #[arg(long)]
    extractor: Vec<String>,
    /// Keep only these protocols (repeatable; default: all).
    #[arg(long)]
    protocol: Vec<String>,
    /// Keep only these record variants (repeatable; default: all).
    #[arg(long)]
    variant: Vec<String>,
    /// Write the rendering to a file instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// Fixed-width table with three-decimal values and rank markers.
    Text,
    /// Tab-separated values at full precision.
    Tsv,
    /// Comma-separated values at full precision.
    Csv,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Manifest to verify.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Dataset id whose recorded counts apply (default: the manifest's own).
    #[arg(long)]
    dataset: Option<String>,
}

/// Training and probe overrides shared by every protocol verb.
#[derive(Debug, Default, Args)]
struct TuneArgs {
    /// Learning rate override.
    #[arg(long)]
    lr: Option<f64>,
    /// Maximum training epochs override.
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size override.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Decoupled weight-decay override.
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Probe width override (projection and encoder dimension).
    #[arg(long)]
    probe_dim: Option<usize>,
    /// Probe encoder depth override.
    #[arg(long)]
    encoder_layers: Option<usize>,
    /// Probe attention-head count override.
    #[arg(long)]
    attention_heads: Option<usize>,
}

impl TuneArgs {
    fn apply(&self, spec: &mut RunSpec) {
        if let Some(v) = self.lr {
            spec.train.lr = v;
        }
        if let Some(v) = self.epochs {
            spec.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            spec.train.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            spec.train.weight_decay = v;
        }
        if let Some(v) = self.probe_dim {
            spec.probe.d = v;
        }
        if let Some(v) = self.encoder_layers {
            spec.probe.encoder_layers = v;
        }
        if let Some(v) = self.attention_heads {
            spec.probe.attention_heads = v;
        }
    }
}

/// Parse argv and run the selected command, printing to `out`.
/// Returns the process exit code instead of exiting, so the dispatcher
/// stays testable in-process.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is
            // a usage problem.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point for the binary: wires argv to stdout and flushes before
/// handing back the exit code.
pub fn main() -> i32 {
    let mut stdout = std::io::stdout().lock();
    let code = run_from(std::env::args_os(), &mut stdout);
    let _ = stdout.flush();
    code
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut session = Session::new(&cli.global)?;
    match cli.command {
        Command::Manifest(args) => cmd_manifest(&mut session, &args, out),
        Command::Extract(args) => cmd_extract(&mut session, &args, out),
        Command::Run(args) => cmd_run(&mut session, &args, out),
        Command::Cross(args) => cmd_cross(&mut session, &args, out),
        Command::Sweep(args) => cmd_sweep(&mut session, &args, out),
        Command::Fusion(args) => cmd_fusion(&mut session, &args, out),
        Command::Lora(args) => cmd_lora(&mut session, &args, out),
        Command::Report(args) => cmd_report(&session, &args, out),
        Command::Verify(args) => cmd_verify(&session, &args, out),
    }
}

/// Resolved configuration plus the long-lived services every command uses.
struct Session {
    config: HarnessConfig,
    config_hash: String,
    registry: TaskRegistry,
    engine: ExtractionEngine,
    cache: FeatureCache,
    store: ResultsStore,
    seed: u64,
    force: bool,
}

impl Session {
    fn new(global: &GlobalArgs) -> Result<Self> {
        let resolved = config::resolve_config(global.config.as_deref())?;
        let mut cfg = resolved.config;
        if let Some(dir) = &global.cache_root {
            cfg.cache_root = dir.clone();
        }
        if let Some(dir) = &global.results_root {
            cfg.results_root = dir.clone();
        }
        let config_hash = config::config_hash(&cfg);
        let mut registry = TaskRegistry::builtin();
        if let Some(catalog) = &cfg.task_catalog {
            registry.load_catalog_file(catalog)?;
        }
        Ok(Session {
            config_hash,
            registry,
            engine: ExtractionEngine::with_default_adapters(),
            cache: FeatureCache::new(&cfg.cache_root),
            store: ResultsStore::new(&cfg.results_root),
            seed: global.seed.unwrap_or(cfg.default_seed),
            force: global.force,
            config: cfg,
        })
    }

    /// Synthetic corpora carry their task definitions with them; make sure
    /// the registry knows a dataset before anything looks its tasks up.
    fn register_synthetic(&mut self, dataset_id: &str) -> Result<()> {
        if !self.registry.has_dataset(dataset_id) {
            if let Some(spec) = synthetic::corpus_from_id(dataset_id, None, self.seed) {
                synthetic::register(&mut self.registry, &spec)?;
            }
        }
        Ok(())
    }

    fn load_manifest(&mut self, path: &Path) -> Result<Manifest> {
        let manifest = Manifest::read_jsonl(path)?;
        self.register_synthetic(&manifest.dataset_id.clone())?;
        Ok(manifest)
    }

    fn load_manifests(&mut self, paths: &[PathBuf]) -> Result<Vec<Manifest>> {
        paths.iter().map(|p| self.load_manifest(p)).collect()
    }

    /// Raw-data root for a dataset: explicit flag wins, then the config map.
    fn raw_root_for(&self, dataset_id: &str, explicit: Option<&Path>) -> Option<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| self.config.raw_roots.get(dataset_id).cloned())
    }

    fn context<'a>(
        &'a self,
        manifests: Vec<Manifest>,
        extractors: Vec<ExtractorSpec>,
    ) -> RunContext<'a> {
        let mut ctx = RunContext::new(&self.registry, &self.engine, &self.cache);
        ctx.checkpoints_root = Some(self.config.checkpoints_root.clone());
        ctx.config_hash = Some(self.config_hash.clone());
        for manifest in manifests {
            ctx.add_manifest(manifest);
        }
        for spec in extractors {
            ctx.add_extractor(spec);
        }
        ctx
    }

    /// Validate, dedup against the store, execute, persist, and print.
    /// Returns None when the spec was already stored and --force is absent.
    fn execute_spec(
        &self,
        ctx: &RunContext<'_>,
        spec: &RunSpec,
        out: &mut dyn Write,
    ) -> Result<Option<RunArtifact>> {
        spec.validate()?;
        let hash = spec_hash(spec);
        if !self.force && self.store.contains(&hash) {
            writeln!(
                out,
                "spec {} already stored; skipping (--force re-runs)",
                &hash[..12]
            )?;
            return Ok(None);
        }
        let artifact = execute(ctx, spec)?;
        let path = self.store.append(&artifact, self.force)?;
        print_artifact(&artifact, out)?;
        writeln!(out, "stored {}", path.display())?;
        Ok(Some(artifact))
    }
}

// ---------------------------------------------------------------------------
// argument helpers

/// Layer selector with a CLI-friendly `all` alias.
fn parse_layer(text: &str) -> Result<LayerSpec> {
    match text {
        "all" => Ok(LayerSpec::AllLayers),
        other => LayerSpec::parse(other),
    }
}

fn parse_protocol(text: &str) -> Result<Protocol> {
    match text {
        "within" => Ok(Protocol::Within),
        "cross_corpus" => Ok(Protocol::CrossCorpus),
        "layer_sweep" => Ok(Protocol::LayerSweep),
        "fusion_compare" => Ok(Protocol::FusionCompare),
        "lora_compare" => Ok(Protocol::LoraCompare),
        other => Err(HarnessError::Config(format!(
            "unknown protocol `{other}` (expected within, cross_corpus, layer_sweep, \
             fusion_compare, or lora_compare)"
        ))),
    }
}

/// Resolve an extractor id: the seeded synthetic families are parsed out of
/// the id itself, everything else must be a roster entry.
pub fn resolve_extractor(id: &str) -> Result<ExtractorSpec> {
    if let Some(spec) = parse_seeded_extractor_id(id) {
        return Ok(spec);
    }
    extractor_catalog::find_extractor(id).map(|entry| entry.to_spec())
}

/// Parse `prefix` + dash-separated `<key><number>` segments.
fn keyed_numbers(rest: &str, keys: &[char]) -> Option<Vec<u64>> {
    let segments: Vec<&str> = rest.split('-').collect();
    if segments.len() != keys.len() {
        return None;
    }
    segments
        .iter()
        .zip(keys)
        .map(|(segment, key)| {
            let mut chars = segment.chars();
            if chars.next()? != *key {
                return None;
            }
            chars.as_str().parse().ok()
        })
        .collect()
}

fn parse_seeded_extractor_id(id: &str) -> Option<ExtractorSpec> {
    if let Some(rest) = id.strip_prefix("synthetic-") {
        if let Some(v) = keyed_numbers(rest, &['s', 'h', 'l', 'k']) {
            let (seed, h, layers, k) = (v[0], v[1] as usize, v[2] as usize, v[3] as usize);
            if h > 0 && layers >= 1 && k < layers {
                return Some(make_synthetic_extractor_with_informative(seed, h, layers, k));
            }
        }
        if let Some(v) = keyed_numbers(rest, &['s', 'h', 'l']) {
            let (seed, h, layers) = (v[0], v[1] as usize, v[2] as usize);
            if h > 0 && layers >= 1 {
                return Some(make_synthetic_extractor(seed, h, layers));
            }
        }
    }
    if let Some(rest) = id.strip_prefix("synthvec-") {
        if let Some(v) = keyed_numbers(rest, &['s', 'h']) {
            if v[1] > 0 {
                return Some(make_synthetic_vector_extractor(v[0], v[1] as usize));
            }
        }
    }
    if let Some(rest) = id.strip_prefix("backbone-") {
        if let Some(v) = keyed_numbers(rest, &['s', 'h', 'l']) {
            let (seed, h, layers) = (v[0], v[1] as usize, v[2] as usize);
            // The backbone always runs 8-head attention, so the width must
            // split evenly across heads.
            if h > 0 && h % 8 == 0 && layers >= 1 {
                return Some(make_backbone_extractor(seed, h, layers));
            }
        }
    }
    None
}

/// Default layer for a directly-requested run: vector extractors only
/// support their fixed vector; everything else probes the last hidden layer.
fn default_layer(extractor: &ExtractorSpec) -> LayerSpec {
    if extractor.family == ExtractorFamily::HandcraftedVector {
        LayerSpec::FixedVector
    } else {
        LayerSpec::LastHidden
    }
}

/// Vector features skip the probe's transformer encoder and train at the
/// lower learning rate; layered features use the deep defaults.
fn default_training(extractor: &ExtractorSpec) -> TrainSettings {
    if extractor.family == ExtractorFamily::HandcraftedVector {
        TrainSettings::handcrafted()
    } else {
        TrainSettings::deep()
    }
}

fn layer_from_flag(flag: Option<&str>, extractor: &ExtractorSpec) -> Result<LayerSpec> {
    match flag {
        Some(text) => parse_layer(text),
        None => Ok(default_layer(extractor)),
    }
}

// ---------------------------------------------------------------------------
// output helpers

fn short_hash(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

fn print_artifact(artifact: &RunArtifact, out: &mut dyn Write) -> Result<()> {
    writeln!(
        out,
        "spec {} {} task={} extractor={} seed={} ({:.2}s)",
        short_hash(&artifact.spec_hash),
        artifact.spec.protocol.as_str(),
        artifact.spec.task_id,
        artifact.spec.extractor_id,
        artifact.spec.seed,
        artifact.wall_clock_s
    )?;
    for record in &artifact.records {
        writeln!(out, "  {}", record_line(record))?;
    }
    Ok(())
}

fn record_line(record: &ResultRecord) -> String {
    let head = format!("{:<12} layer={:<14}", record.variant, record.layer);
    match &record.outcome {
        RecordOutcome::Success(s) => {
            let mut parts: Vec<String> = s
                .metrics
                .values
                .iter()
                .map(|(id, v)| format!("{}={:.4}", id.as_str(), v))
                .collect();
            if let Some(delta) = &s.delta_vs_baseline {
                for (id, v) in delta {
                    parts.push(format!("d{}={:+.4}", id.as_str(), v));
                }
            }
            if let Some(lora) = &s.lora {
                let unchanged = lora.backbone_checksum_before == lora.backbone_checksum_after;
                parts.push(format!(
                    "[adapter_params={} trainable={} backbone_{}]",
                    lora.adapter_parameter_count,
                    lora.trainable_parameter_count,
                    if unchanged { "unchanged" } else { "CHANGED" }
                ));
            }
            parts.push(format!(
                "[train={} test={} epochs={}]",
                s.train_count, s.test_count, s.history.epochs_run
            ));
            format!("{head} {}", parts.join(" "))
        }
        RecordOutcome::Failed { category, error } => {
            format!("{head} FAILED [{category}] {error}")
        }
        RecordOutcome::Skipped { reason } => format!("{head} SKIPPED: {reason}"),
    }
}

// ---------------------------------------------------------------------------
// commands

fn cmd_manifest(session: &mut Session, args: &ManifestArgs, out: &mut dyn Write) -> Result<()> {
    if args.out.exists() && !session.force {
        return Err(HarnessError::Config(format!(
            "output `{}` exists (--force overwrites)",
            args.out.display()
        )));
    }
    session.register_synthetic(&args.dataset)?;
    let policy = match args.policy {
        None => None,
        Some(PolicyArg::Official) => Some(SplitPolicy::Official),
        Some(PolicyArg::Random) => Some(SplitPolicy::RandomRatio {
            train_fraction: args.train_fraction,
            seed: session.seed,
        }),
        Some(PolicyArg::GroupRandom) => {
            let group_key = args.group_key.clone().ok_or_else(|| {
                HarnessError::Config("group-random splits need --group-key".into())
            })?;
            Some(SplitPolicy::GroupRandom {
                group_key,
                train_fraction: args.train_fraction,
                seed: session.seed,
            })
        }
    };
    let raw_root = session.raw_root_for(&args.dataset, args.raw_root.as_deref());
    let manifest = build_manifest(
        &session.registry,
        &args.dataset,
        raw_root.as_deref(),
        policy,
        args.samples,
        session.seed,
    )?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    manifest.write_jsonl(&args.out)?;
    let counts = manifest.counts();
    writeln!(
        out,
        "wrote {} (dataset {}: train={} validation={} test={} unassigned={})",
        args.out.display(),
        manifest.dataset_id,
        counts.train,
        counts.validation,
        counts.test,
        manifest.unassigned_count()
    )?;
    if let Ok(dataset) = session.registry.dataset(&manifest.dataset_id) {
        if let Some(expected) = &dataset.expected_counts {
            let report = verify_manifest(&manifest, expected);
            writeln!(out, "{report}")?;
            if !report.pass {
                return Err(HarnessError::CountMismatch {
                    dataset: manifest.dataset_id.clone(),
                });
            }
        }
    }
    Ok(())
}

fn cmd_extract(session: &mut Session, args: &ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = session.load_manifest(&args.manifest)?;
    let extractor = resolve_extractor(&args.extractor)?;
    let layer = parse_layer(&args.layer)?;
    let samples: Vec<&crate::corpus::Sample> = if args.split == "all" {
        manifest.samples.iter().collect()
    } else {
        manifest.split_samples(Split::parse(&args.split)?)
    };
    if samples.is_empty() {
        return Err(HarnessError::InvalidManifest(format!(
            "no samples in split `{}` of `{}`",
            args.split, manifest.dataset_id
        )));
    }

    let (mut hits, mut misses, mut reextracted) = (0u64, 0u64, 0u64);
    let mut first_shape: Option<(String, Vec<usize>)> = None;
    for sample in samples {
        let (record, event) =
            session
                .cache
                .get_or_extract(&session.engine, &extractor, sample, &layer)?;
        match event {
            CacheEvent::Hit => hits += 1,
            CacheEvent::Miss => misses += 1,
            CacheEvent::Reextracted => reextracted += 1,
        }
        if first_shape.is_none() {
            first_shape = Some((record.sample_id.clone(), record.shape.clone()));
        }
    }
    let total = hits + misses + reextracted;
    writeln!(
        out,
        "extracted {total} records for {} @ {}: {hits} hits, {misses} misses, \
         {reextracted} reextracted",
        extractor.extractor_id,
        layer.canonical()
    )?;
    if let Some((sample_id, shape)) = first_shape {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        writeln!(
            out,
            "payload shape ({}) for sample {sample_id}",
            dims.join(", ")
        )?;
    }
    writeln!(out, "cache root {}", session.cache.root().display())?;
    Ok(())
}

fn cmd_run(session: &mut Session, args: &RunArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(grid_path) = &args.grid {
        return cmd_run_grid(session, args, grid_path, out);
    }
    let (task, extractor_id) = match (&args.task, &args.extractor) {
        (Some(t), Some(e)) => (t.clone(), e.clone()),
        _ => {
            return Err(HarnessError::Config(
                "run needs --task and --extractor (or --grid FILE)".into(),
            ))
        }
    };
    let manifests = session.load_manifests(&args.manifest)?;
    let extractor = resolve_extractor(&extractor_id)?;
    let layer = layer_from_flag(args.layer.as_deref(), &extractor)?;
    let mut spec = RunSpec::within(&task, &extractor.extractor_id, layer, session.seed);
    spec.train = default_training(&extractor);
    args.tune.apply(&mut spec);
    let ctx = session.context(manifests, vec![extractor]);
    session.execute_spec(&ctx, &spec, out)?;
    Ok(())
}

fn cmd_run_grid(
    session: &mut Session,
    args: &RunArgs,
    grid_path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let text = std::fs::read_to_string(grid_path)?;
    let grid: GridFile = toml::from_str(&text)?;
    if grid.version != GRID_VERSION {
        return Err(HarnessError::InvalidGrid(format!(
            "grid version {} unsupported (expected {GRID_VERSION})",
            grid.version
        )));
    }
    if grid.runs.is_empty() {
        return Err(HarnessError::InvalidGrid("grid lists no runs".into()));
    }

    // Resolve everything up front so the execution loop only borrows.
    let manifests = session.load_manifests(&args.manifest)?;
    let mut prepared = Vec::with_capacity(grid.runs.len());
    let mut extractors: Vec<ExtractorSpec> = Vec::new();
    for (index, entry) in grid.runs.iter().enumerate() {
        let (spec, extractor) = entry.to_spec(session.seed).map_err(|e| {
            HarnessError::InvalidGrid(format!("run {}: {e}", index + 1))
        })?;
        if !extractors.iter().any(|x| x.extractor_id == extractor.extractor_id) {
            extractors.push(extractor);
        }
        prepared.push(spec);
    }

    let ctx = session.context(manifests, extractors);
    let total = prepared.len();
    let mut failures = 0usize;
    for (index, spec) in prepared.iter().enumerate() {
        writeln!(
            out,
            "[{}/{total}] {} task={} extractor={}",
            index + 1,
            spec.protocol.as_str(),
            spec.task_id,
            spec.extractor_id
        )?;
        if let Err(e) = session.execute_spec(&ctx, spec, out) {
            failures += 1;
            writeln!(out, "  FAILED: {e}")?;
        }
    }
    if failures > 0 {
        return Err(HarnessError::Run(format!(
            "{failures} of {total} grid runs failed"
        )));
    }
    Ok(())
}

fn cmd_cross(session: &mut Session, args: &CrossArgs, out: &mut dyn Write) -> Result<()> {
    let manifests = session.load_manifests(&args.manifest)?;
    let extractor = resolve_extractor(&args.extractor)?;
    let layer = layer_from_flag(args.layer.as_deref(), &extractor)?;
    let mut spec = RunSpec::cross(
        &args.task,
        &args.test_task,
        &extractor.extractor_id,
        layer,
        session.seed,
    );
    spec.train = default_training(&extractor);
    args.tune.apply(&mut spec);
    let ctx = session.context(manifests, vec![extractor]);
    session.execute_spec(&ctx, &spec, out)?;
    Ok(())
}

fn cmd_sweep(session: &mut Session, args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let manifests = session.load_manifests(&args.manifest)?;
    let extractor = resolve_extractor(&args.extractor)?;
    let mut spec = RunSpec::sweep(
        &args.task,
        &extractor.extractor_id,
        args.stride,
        session.seed,
    );
    spec.train = default_training(&extractor);
    args.tune.apply(&mut spec);
    let ctx = session.context(manifests, vec![extractor]);
    session.execute_spec(&ctx, &spec, out)?;
    Ok(())
}

fn cmd_fusion(session: &mut Session, args: &FusionArgs, out: &mut dyn Write) -> Result<()> {
    let manifests = session.load_manifests(&args.manifest)?;
    let extractor = resolve_extractor(&args.extractor)?;
    let mut spec = RunSpec::fusion(&args.task, &extractor.extractor_id, session.seed);
    spec.train = default_training(&extractor);
    args.tune.apply(&mut spec);
    let ctx = session.context(manifests, vec![extractor]);
    session.execute_spec(&ctx, &spec, out)?;
    Ok(())
}

fn cmd_lora(session: &mut Session, args: &LoraArgs, out: &mut dyn Write) -> Result<()> {
    let manifests = session.load_manifests(&args.manifest)?;
    let extractor = resolve_extractor(&args.extractor)?;
    let mut spec = RunSpec::lora_compare(&args.task, &extractor.extractor_id, session.seed);
    if let Some(flag) = args.layer.as_deref() {
        spec.layer = parse_layer(flag)?;
    }
    let defaults = LoraSettings::default();
    spec.lora = Some(LoraSettings {
        rank: args.rank.unwrap_or(defaults.rank),
        alpha: args.alpha.unwrap_or(defaults.alpha),
    });
    spec.train = default_training(&extractor);
    args.tune.apply(&mut spec);
    let ctx = session.context(manifests, vec![extractor]);
    session.execute_spec(&ctx, &spec, out)?;
    Ok(())
}

fn cmd_report(session: &Session, args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let artifacts = session.store.load_all()?;
    let records: Vec<ResultRecord> = artifacts
        .into_iter()
        .flat_map(|artifact| artifact.records)
        .collect();
    let filter = LeaderboardFilter {
        tasks: args.task.clone(),
        extractors: args.extractor.clone(),
        protocols: args
            .protocol
            .iter()
            .map(|p| parse_protocol(p))
            .collect::<Result<Vec<_>>>()?,
        variants: args.variant.clone(),
    };
    let table = build_leaderboard(&records, &filter)?;
    let rendering = match args.format {
        FormatArg::Text => table.render_text(),
        FormatArg::Tsv => table.render_delimited('\t'),
        FormatArg::Csv => table.render_delimited(','),
    };
    match &args.out {
        Some(path) => {
            if path.exists() && !session.force {
                return Err(HarnessError::Config(format!(
                    "output `{}` exists (--force overwrites)",
                    path.display()
                )));
            }
            std::fs::write(path, &rendering)?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => out.write_all(rendering.as_bytes())?,
    }
    Ok(())
}

fn cmd_verify(session: &Session, args: &VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::read_jsonl(&args.manifest)?;
    let dataset_id = args
        .dataset
        .clone()
        .unwrap_or_else(|| manifest.dataset_id.clone());
    let dataset = session.registry.dataset(&dataset_id)?;
    let expected = dataset.expected_counts.as_ref().ok_or_else(|| {
        HarnessError::Config(format!(
            "no recorded split counts for dataset `{dataset_id}`"
        ))
    })?;
    let report = verify_manifest(&manifest, expected);
    writeln!(out, "{report}")?;
    if report.pass {
        Ok(())
    } else {
        Err(HarnessError::CountMismatch {
            dataset: dataset_id,
        })
    }
}

// ---------------------------------------------------------------------------
// grid files

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    version: u32,
    #[serde(default)]
    runs: Vec<GridEntry>,
}

/// One grid run. Protocol-specific fields stay optional; the run spec's
/// own validation rejects combinations that make no sense.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridEntry {
    protocol: String,
    task: String,
    extractor: String,
    #[serde(default)]
    layer: Option<String>,
    #[serde(default)]
    test_task: Option<String>,
    #[serde(default)]
    stride: Option<usize>,
    #[serde(default)]
    rank: Option<usize>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    lr: Option<f64>,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    weight_decay: Option<f64>,
    #[serde(default)]
    probe_dim: Option<usize>,
    #[serde(default)]
    encoder_layers: Option<usize>,
    #[serde(default)]
    attention_heads: Option<usize>,
}

impl GridEntry {
    fn to_spec(&self, default_seed: u64) -> Result<(RunSpec, ExtractorSpec)> {
        let protocol = parse_protocol(&self.protocol)?;
        let extractor = resolve_extractor(&self.extractor)?;
        let seed = self.seed.unwrap_or(default_seed);

        // Sweeps and the fusion comparison pick their own layers and insist
        // on the placeholder; giving them an explicit layer should fail
        // spec validation rather than be silently dropped.
        let explicit_layer = self
            .layer
            .as_deref()
            .map(parse_layer)
            .transpose()?;
        let layer = match protocol {
            Protocol::LayerSweep | Protocol::FusionCompare => {
                explicit_layer.unwrap_or(LayerSpec::LastHidden)
            }
            _ => explicit_layer.unwrap_or_else(|| default_layer(&extractor)),
        };

        let mut spec = RunSpec::within(&self.task, &extractor.extractor_id, layer, seed);
        spec.protocol = protocol;
        spec.test_task_id = self.test_task.clone();
        spec.stride = match protocol {
            Protocol::LayerSweep => Some(self.stride.unwrap_or(1)),
            _ => self.stride,
        };
        let lora_requested = self.rank.is_some() || self.alpha.is_some();
        if protocol == Protocol::LoraCompare || lora_requested {
            let defaults = LoraSettings::default();
            spec.lora = Some(LoraSettings {
                rank: self.rank.unwrap_or(defaults.rank),
                alpha: self.alpha.unwrap_or(defaults.alpha),
            });
        }
        spec.train = default_training(&extractor);
        let tune = TuneArgs {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            probe_dim: self.probe_dim,
            encoder_layers: self.encoder_layers,
            attention_heads: self.attention_heads,
        };
        tune.apply(&mut spec);
        spec.validate()?;
        Ok((spec, extractor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_extractor_ids_round_trip() {
        for id in [
            "synthetic-s7-h16-l12-k9",
            "synthetic-s1-h8-l3-k0",
            "synthvec-s3-h24",
            "backbone-s5-h32-l2",
        ] {
            let spec = resolve_extractor(id).unwrap();
            assert_eq!(spec.extractor_id, id, "id must round-trip");
        }
        // The three-field synthetic form defaults its informative layer.
        let spec = resolve_extractor("synthetic-s2-h16-l6").unwrap();
        assert_eq!(spec.extractor_id, "synthetic-s2-h16-l6-k4");
    }

    #[test]
    fn malformed_seeded_ids_fall_through_to_the_roster() {
        // Plausible-looking but invalid ids must not panic in the spec
        // constructors; they become unknown-extractor errors instead.
        for id in [
            "synthetic-s1-h0-l3-k1",  // zero width
            "synthetic-s1-h16-l3-k3", // informative layer out of range
            "backbone-s1-h30-l2",     // width not divisible by the head count
            "synthetic-iemocap4",     // dataset id, not an extractor
            "synthetic-s1-h16",       // too few segments
        ] {
            match resolve_extractor(id) {
                Err(HarnessError::UnknownExtractor(bad)) => assert_eq!(bad, id),
                other => panic!("expected unknown-extractor for `{id}`, got {other:?}"),
            }
        }
    }

    #[test]
    fn roster_ids_resolve_to_specs() {
        let entry = extractor_catalog::builtin_extractors()
            .into_iter()
            .next()
            .expect("roster is non-empty");
        let spec = resolve_extractor(&entry.id).unwrap();
        assert_eq!(spec.extractor_id, entry.id);
    }

    #[test]
    fn layer_flag_accepts_the_all_alias() {
        assert_eq!(parse_layer("all").unwrap(), LayerSpec::AllLayers);
        assert_eq!(parse_layer("all_layers").unwrap(), LayerSpec::AllLayers);
        assert_eq!(parse_layer("index:3").unwrap(), LayerSpec::Index(3));
        assert!(parse_layer("layer3").is_err());
    }

    #[test]
    fn vector_extractors_default_to_their_path_and_learning_rate() {
        let vector = resolve_extractor("synthvec-s3-h24").unwrap();
        assert_eq!(default_layer(&vector), LayerSpec::FixedVector);
        assert_eq!(default_training(&vector).lr, TrainSettings::handcrafted().lr);

        let layered = resolve_extractor("synthetic-s1-h16-l3-k1").unwrap();
        assert_eq!(default_layer(&layered), LayerSpec::LastHidden);
        assert_eq!(default_training(&layered).lr, TrainSettings::deep().lr);
    }

    #[test]
    fn grid_entries_build_validated_specs() {
        let text = r#"
            version = 1

            [[runs]]
            protocol = "within"
            task = "synthetic3-class"
            extractor = "synthetic-s1-h16-l3-k1"
            layer = "index:1"
            lr = 0.002
            epochs = 12

            [[runs]]
            protocol = "lora_compare"
            task = "synthetic3-class"
            extractor = "backbone-s5-h32-l2"
            rank = 4

            [[runs]]
            protocol = "layer_sweep"
            task = "synthetic3-class"
            extractor = "synthetic-s1-h16-l3-k1"
            seed = 9
        "#;
        let grid: GridFile = toml::from_str(text).unwrap();
        assert_eq!(grid.version, GRID_VERSION);
        let (within, _) = grid.runs[0].to_spec(42).unwrap();
        assert_eq!(within.protocol, Protocol::Within);
        assert_eq!(within.layer, LayerSpec::Index(1));
        assert_eq!(within.train.lr, 0.002);
        assert_eq!(within.train.max_epochs, 12);
        assert_eq!(within.seed, 42);

        let (lora, _) = grid.runs[1].to_spec(42).unwrap();
        let settings = lora.lora.unwrap();
        assert_eq!(settings.rank, 4);
        assert_eq!(settings.alpha, LoraSettings::default().alpha);

        let (sweep, _) = grid.runs[2].to_spec(42).unwrap();
        assert_eq!(sweep.stride, Some(1));
        assert_eq!(sweep.seed, 9);
    }

    #[test]
    fn grid_entries_reject_contradictions() {
        // stride on a within run
        let entry: GridEntry = toml::from_str(
            r#"
            protocol = "within"
            task = "t"
            extractor = "synthetic-s1-h16-l3-k1"
            stride = 2
            "#,
        )
        .unwrap();
        assert!(entry.to_spec(1).is_err());

        // adapter settings outside the tuning comparison
        let entry: GridEntry = toml::from_str(
            r#"
            protocol = "within"
            task = "t"
            extractor = "synthetic-s1-h16-l3-k1"
            rank = 4
            "#,
        )
        .unwrap();
        assert!(entry.to_spec(1).is_err());

        // unknown protocol
        let entry: GridEntry = toml::from_str(
            r#"
            protocol = "sideways"
            task = "t"
            extractor = "synthetic-s1-h16-l3-k1"
            "#,
        )
        .unwrap();
        assert!(entry.to_spec(1).is_err());

        // unknown keys are configuration typos, not extra metadata
        assert!(toml::from_str::<GridEntry>(
            r#"
            protocol = "within"
            task = "t"
            extractor = "synthetic-s1-h16-l3-k1"
            learning_rate = 0.1
            "#,
        )
        .is_err());
    }

    #[test]
    fn usage_errors_exit_two_and_help_exits_zero() {
        let mut sink = Vec::new();
        assert_eq!(run_from(["paralbench", "no-such-verb"], &mut sink), 2);
        assert_eq!(run_from(["paralbench"], &mut sink), 2);
        assert_eq!(run_from(["paralbench", "--help"], &mut sink), 0);
        assert_eq!(run_from(["paralbench", "run", "--help"], &mut sink), 0);
    }

    #[test]
    fn full_cycle_in_a_temporary_workspace() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_str().unwrap().to_string();
        let manifest_path = format!("{root}/synthetic3.jsonl");
        let cache = format!("{root}/cache");
        let results = format!("{root}/results");
        // Keep every invocation hermetic: explicit config-free roots.
        let base = |verb: &str| {
            vec![
                "paralbench".to_string(),
                verb.to_string(),
                "--cache-root".to_string(),
                cache.clone(),
                "--results-root".to_string(),
                results.clone(),
                "--seed".to_string(),
                "7".to_string(),
            ]
        };
        let run = |mut args: Vec<String>, extra: &[&str]| -> (i32, String) {
            args.extend(extra.iter().map(|s| s.to_string()));
            let mut out = Vec::new();
            let code = run_from(args, &mut out);
            (code, String::from_utf8(out).unwrap())
        };

        // manifest
        let (code, text) = run(
            base("manifest"),
            &["--dataset", "synthetic3", "--samples", "60", "--out", &manifest_path],
        );
        assert_eq!(code, 0, "manifest failed: {text}");
        assert!(text.contains("dataset synthetic3"), "{text}");

        // manifest refuses to overwrite without --force
        let (code, _) = run(
            base("manifest"),
            &["--dataset", "synthetic3", "--samples", "60", "--out", &manifest_path],
        );
        assert_eq!(code, 2);

        // extract twice: all misses, then all hits
        let extract_args = [
            "--manifest",
            manifest_path.as_str(),
            "--extractor",
            "synthetic-s1-h16-l3-k1",
            "--layers",
            "all",
        ];
        let (code, cold) = run(base("extract"), &extract_args);
        assert_eq!(code, 0, "extract failed: {cold}");
        assert!(cold.contains("0 hits, 60 misses, 0 reextracted"), "{cold}");
        assert!(cold.contains("payload shape (3, "), "{cold}");
        let (code, warm) = run(base("extract"), &extract_args);
        assert_eq!(code, 0);
        assert!(warm.contains("60 hits, 0 misses, 0 reextracted"), "{warm}");

        // within-corpus run
        let run_args = [
            "--manifest",
            manifest_path.as_str(),
            "--task",
            "synthetic3-class",
            "--extractor",
            "synthetic-s1-h16-l3-k1",
            "--layer",
            "index:1",
            "--probe-dim",
            "16",
            "--lr",
            "0.002",
            "--epochs",
            "12",
            "--batch-size",
            "16",
        ];
        let (code, text) = run(base("run"), &run_args);
        assert_eq!(code, 0, "run failed: {text}");
        assert!(text.contains("WA="), "{text}");
        assert!(text.contains("stored "), "{text}");

        // identical spec is deduplicated
        let (code, text) = run(base("run"), &run_args);
        assert_eq!(code, 0);
        assert!(text.contains("already stored"), "{text}");

        // report renders the stored record
        let (code, text) = run(base("report"), &[]);
        assert_eq!(code, 0, "report failed: {text}");
        assert!(text.contains("synthetic3-class"), "{text}");
        assert!(text.contains("synthetic-s1-h16-l3-k1"), "{text}");
        assert!(text.contains("WA"), "{text}");

        // delimited report keeps the header contract
        let (code, text) = run(base("report"), &["--format", "tsv"]);
        assert_eq!(code, 0);
        assert!(text.starts_with("extractor\t"), "{text}");

        // verify knows nothing about ad-hoc synthetic corpora
        let (code, _) = run(
            base("verify"),
            &["--manifest", manifest_path.as_str()],
        );
        assert_eq!(code, 2, "synthetic3 has no recorded counts");
    }
}
