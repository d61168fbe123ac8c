//! Sample manifests, deterministic split policies, class-count filtering,
//! and count verification against recorded references.
//!
//! Manifests serialize as line-delimited JSON: a header record (dataset,
//! policy, counts) followed by one record per sample. Serialization is
//! deterministic, so rebuilding a manifest from the same inputs yields a
//! byte-identical file.

pub mod audio;
pub mod loaders;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::registry::{canonicalize, DefaultSplit, SplitCounts, TaskRegistry, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
    Unassigned,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "validation" | "dev" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(HarnessError::SplitAssignment(format!(
                "unknown split name `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

/// Raw per-task annotation: class spelling or scalar target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Scalar(f64),
    Class(String),
}

/// One utterance (or, for interview-style corpora, one participant).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    /// Audio file path or `synth:`-scheme descriptor.
    pub audio_ref: String,
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    /// task_id -> raw label.
    pub labels: BTreeMap<String, LabelValue>,
    pub split: Split,
    /// speaker/session/show/... -> value, for group split policies.
    pub group_keys: BTreeMap<String, String>,
}

impl Sample {
    pub fn class_label(&self, task_id: &str) -> Option<&str> {
        match self.labels.get(task_id) {
            Some(LabelValue::Class(c)) => Some(c),
            _ => None,
        }
    }

    pub fn scalar_label(&self, task_id: &str) -> Option<f64> {
        match self.labels.get(task_id) {
            Some(LabelValue::Scalar(v)) => Some(*v),
            _ => None,
        }
    }
}

/// Split policy, carried in the manifest header for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Splits come from the dataset's own partition files.
    Official,
    RandomRatio {
        train_fraction: f64,
        seed: u64,
    },
    GroupAssignment {
        group_key: String,
        assignment: BTreeMap<String, Split>,
        /// Split for group values not listed in `assignment`.
        default: Option<Split>,
    },
    GroupRandom {
        group_key: String,
        train_fraction: f64,
        seed: u64,
    },
}

impl SplitPolicy {
    pub fn policy_id(&self) -> &'static str {
        match self {
            SplitPolicy::Official => "official",
            SplitPolicy::RandomRatio { .. } => "random_ratio",
            SplitPolicy::GroupAssignment { .. } => "group_assignment",
            SplitPolicy::GroupRandom { .. } => "group_random",
        }
    }

    pub fn params(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        match self {
            SplitPolicy::Official => {}
            SplitPolicy::RandomRatio {
                train_fraction,
                seed,
            } => {
                map.insert("train_fraction".into(), format!("{train_fraction}"));
                map.insert("seed".into(), format!("{seed}"));
            }
            SplitPolicy::GroupAssignment {
                group_key,
                assignment,
                default,
            } => {
                map.insert("group_key".into(), group_key.clone());
                for (value, split) in assignment {
                    map.insert(format!("assign.{value}"), split.to_string());
                }
                if let Some(d) = default {
                    map.insert("default".into(), d.to_string());
                }
            }
            SplitPolicy::GroupRandom {
                group_key,
                train_fraction,
                seed,
            } => {
                map.insert("group_key".into(), group_key.clone());
                map.insert("train_fraction".into(), format!("{train_fraction}"));
                map.insert("seed".into(), format!("{seed}"));
            }
        }
        map
    }

    /// Build a concrete policy from a catalog `default_split` record.
    pub fn from_default(spec: &DefaultSplit) -> Result<Self> {
        match spec.kind.as_str() {
            "official" => Ok(SplitPolicy::Official),
            "random_ratio" => Ok(SplitPolicy::RandomRatio {
                train_fraction: spec.train_fraction.ok_or_else(|| {
                    HarnessError::Config("random_ratio default_split needs train_fraction".into())
                })?,
                seed: spec.seed.unwrap_or(17),
            }),
            "group_assignment" => {
                let group_key = spec.group_key.clone().ok_or_else(|| {
                    HarnessError::Config("group_assignment default_split needs group_key".into())
                })?;
                let mut assignment = BTreeMap::new();
                for (value, split) in spec.assignment.clone().unwrap_or_default() {
                    assignment.insert(canonicalize(&value), Split::parse(&split)?);
                }
                let default = match &spec.default {
                    Some(d) => Some(Split::parse(d)?),
                    None => None,
                };
                Ok(SplitPolicy::GroupAssignment {
                    group_key,
                    assignment,
                    default,
                })
            }
            "group_random" => Ok(SplitPolicy::GroupRandom {
                group_key: spec.group_key.clone().ok_or_else(|| {
                    HarnessError::Config("group_random default_split needs group_key".into())
                })?,
                train_fraction: spec.train_fraction.ok_or_else(|| {
                    HarnessError::Config("group_random default_split needs train_fraction".into())
                })?,
                seed: spec.seed.unwrap_or(17),
            }),
            other => Err(HarnessError::Config(format!(
                "unknown default_split kind `{other}`"
            ))),
        }
    }
}

/// All samples of one dataset plus the split policy that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub split_policy_id: String,
    pub policy_params: BTreeMap<String, String>,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderRecord {
    version: u32,
    dataset_id: String,
    split_policy_id: String,
    policy_params: BTreeMap<String, String>,
    counts: SplitCounts,
    unassigned: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum ManifestLine {
    Header(HeaderRecord),
    Sample(Sample),
}

const MANIFEST_VERSION: u32 = 1;

impl Manifest {
    pub fn new(dataset_id: &str, samples: Vec<Sample>) -> Self {
        Manifest {
            dataset_id: dataset_id.to_string(),
            split_policy_id: "unassigned".into(),
            policy_params: BTreeMap::new(),
            samples,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for s in &self.samples {
            match s.split {
                Split::Train => c.train += 1,
                Split::Validation => c.validation += 1,
                Split::Test => c.test += 1,
                Split::Unassigned => {}
            }
        }
        c
    }

    pub fn unassigned_count(&self) -> u64 {
        self.samples
            .iter()
            .filter(|s| s.split == Split::Unassigned)
            .count() as u64
    }

    pub fn split_samples(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Structural validity: unique ids, positive durations.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !s.duration_s.is_finite() || s.duration_s <= 0.0 {
                return Err(HarnessError::InvalidManifest(format!(
                    "sample `{}` has non-positive duration",
                    s.sample_id
                )));
            }
            if !seen.insert(s.sample_id.as_str()) {
                return Err(HarnessError::InvalidManifest(format!(
                    "duplicate sample_id `{}`",
                    s.sample_id
                )));
            }
        }
        Ok(())
    }

    /// Check that every label present for a registered task of this dataset
    /// resolves against the task's label space / target.
    pub fn validate_labels(&self, registry: &TaskRegistry) -> Result<()> {
        let tasks = registry.tasks_for_dataset(&self.dataset_id);
        for task in tasks {
            for sample in &self.samples {
                match self.resolve_for(task, sample) {
                    Ok(_) | Err(HarnessError::InvalidManifest(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }

    /// Resolve one sample's annotation for a task: class index or normalized
    /// scalar. Missing annotation is an InvalidManifest error.
    pub fn resolve_for(&self, task: &TaskSpec, sample: &Sample) -> Result<ResolvedLabel> {
        match (&task.label_space, &task.target) {
            (Some(space), None) => {
                let raw = sample.class_label(&task.task_id).ok_or_else(|| {
                    HarnessError::InvalidManifest(format!(
                        "sample `{}` lacks a label for task `{}`",
                        sample.sample_id, task.task_id
                    ))
                })?;
                Ok(ResolvedLabel::Class(crate::registry::resolve_label(
                    space, raw,
                )?))
            }
            (None, Some(target)) => {
                let raw = sample.scalar_label(&task.task_id).ok_or_else(|| {
                    HarnessError::InvalidManifest(format!(
                        "sample `{}` lacks a target for task `{}`",
                        sample.sample_id, task.task_id
                    ))
                })?;
                if !raw.is_finite() {
                    return Err(HarnessError::NonFinite(format!(
                        "target for sample `{}`",
                        sample.sample_id
                    )));
                }
                Ok(ResolvedLabel::Scalar(target.normalize(raw)))
            }
            _ => Err(HarnessError::InvalidTaskSpec {
                task: task.task_id.clone(),
                reason: "task must have exactly one of label space / target".into(),
            }),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let header = ManifestLine::Header(HeaderRecord {
            version: MANIFEST_VERSION,
            dataset_id: self.dataset_id.clone(),
            split_policy_id: self.split_policy_id.clone(),
            policy_params: self.policy_params.clone(),
            counts: self.counts(),
            unassigned: self.unassigned_count(),
        });
        out.push_str(&serde_json::to_string(&header)?);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(&ManifestLine::Sample(s.clone()))?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines
            .next()
            .ok_or_else(|| HarnessError::InvalidManifest("empty manifest file".into()))?;
        let header = match serde_json::from_str::<ManifestLine>(first)? {
            ManifestLine::Header(h) => h,
            ManifestLine::Sample(_) => {
                return Err(HarnessError::InvalidManifest(
                    "first record must be the header".into(),
                ))
            }
        };
        if header.version != MANIFEST_VERSION {
            return Err(HarnessError::InvalidManifest(format!(
                "unsupported manifest version {}",
                header.version
            )));
        }
        let mut samples = Vec::new();
        for line in lines {
            match serde_json::from_str::<ManifestLine>(line)? {
                ManifestLine::Sample(s) => samples.push(s),
                ManifestLine::Header(_) => {
                    return Err(HarnessError::InvalidManifest(
                        "duplicate header record".into(),
                    ))
                }
            }
        }
        let manifest = Manifest {
            dataset_id: header.dataset_id,
            split_policy_id: header.split_policy_id,
            policy_params: header.policy_params,
            samples,
        };
        manifest.validate()?;
        if manifest.counts() != header.counts || manifest.unassigned_count() != header.unassigned
        {
            return Err(HarnessError::InvalidManifest(
                "header counts disagree with sample records".into(),
            ));
        }
        Ok(manifest)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut text = String::new();
        let mut reader = std::io::BufReader::new(file);
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            text.push_str(&line);
        }
        Self::from_jsonl(&text)
    }
}

/// Resolved annotation for one (task, sample) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedLabel {
    Class(usize),
    Scalar(f64),
}

/// Stable rank in [0, 2^64) for (seed, id): the first eight bytes of
/// sha256(seed_le || id). Independent of enumeration order and platform.
fn stable_rank(seed: u64, id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[0..8].try_into().expect("digest length"))
}

/// Assign train/test by ranking samples on a stable hash of (seed,
/// sample_id) and cutting at floor(train_fraction * n).
pub fn split_random(mut manifest: Manifest, train_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(HarnessError::SplitAssignment(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    if manifest.samples.iter().any(|s| s.split != Split::Unassigned) {
        return Err(HarnessError::SplitAssignment(
            "manifest already carries split assignments".into(),
        ));
    }
    let mut ranked: Vec<(u64, String)> = manifest
        .samples
        .iter()
        .map(|s| (stable_rank(seed, &s.sample_id), s.sample_id.clone()))
        .collect();
    ranked.sort();
    let k = (train_fraction * ranked.len() as f64).floor() as usize;
    let train_ids: BTreeSet<&str> = ranked[..k].iter().map(|(_, id)| id.as_str()).collect();
    for sample in &mut manifest.samples {
        sample.split = if train_ids.contains(sample.sample_id.as_str()) {
            Split::Train
        } else {
            Split::Test
        };
    }
    let policy = SplitPolicy::RandomRatio {
        train_fraction,
        seed,
    };
    manifest.split_policy_id = policy.policy_id().into();
    manifest.policy_params = policy.params();
    Ok(manifest)
}

/// Assign splits by a group key (speaker/session/show) so that all samples
/// sharing the group value land in the same split.
pub fn split_by_group(
    mut manifest: Manifest,
    group_key: &str,
    assignment: &BTreeMap<String, Split>,
    default: Option<Split>,
) -> Result<Manifest> {
    let assignment: BTreeMap<String, Split> = assignment
        .iter()
        .map(|(k, v)| (canonicalize(k), *v))
        .collect();
    for sample in &mut manifest.samples {
        let value = sample.group_keys.get(group_key).ok_or_else(|| {
            HarnessError::SplitAssignment(format!(
                "sample `{}` lacks group key `{group_key}`",
                sample.sample_id
            ))
        })?;
        let value = canonicalize(value);
        sample.split = match assignment.get(&value).copied().or(default) {
            Some(split) => split,
            None => {
                return Err(HarnessError::SplitAssignment(format!(
                    "group value `{value}` of key `{group_key}` is not covered"
                )))
            }
        };
    }
    let policy = SplitPolicy::GroupAssignment {
        group_key: group_key.to_string(),
        assignment,
        default,
    };
    manifest.split_policy_id = policy.policy_id().into();
    manifest.policy_params = policy.params();
    Ok(manifest)
}

/// Random split at group granularity: groups are ranked by stable hash and
/// cut at floor(train_fraction * n_groups).
pub fn split_random_by_group(
    mut manifest: Manifest,
    group_key: &str,
    train_fraction: f64,
    seed: u64,
) -> Result<Manifest> {
    if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
        return Err(HarnessError::SplitAssignment(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    if manifest.samples.iter().any(|s| s.split != Split::Unassigned) {
        return Err(HarnessError::SplitAssignment(
            "manifest already carries split assignments".into(),
        ));
    }
    let mut groups = BTreeSet::new();
    for sample in &manifest.samples {
        let value = sample.group_keys.get(group_key).ok_or_else(|| {
            HarnessError::SplitAssignment(format!(
                "sample `{}` lacks group key `{group_key}`",
                sample.sample_id
            ))
        })?;
        groups.insert(value.clone());
    }
    let mut ranked: Vec<(u64, String)> = groups
        .into_iter()
        .map(|g| (stable_rank(seed, &g), g))
        .collect();
    ranked.sort();
    let k = (train_fraction * ranked.len() as f64).floor() as usize;
    let train_groups: BTreeSet<&str> = ranked[..k].iter().map(|(_, g)| g.as_str()).collect();
    for sample in &mut manifest.samples {
        let value = &sample.group_keys[group_key];
        sample.split = if train_groups.contains(value.as_str()) {
            Split::Train
        } else {
            Split::Test
        };
    }
    let policy = SplitPolicy::GroupRandom {
        group_key: group_key.to_string(),
        train_fraction,
        seed,
    };
    manifest.split_policy_id = policy.policy_id().into();
    manifest.policy_params = policy.params();
    Ok(manifest)
}

/// Outcome of minimum-class-count filtering.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub manifest: Manifest,
    /// Classes surviving the threshold, in declared-space order when they
    /// coincide with a registered space, else in order of first appearance.
    pub surviving_classes: Vec<String>,
    pub removed_classes: Vec<String>,
    pub removed_samples: usize,
}

/// Remove samples of classes with fewer than `min_n` instances for
/// `task_id`; the surviving class list is the shrunk label space.
pub fn filter_min_class_count(
    manifest: Manifest,
    task_id: &str,
    min_n: usize,
    declared_space: Option<&[String]>,
) -> Result<FilterOutcome> {
    let mut histogram: BTreeMap<String, usize> = BTreeMap::new();
    let mut appearance: Vec<String> = Vec::new();
    for sample in &manifest.samples {
        let raw = sample.class_label(task_id).ok_or_else(|| {
            HarnessError::InvalidManifest(format!(
                "sample `{}` lacks a class label for task `{task_id}`",
                sample.sample_id
            ))
        })?;
        let canon = canonicalize(raw);
        if !histogram.contains_key(&canon) {
            appearance.push(canon.clone());
        }
        *histogram.entry(canon).or_insert(0) += 1;
    }
    let survivor_set: BTreeSet<&str> = histogram
        .iter()
        .filter(|(_, &n)| n >= min_n)
        .map(|(c, _)| c.as_str())
        .collect();
    let removed_classes: Vec<String> = appearance
        .iter()
        .filter(|c| !survivor_set.contains(c.as_str()))
        .cloned()
        .collect();

    let before = manifest.counts();
    let before_unassigned = manifest.unassigned_count();
    let mut kept = Vec::new();
    let mut removed_samples = 0usize;
    for sample in manifest.samples {
        let canon = canonicalize(sample.class_label(task_id).expect("checked above"));
        if survivor_set.contains(canon.as_str()) {
            kept.push(sample);
        } else {
            removed_samples += 1;
        }
    }
    let filtered = Manifest {
        dataset_id: manifest.dataset_id,
        split_policy_id: manifest.split_policy_id,
        policy_params: manifest.policy_params,
        samples: kept,
    };
    let after = filtered.counts();
    for (name, had, has) in [
        ("train", before.train, after.train),
        ("validation", before.validation, after.validation),
        ("test", before.test, after.test),
    ] {
        if had > 0 && has == 0 {
            return Err(HarnessError::FilterEmptiedSplit(name.into()));
        }
    }
    if before_unassigned > 0 && filtered.unassigned_count() == 0 {
        return Err(HarnessError::FilterEmptiedSplit("unassigned".into()));
    }

    // Prefer the declared ordering when the survivors match a known space.
    let surviving_classes = match declared_space {
        Some(declared)
            if declared.len() == survivor_set.len()
                && declared.iter().all(|c| survivor_set.contains(c.as_str())) =>
        {
            declared.to_vec()
        }
        _ => appearance
            .into_iter()
            .filter(|c| survivor_set.contains(c.as_str()))
            .collect(),
    };
    Ok(FilterOutcome {
        manifest: filtered,
        surviving_classes,
        removed_classes,
        removed_samples,
    })
}

/// Per-split comparison of actual vs expected counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub dataset_id: String,
    pub expected: SplitCounts,
    pub actual: SplitCounts,
    /// (train, validation, test) deltas, actual - expected.
    pub deltas: (i64, i64, i64),
    pub pass: bool,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl std::fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{}: counts {} vs expected {} -> {}",
            self.dataset_id,
            self.actual,
            self.expected,
            if self.pass { "pass" } else { "FAIL" }
        )?;
        if !self.pass {
            writeln!(
                f,
                "  deltas: train {:+}, validation {:+}, test {:+}",
                self.deltas.0, self.deltas.1, self.deltas.2
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

/// Compare a manifest's split counts against recorded reference counts.
pub fn verify_manifest(manifest: &Manifest, expected: &SplitCounts) -> VerificationReport {
    let actual = manifest.counts();
    let deltas = (
        actual.train as i64 - expected.train as i64,
        actual.validation as i64 - expected.validation as i64,
        actual.test as i64 - expected.test as i64,
    );
    let mut warnings = Vec::new();
    if actual.train == 0 {
        warnings.push("train split is empty".to_string());
    }
    if actual.test == 0 {
        warnings.push("test split is empty".to_string());
    }
    let unassigned = manifest.unassigned_count();
    if unassigned > 0 {
        warnings.push(format!("{unassigned} samples are unassigned"));
    }
    VerificationReport {
        dataset_id: manifest.dataset_id.clone(),
        expected: *expected,
        actual,
        deltas,
        pass: deltas == (0, 0, 0),
        warnings,
        notes: Vec::new(),
    }
}

/// Build a manifest for a dataset: synthetic corpora are generated, real
/// corpora load from their native layout under `raw_root`, and any dataset
/// can load from a generic partitions CSV. The split policy defaults to the
/// catalog's `default_split` (official layouts carry their own splits).
pub fn build_manifest(
    registry: &TaskRegistry,
    dataset_id: &str,
    raw_root: Option<&Path>,
    policy: Option<SplitPolicy>,
    synthetic_samples: Option<usize>,
    seed: u64,
) -> Result<Manifest> {
    let mut fallback_policy: Option<SplitPolicy> = None;
    let manifest = if let Some(spec) =
        synthetic::corpus_from_id(dataset_id, synthetic_samples, seed)
    {
        fallback_policy = Some(SplitPolicy::RandomRatio {
            train_fraction: 0.8,
            seed: spec.seed,
        });
        synthetic::generate_manifest(&spec)
    } else {
        let root = raw_root.ok_or_else(|| HarnessError::RawData {
            dataset: dataset_id.to_string(),
            reason: "no raw data root configured".into(),
        })?;
        loaders::load_dataset(dataset_id, root)?
    };
    manifest.validate()?;

    let policy = match policy {
        Some(p) => Some(p),
        None => {
            if manifest.unassigned_count() == 0 {
                None // loader already assigned official splits
            } else if registry.has_dataset(dataset_id) {
                registry
                    .dataset(dataset_id)?
                    .default_split
                    .as_ref()
                    .map(SplitPolicy::from_default)
                    .transpose()?
                    .or(fallback_policy)
            } else {
                fallback_policy
            }
        }
    };
    let manifest = match policy {
        None | Some(SplitPolicy::Official) => {
            if manifest.unassigned_count() == manifest.samples.len() as u64 {
                return Err(HarnessError::SplitAssignment(format!(
                    "dataset `{dataset_id}` has no split assignments and no policy was given"
                )));
            }
            manifest
        }
        Some(SplitPolicy::RandomRatio {
            train_fraction,
            seed,
        }) => split_random(manifest, train_fraction, seed)?,
        Some(SplitPolicy::GroupAssignment {
            group_key,
            assignment,
            default,
        }) => split_by_group(manifest, &group_key, &assignment, default)?,
        Some(SplitPolicy::GroupRandom {
            group_key,
            train_fraction,
            seed,
        }) => split_random_by_group(manifest, &group_key, train_fraction, seed)?,
    };
    manifest.validate_labels(registry)?;
    Ok(manifest)
}
