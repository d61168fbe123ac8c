//! Deterministic synthetic corpora.
//!
//! Each sample's audio is a 16-sample class signature tiled across the clip
//! plus low-amplitude Gaussian noise, addressed by a `synth:`-scheme
//! descriptor instead of a file path. Signatures are keyed by canonical
//! class *name*, independent of corpus and seed, so two corpora sharing a
//! class name share its signal geometry — which is what makes train-on-one,
//! test-on-another evaluation meaningful on synthetic data. Regression
//! corpora interpolate between two fixed endpoint signatures.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::corpus::audio::Waveform;
use crate::corpus::{LabelValue, Manifest, Sample, Split};
use crate::error::{HarnessError, Result};
use crate::metrics::MetricId;
use crate::registry::{
    canonical_form, DatasetSpec, DefaultSplit, LabelSpace, Normalization, RegressionTarget,
    TaskKind, TaskRegistry, TaskSpec, Taxonomy,
};

/// Length of the tiled per-class signature, in samples.
pub const SIGNATURE_DIM: usize = 16;
/// Sample rate of all synthesized audio.
pub const SYNTH_RATE_HZ: u32 = 16_000;
/// Amplitude of the additive Gaussian noise.
pub const NOISE_SIGMA: f64 = 0.02;

const DESCRIPTOR_SCHEME: &str = "synth";
const DESCRIPTOR_VERSION: &str = "v1";

/// Parameters of one synthetic corpus.
#[derive(Debug, Clone)]
pub struct SyntheticCorpusSpec {
    pub corpus_id: String,
    /// Class names; empty for regression corpora.
    pub classes: Vec<String>,
    /// Explicit per-class sample counts; `None` distributes `n_samples`
    /// round-robin (balanced up to remainder).
    pub class_sizes: Option<Vec<usize>>,
    pub n_samples: usize,
    pub seed: u64,
    /// Clip durations are drawn uniformly from this range (seconds).
    pub duration_range: (f64, f64),
    pub regression: bool,
}

impl SyntheticCorpusSpec {
    pub fn classification(corpus_id: &str, classes: &[&str], n_samples: usize, seed: u64) -> Self {
        SyntheticCorpusSpec {
            corpus_id: corpus_id.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            class_sizes: None,
            n_samples,
            seed,
            duration_range: (0.8, 1.2),
            regression: false,
        }
    }

    /// Classification corpus with explicit per-class counts (for imbalance
    /// and filtering fixtures).
    pub fn with_class_sizes(corpus_id: &str, classes: &[&str], sizes: &[usize], seed: u64) -> Self {
        assert_eq!(classes.len(), sizes.len(), "one size per class");
        SyntheticCorpusSpec {
            corpus_id: corpus_id.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
            class_sizes: Some(sizes.to_vec()),
            n_samples: sizes.iter().sum(),
            seed,
            duration_range: (0.8, 1.2),
            regression: false,
        }
    }

    pub fn regression(corpus_id: &str, n_samples: usize, seed: u64) -> Self {
        SyntheticCorpusSpec {
            corpus_id: corpus_id.to_string(),
            classes: Vec::new(),
            class_sizes: None,
            n_samples,
            seed,
            duration_range: (0.8, 1.2),
            regression: true,
        }
    }

    /// Task id this corpus annotates: `<corpus>-class` or `<corpus>-target`.
    pub fn task_id(&self) -> String {
        if self.regression {
            format!("{}-target", self.corpus_id)
        } else {
            format!("{}-class", self.corpus_id)
        }
    }
}

/// Unit-norm signature for a class name. Keyed by the *canonical form* of
/// the name only — not corpus or seed — so shared classes align across
/// corpora.
pub fn class_signature(name: &str) -> [f64; SIGNATURE_DIM] {
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-signature");
    hasher.update(canonical_form(name).as_bytes());
    let digest = hasher.finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    let mut sig = [0.0; SIGNATURE_DIM];
    for v in sig.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let norm = sig.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in sig.iter_mut() {
        *v /= norm;
    }
    sig
}

/// Signature for a scalar target in [0, 1]: linear blend between two fixed
/// endpoint signatures.
pub fn target_signature(t: f64) -> [f64; SIGNATURE_DIM] {
    let s0 = class_signature("target0");
    let s1 = class_signature("target1");
    let mut sig = [0.0; SIGNATURE_DIM];
    for i in 0..SIGNATURE_DIM {
        sig[i] = (1.0 - t) * s0[i] + t * s1[i];
    }
    sig
}

/// Parsed `synth:` descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDescriptor {
    pub corpus: String,
    pub index: usize,
    pub class: Option<String>,
    pub target: Option<f64>,
    pub seed: u64,
    pub duration_s: f64,
}

pub fn is_descriptor(audio_ref: &str) -> bool {
    audio_ref.starts_with("synth:")
}

pub fn format_descriptor(d: &SynthDescriptor) -> String {
    let payload = match (&d.class, d.target) {
        (Some(class), None) => format!("class={class}"),
        (None, Some(t)) => format!("target={t:.6}"),
        _ => unreachable!("descriptor carries exactly one of class/target"),
    };
    format!(
        "{DESCRIPTOR_SCHEME}:{DESCRIPTOR_VERSION};corpus={};index={};{payload};seed={};dur={:.4}",
        d.corpus, d.index, d.seed, d.duration_s
    )
}

pub fn parse_descriptor(audio_ref: &str) -> Result<SynthDescriptor> {
    let fail = |reason: &str| HarnessError::InvalidDescriptor {
        descriptor: audio_ref.to_string(),
        reason: reason.to_string(),
    };
    let rest = audio_ref
        .strip_prefix("synth:")
        .ok_or_else(|| fail("missing synth: scheme"))?;
    let mut parts = rest.split(';');
    let version = parts.next().unwrap_or_default();
    if version != DESCRIPTOR_VERSION {
        return Err(fail("unsupported descriptor version"));
    }
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for part in parts {
        let (key, value) = part.split_once('=').ok_or_else(|| fail("malformed field"))?;
        fields.insert(key, value);
    }
    let corpus = fields
        .get("corpus")
        .ok_or_else(|| fail("missing corpus"))?
        .to_string();
    let index: usize = fields
        .get("index")
        .ok_or_else(|| fail("missing index"))?
        .parse()
        .map_err(|_| fail("bad index"))?;
    let seed: u64 = fields
        .get("seed")
        .ok_or_else(|| fail("missing seed"))?
        .parse()
        .map_err(|_| fail("bad seed"))?;
    let duration_s: f64 = fields
        .get("dur")
        .ok_or_else(|| fail("missing dur"))?
        .parse()
        .map_err(|_| fail("bad dur"))?;
    if !duration_s.is_finite() || duration_s <= 0.0 {
        return Err(fail("non-positive duration"));
    }
    let class = fields.get("class").map(|c| c.to_string());
    let target = match fields.get("target") {
        Some(t) => Some(t.parse::<f64>().map_err(|_| fail("bad target"))?),
        None => None,
    };
    match (&class, target) {
        (Some(_), None) | (None, Some(_)) => {}
        _ => return Err(fail("need exactly one of class/target")),
    }
    if let Some(t) = target {
        if !(0.0..=1.0).contains(&t) {
            return Err(fail("target outside [0, 1]"));
        }
    }
    Ok(SynthDescriptor {
        corpus,
        index,
        class,
        target,
        seed,
        duration_s,
    })
}

/// Render a descriptor into audio: the signature tiled every 16 samples
/// plus per-sample Gaussian noise keyed by (seed, index).
pub fn synthesize(audio_ref: &str) -> Result<Waveform> {
    let d = parse_descriptor(audio_ref)?;
    let sig = match (&d.class, d.target) {
        (Some(class), None) => class_signature(class),
        (None, Some(t)) => target_signature(t),
        _ => unreachable!("validated by parse_descriptor"),
    };
    let n = (d.duration_s * SYNTH_RATE_HZ as f64).round() as usize;
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-noise");
    hasher.update(d.seed.to_le_bytes());
    hasher.update((d.index as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    let mut samples = Vec::with_capacity(n);
    for j in 0..n {
        let noise: f64 = StandardNormal.sample(&mut rng);
        samples.push((sig[j % SIGNATURE_DIM] + NOISE_SIGMA * noise) as f32);
    }
    Ok(Waveform {
        samples,
        rate_hz: SYNTH_RATE_HZ,
    })
}

/// Generate the manifest (splits unassigned; apply a split policy after).
pub fn generate_manifest(spec: &SyntheticCorpusSpec) -> Manifest {
    let task_id = spec.task_id();
    // Per-sample class indices: explicit block sizes or balanced round-robin.
    let class_of: Vec<usize> = if spec.regression {
        vec![0; spec.n_samples]
    } else {
        match &spec.class_sizes {
            Some(sizes) => sizes
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
                .collect(),
            None => (0..spec.n_samples).map(|i| i % spec.classes.len()).collect(),
        }
    };
    let n = class_of.len();
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-duration");
    hasher.update(spec.seed.to_le_bytes());
    let mut dur_rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    let (lo, hi) = spec.duration_range;

    let mut samples = Vec::with_capacity(n);
    for (i, &class_idx) in class_of.iter().enumerate() {
        let unit: f64 = rand::Rng::random(&mut dur_rng);
        let dur = ((lo + unit * (hi - lo)) * 1e4).round() / 1e4;
        let (class, target, label) = if spec.regression {
            let t = if n > 1 {
                ((i as f64 / (n - 1) as f64) * 1e6).round() / 1e6
            } else {
                0.5
            };
            (None, Some(t), LabelValue::Scalar(t))
        } else {
            let name = spec.classes[class_idx].clone();
            (Some(name.clone()), None, LabelValue::Class(name))
        };
        let descriptor = format_descriptor(&SynthDescriptor {
            corpus: spec.corpus_id.clone(),
            index: i,
            class,
            target,
            seed: spec.seed,
            duration_s: dur,
        });
        let mut labels = BTreeMap::new();
        labels.insert(task_id.clone(), label);
        let mut group_keys = BTreeMap::new();
        group_keys.insert("speaker".to_string(), format!("spk{:02}", i % 20));
        samples.push(Sample {
            sample_id: format!("{}-{i:05}", spec.corpus_id),
            audio_ref: descriptor,
            sample_rate_hz: SYNTH_RATE_HZ,
            duration_s: dur,
            labels,
            split: Split::Unassigned,
            group_keys,
        });
    }
    Manifest::new(&spec.corpus_id, samples)
}

/// Task description for a synthetic corpus.
pub fn task_for(spec: &SyntheticCorpusSpec) -> Result<TaskSpec> {
    let task_id = spec.task_id();
    let task = if spec.regression {
        TaskSpec {
            task_id,
            dataset_id: spec.corpus_id.clone(),
            taxonomy: Taxonomy::Medium,
            kind: TaskKind::Regression,
            label_space: None,
            target: Some(RegressionTarget {
                name: "target".into(),
                raw_range: (0.0, 1.0),
                normalization: Normalization::None,
            }),
            metrics: vec![MetricId::Mae],
            inferred_label_set: false,
            notes: vec!["synthetic scalar-target corpus".into()],
        }
    } else {
        TaskSpec {
            task_id: task_id.clone(),
            dataset_id: spec.corpus_id.clone(),
            taxonomy: Taxonomy::Short,
            kind: TaskKind::Classification,
            label_space: Some(LabelSpace::new(&task_id, &spec.classes, &BTreeMap::new())?),
            target: None,
            metrics: vec![MetricId::Wa, MetricId::Ua, MetricId::Wf1],
            inferred_label_set: false,
            notes: vec!["synthetic class-signature corpus".into()],
        }
    };
    task.validate()?;
    Ok(task)
}

/// Dataset catalog entry for a synthetic corpus (random 80/20 default
/// split keyed by the corpus seed).
pub fn dataset_for(spec: &SyntheticCorpusSpec) -> DatasetSpec {
    DatasetSpec {
        dataset_id: spec.corpus_id.clone(),
        name: format!("Synthetic corpus {}", spec.corpus_id),
        split_policy: "random_ratio".into(),
        expected_counts: None,
        default_split: Some(DefaultSplit {
            kind: "random_ratio".into(),
            train_fraction: Some(0.8),
            seed: Some(spec.seed),
            group_key: None,
            assignment: None,
            default: None,
        }),
        notes: Vec::new(),
    }
}

/// Register the corpus's dataset and task; idempotent.
pub fn register(registry: &mut TaskRegistry, spec: &SyntheticCorpusSpec) -> Result<()> {
    if !registry.has_dataset(&spec.corpus_id) {
        registry.register_dataset(dataset_for(spec))?;
    }
    if registry.task(&spec.task_id()).is_err() {
        registry.register_task(task_for(spec)?)?;
    }
    Ok(())
}

/// Generate the corpus manifest with its default split (random 80/20 keyed
/// by the corpus seed) already applied.
pub fn ready_manifest(spec: &SyntheticCorpusSpec) -> Result<Manifest> {
    crate::corpus::split_random(generate_manifest(spec), 0.8, spec.seed)
}

/// Emotion-corpus fixtures mirror the class inventories (and declared order)
/// of the corresponding registered tasks; a unit test pins the equality.
const IEMOCAP4_CLASSES: [&str; 4] = ["happiness", "sadness", "anger", "neutral"];
const MSP5_CLASSES: [&str; 5] = ["anger", "neutral", "happiness", "sadness", "disgust"];
const MELD7_CLASSES: [&str; 7] = [
    "anger",
    "disgust",
    "sadness",
    "happiness",
    "neutral",
    "surprise",
    "fear",
];

/// Resolve a synthetic corpus id: `synthetic<C>` (C generic classes),
/// the emotion-space fixtures `synthetic-iemocap4` / `synthetic-msp5` /
/// `synthetic-meld7`, or the regression corpus `synthreg`.
pub fn corpus_from_id(
    dataset_id: &str,
    n_samples: Option<usize>,
    seed: u64,
) -> Option<SyntheticCorpusSpec> {
    match dataset_id {
        "synthetic-iemocap4" => Some(SyntheticCorpusSpec::classification(
            dataset_id,
            &IEMOCAP4_CLASSES,
            n_samples.unwrap_or(240),
            seed,
        )),
        "synthetic-msp5" => Some(SyntheticCorpusSpec::classification(
            dataset_id,
            &MSP5_CLASSES,
            n_samples.unwrap_or(300),
            seed,
        )),
        "synthetic-meld7" => Some(SyntheticCorpusSpec::classification(
            dataset_id,
            &MELD7_CLASSES,
            n_samples.unwrap_or(350),
            seed,
        )),
        "synthreg" => Some(SyntheticCorpusSpec::regression(
            dataset_id,
            n_samples.unwrap_or(240),
            seed,
        )),
        _ => {
            let c: usize = dataset_id.strip_prefix("synthetic")?.parse().ok()?;
            if !(2..=64).contains(&c) {
                return None;
            }
            let classes: Vec<String> = (0..c).map(|i| format!("class{i}")).collect();
            let refs: Vec<&str> = classes.iter().map(|s| s.as_str()).collect();
            Some(SyntheticCorpusSpec::classification(
                dataset_id,
                &refs,
                n_samples.unwrap_or(240),
                seed,
            ))
        }
    }
}
