//! Task registry: label spaces, regression targets, the short/medium/long
//! task taxonomy, dataset split fixtures, and cross-corpus label mappings.
//!
//! The built-in catalog (16 tasks over 11 dataset bindings) is embedded as a
//! versioned TOML document; user catalogs load from the same format. Class
//! names are canonical (lowercase, underscore-separated) and every label
//! space keeps a fixed, serialized ordering so class indices are stable
//! across runs.

mod catalog;

pub use catalog::{parse_catalog, Catalog};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::MetricId;

/// Time scale over which a paralinguistic trait influences articulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taxonomy {
    Short,
    Medium,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// Shared emotion alias table mapping common raw spellings onto the
/// canonical emotion vocabulary {anger, happiness, sadness, neutral,
/// disgust, surprise, fear, contempt, other}.
const EMOTION_ALIASES: &[(&str, &str)] = &[
    ("angry", "anger"),
    ("mad", "anger"),
    ("happy", "happiness"),
    ("joy", "happiness"),
    ("joyful", "happiness"),
    ("excited", "happiness"),
    ("excitement", "happiness"),
    ("sad", "sadness"),
    ("surprised", "surprise"),
    ("scared", "fear"),
    ("afraid", "fear"),
    ("disgusted", "disgust"),
];

/// Canonical spelling: trimmed, lowercased, spaces and hyphens collapsed to
/// underscores.
pub fn canonicalize(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

/// Canonical form used for cross-space matching: canonical spelling routed
/// through the shared emotion alias table.
pub fn canonical_form(raw: &str) -> String {
    let c = canonicalize(raw);
    for (alias, target) in EMOTION_ALIASES {
        if c == *alias {
            return (*target).to_string();
        }
    }
    c
}

/// Ordered set of canonical class names with an alias table for raw labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    name: String,
    classes: Vec<String>,
    aliases: BTreeMap<String, String>,
}

impl LabelSpace {
    /// Build a label space; class names are canonicalized, order preserved.
    /// The shared emotion aliases are merged in automatically wherever their
    /// target class exists in the space.
    pub fn new(
        name: &str,
        classes: &[String],
        extra_aliases: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let canon: Vec<String> = classes.iter().map(|c| canonicalize(c)).collect();
        if canon.is_empty() {
            return Err(HarnessError::InvalidTaskSpec {
                task: name.to_string(),
                reason: "label space with no classes".into(),
            });
        }
        for (i, c) in canon.iter().enumerate() {
            if c.is_empty() || canon[..i].contains(c) {
                return Err(HarnessError::InvalidTaskSpec {
                    task: name.to_string(),
                    reason: format!("empty or duplicate class name `{c}`"),
                });
            }
        }
        let mut aliases = BTreeMap::new();
        for (alias, target) in EMOTION_ALIASES {
            let alias = alias.to_string();
            if canon.contains(&(*target).to_string()) && !canon.contains(&alias) {
                aliases.insert(alias, (*target).to_string());
            }
        }
        for (alias, target) in extra_aliases {
            let alias = canonicalize(alias);
            let target = canonicalize(target);
            if canon.contains(&alias) {
                return Err(HarnessError::InvalidTaskSpec {
                    task: name.to_string(),
                    reason: format!("alias `{alias}` shadows a class name"),
                });
            }
            if !canon.contains(&target) {
                return Err(HarnessError::InvalidTaskSpec {
                    task: name.to_string(),
                    reason: format!("alias `{alias}` points at unknown class `{target}`"),
                });
            }
            aliases.insert(alias, target);
        }
        Ok(LabelSpace {
            name: name.to_string(),
            classes: canon,
            aliases,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == canonical)
    }
}

/// Resolve a raw dataset label to a class index via canonicalization and the
/// space's alias table.
pub fn resolve_label(space: &LabelSpace, raw: &str) -> Result<usize> {
    let canon = canonicalize(raw);
    if let Some(idx) = space.index_of(&canon) {
        return Ok(idx);
    }
    if let Some(target) = space.aliases.get(&canon) {
        if let Some(idx) = space.index_of(target) {
            return Ok(idx);
        }
    }
    Err(HarnessError::UnknownLabel {
        raw: raw.to_string(),
        space: space.name.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    MinMaxToUnit,
}

/// Scalar regression target with its raw annotation range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub name: String,
    pub raw_range: (f64, f64),
    pub normalization: Normalization,
}

impl RegressionTarget {
    pub fn validate(&self) -> Result<()> {
        if self.raw_range.0 >= self.raw_range.1 {
            return Err(HarnessError::InvalidTaskSpec {
                task: self.name.clone(),
                reason: "raw_range lower bound must be below upper bound".into(),
            });
        }
        Ok(())
    }

    /// Map a raw annotation value into model/metric units. `MinMaxToUnit`
    /// clamps into [0, 1]; `None` passes the raw value through.
    pub fn normalize(&self, raw: f64) -> f64 {
        match self.normalization {
            Normalization::None => raw,
            Normalization::MinMaxToUnit => {
                let (lo, hi) = self.raw_range;
                ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        }
    }
}

/// One benchmark task: a dataset binding plus label space or regression
/// target and the metric set it reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub dataset_id: String,
    pub taxonomy: Taxonomy,
    pub kind: TaskKind,
    pub label_space: Option<LabelSpace>,
    pub target: Option<RegressionTarget>,
    pub metrics: Vec<MetricId>,
    /// Set when the class inventory is inferred rather than stated by the
    /// source description (MSP-Podcast 5-class emotion).
    #[serde(default)]
    pub inferred_label_set: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| {
            Err(HarnessError::InvalidTaskSpec {
                task: self.task_id.clone(),
                reason,
            })
        };
        if self.metrics.is_empty() {
            return fail("empty metric set".into());
        }
        match self.kind {
            TaskKind::Classification => {
                let space = match &self.label_space {
                    Some(s) => s,
                    None => return fail("classification task without a label space".into()),
                };
                if space.len() < 2 {
                    return fail("label space needs at least 2 classes".into());
                }
                if self.target.is_some() {
                    return fail("classification task with a regression target".into());
                }
                if self.metrics.contains(&MetricId::Mae) {
                    return fail("MAE is not a classification metric".into());
                }
            }
            TaskKind::Regression => {
                let target = match &self.target {
                    Some(t) => t,
                    None => return fail("regression task without a target".into()),
                };
                target.validate()?;
                if self.label_space.is_some() {
                    return fail("regression task with a label space".into());
                }
                if self.metrics != vec![MetricId::Mae] {
                    return fail("regression tasks report MAE only".into());
                }
            }
        }
        Ok(())
    }

    /// Metric used for model selection and leaderboard ordering.
    pub fn primary_metric(&self) -> MetricId {
        self.metrics[0]
    }
}

/// Recorded reference counts per split (0 = the dataset has no such split).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    #[serde(default)]
    pub train: u64,
    #[serde(default)]
    pub validation: u64,
    #[serde(default)]
    pub test: u64,
}

impl SplitCounts {
    pub fn new(train: u64, validation: u64, test: u64) -> Self {
        SplitCounts {
            train,
            validation,
            test,
        }
    }

    pub fn total(&self) -> u64 {
        self.train + self.validation + self.test
    }
}

impl std::fmt::Display for SplitCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let part = |n: u64| {
            if n == 0 {
                "-".to_string()
            } else {
                n.to_string()
            }
        };
        write!(
            f,
            "{}/{}/{}",
            part(self.train),
            part(self.validation),
            part(self.test)
        )
    }
}

/// Declarative default split policy carried by the catalog (converted to a
/// concrete split policy by the corpus layer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefaultSplit {
    pub kind: String,
    pub train_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub group_key: Option<String>,
    pub assignment: Option<BTreeMap<String, String>>,
    /// Split for group values not listed in `assignment`.
    pub default: Option<String>,
}

/// Catalog entry for one dataset: split policy description and recorded
/// reference counts used by manifest verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub dataset_id: String,
    pub name: String,
    pub split_policy: String,
    pub expected_counts: Option<SplitCounts>,
    pub default_split: Option<DefaultSplit>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Cross-corpus label harmonization: each test-space (target) class either
/// maps to one train-space (source) class or is dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelMapping {
    pub source_space: LabelSpace,
    pub target_space: LabelSpace,
    /// Pairs of (target class, source class), in target-space order.
    pub pairs: Vec<(String, String)>,
    pub dropped_target_classes: Vec<String>,
}

impl LabelMapping {
    /// Target class index -> source class index (None = dropped).
    pub fn index_map(&self) -> Vec<Option<usize>> {
        self.target_space
            .classes()
            .iter()
            .map(|t| {
                self.pairs
                    .iter()
                    .find(|(target, _)| target == t)
                    .map(|(_, source)| self.source_space.index_of(source).expect("mapped"))
            })
            .collect()
    }
}

/// Map every test-space class onto a source-space class by canonical name
/// (through the shared emotion alias table); unmatched classes are dropped.
pub fn build_label_mapping(
    train_space: &LabelSpace,
    test_space: &LabelSpace,
) -> Result<LabelMapping> {
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for target_class in test_space.classes() {
        let key = canonical_form(target_class);
        let hit = train_space
            .classes()
            .iter()
            .find(|source| canonical_form(source) == key);
        match hit {
            Some(source) => pairs.push((target_class.clone(), source.clone())),
            None => dropped.push(target_class.clone()),
        }
    }
    if pairs.is_empty() {
        return Err(HarnessError::EmptyLabelMapping {
            train: train_space.name().to_string(),
            test: test_space.name().to_string(),
        });
    }
    Ok(LabelMapping {
        source_space: train_space.clone(),
        target_space: test_space.clone(),
        pairs,
        dropped_target_classes: dropped,
    })
}

/// Immutable-after-setup registry of tasks and datasets.
#[derive(Debug, Clone)]
pub struct TaskRegistry {
    tasks: BTreeMap<String, TaskSpec>,
    datasets: BTreeMap<String, DatasetSpec>,
}

impl TaskRegistry {
    pub fn empty() -> Self {
        TaskRegistry {
            tasks: BTreeMap::new(),
            datasets: BTreeMap::new(),
        }
    }

    /// Registry preloaded with the embedded catalog.
    pub fn builtin() -> Self {
        let mut reg = TaskRegistry::empty();
        let catalog = parse_catalog(include_str!("builtin_catalog.toml"))
            .expect("embedded catalog is well-formed");
        reg.merge_catalog(catalog)
            .expect("embedded catalog entries are valid");
        reg
    }

    pub fn register_task(&mut self, spec: TaskSpec) -> Result<String> {
        spec.validate()?;
        if self.tasks.contains_key(&spec.task_id) {
            return Err(HarnessError::DuplicateTask(spec.task_id));
        }
        let id = spec.task_id.clone();
        self.tasks.insert(id.clone(), spec);
        Ok(id)
    }

    pub fn register_dataset(&mut self, spec: DatasetSpec) -> Result<()> {
        if self.datasets.contains_key(&spec.dataset_id) {
            return Err(HarnessError::Config(format!(
                "dataset `{}` is already registered",
                spec.dataset_id
            )));
        }
        self.datasets.insert(spec.dataset_id.clone(), spec);
        Ok(())
    }

    pub fn merge_catalog(&mut self, catalog: Catalog) -> Result<()> {
        for ds in catalog.datasets {
            self.register_dataset(ds)?;
        }
        for task in catalog.tasks {
            self.register_task(task)?;
        }
        Ok(())
    }

    pub fn load_catalog_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.merge_catalog(parse_catalog(&text)?)
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskSpec> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| HarnessError::UnknownTask(task_id.to_string()))
    }

    pub fn dataset(&self, dataset_id: &str) -> Result<&DatasetSpec> {
        self.datasets
            .get(dataset_id)
            .ok_or_else(|| HarnessError::Config(format!("unknown dataset `{dataset_id}`")))
    }

    pub fn has_dataset(&self, dataset_id: &str) -> bool {
        self.datasets.contains_key(dataset_id)
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(|s| s.as_str())
    }

    pub fn tasks_for_dataset(&self, dataset_id: &str) -> Vec<&TaskSpec> {
        self.tasks
            .values()
            .filter(|t| t.dataset_id == dataset_id)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(name: &str, classes: &[&str]) -> LabelSpace {
        let classes: Vec<String> = classes.iter().map(|s| s.to_string()).collect();
        LabelSpace::new(name, &classes, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn builtin_catalog_class_counts() {
        let reg = TaskRegistry::builtin();
        let counts = [
            ("meld-emotion", 7),
            ("msp-podcast-emotion", 5),
            ("iemocap-emotion", 4),
            ("meld-sentiment", 3),
            ("cmu-mosi-sentiment", 2),
            ("mustard-sarcasm", 2),
            ("flusense-influenza", 9),
            ("sep28k-stutter", 2),
            ("daic-woz-depression", 2),
            ("msp-podcast-gender", 2),
            ("vctk-accent", 11),
            ("timit-dialect", 8),
        ];
        for (task_id, c) in counts {
            let task = reg.task(task_id).unwrap();
            assert_eq!(task.kind, TaskKind::Classification, "{task_id}");
            assert_eq!(task.label_space.as_ref().unwrap().len(), c, "{task_id}");
        }
        for task_id in [
            "iemocap-arousal",
            "iemocap-valence",
            "iemocap-dominance",
            "vctk-age",
        ] {
            let task = reg.task(task_id).unwrap();
            assert_eq!(task.kind, TaskKind::Regression, "{task_id}");
            assert!(task.target.is_some(), "{task_id}");
        }
        assert_eq!(reg.task_ids().count(), 16);
        assert!(reg.task("msp-podcast-emotion").unwrap().inferred_label_set);
    }

    #[test]
    fn builtin_catalog_split_fixtures() {
        let reg = TaskRegistry::builtin();
        let expect = [
            ("meld", (9986, 1108, 2609)),
            ("msp-podcast", (63076, 10999, 16903)),
            ("cmu-mosi", (1284, 229, 686)),
            ("iemocap", (4290, 0, 1241)),
            ("iemocap-dim", (7869, 0, 2170)),
            ("mustard", (334, 0, 356)),
            ("flusense", (9281, 0, 2321)),
            ("sep28k", (24922, 2000, 1000)),
            ("daic-woz", (107, 35, 47)),
            ("vctk", (39663, 0, 4407)),
            ("timit", (4620, 0, 1680)),
        ];
        for (id, (train, validation, test)) in expect {
            let ds = reg.dataset(id).unwrap();
            assert_eq!(
                ds.expected_counts,
                Some(SplitCounts::new(train, validation, test)),
                "{id}"
            );
        }
    }

    #[test]
    fn resolve_label_aliases_and_case() {
        let reg = TaskRegistry::builtin();
        let meld = reg.task("meld-emotion").unwrap().label_space.clone().unwrap();
        let happiness = meld.index_of("happiness").unwrap();
        assert_eq!(resolve_label(&meld, "joy").unwrap(), happiness);
        assert_eq!(resolve_label(&meld, "Joy ").unwrap(), happiness);
        assert_eq!(
            resolve_label(&meld, "Neutral").unwrap(),
            meld.index_of("neutral").unwrap()
        );

        let iemocap = reg
            .task("iemocap-emotion")
            .unwrap()
            .label_space
            .clone()
            .unwrap();
        assert_eq!(
            resolve_label(&iemocap, "excited").unwrap(),
            iemocap.index_of("happiness").unwrap()
        );
        assert!(matches!(
            resolve_label(&iemocap, "confusion"),
            Err(HarnessError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn resolve_label_round_trips_canonical_names() {
        let reg = TaskRegistry::builtin();
        for id in reg.task_ids().map(str::to_string).collect::<Vec<_>>() {
            let task = reg.task(&id).unwrap();
            if let Some(space) = &task.label_space {
                for (i, class) in space.classes().iter().enumerate() {
                    assert_eq!(resolve_label(space, class).unwrap(), i, "{id}/{class}");
                }
            }
        }
    }

    #[test]
    fn register_rejects_duplicates_and_degenerate_spaces() {
        let mut reg = TaskRegistry::builtin();
        let dup = reg.task("timit-dialect").unwrap().clone();
        assert!(matches!(
            reg.register_task(dup),
            Err(HarnessError::DuplicateTask(_))
        ));

        let one_class = TaskSpec {
            task_id: "degenerate".into(),
            dataset_id: "synthetic1".into(),
            taxonomy: Taxonomy::Short,
            kind: TaskKind::Classification,
            label_space: Some(space("degenerate", &["only"])),
            target: None,
            metrics: vec![MetricId::Wa],
            inferred_label_set: false,
            notes: vec![],
        };
        assert!(reg.register_task(one_class).is_err());
    }

    #[test]
    fn mapping_drops_unshared_classes() {
        let reg = TaskRegistry::builtin();
        let iemocap = reg
            .task("iemocap-emotion")
            .unwrap()
            .label_space
            .clone()
            .unwrap();
        let msp = reg
            .task("msp-podcast-emotion")
            .unwrap()
            .label_space
            .clone()
            .unwrap();
        let meld = reg.task("meld-emotion").unwrap().label_space.clone().unwrap();

        let to_msp = build_label_mapping(&iemocap, &msp).unwrap();
        assert_eq!(to_msp.pairs.len(), 4);
        assert_eq!(to_msp.dropped_target_classes, vec!["disgust".to_string()]);

        let to_meld = build_label_mapping(&iemocap, &meld).unwrap();
        assert_eq!(to_meld.pairs.len(), 4);
        let mut dropped = to_meld.dropped_target_classes.clone();
        dropped.sort();
        assert_eq!(dropped, vec!["disgust", "fear", "surprise"]);
    }

    #[test]
    fn mapping_matches_raw_spellings_via_aliases() {
        let train = space("train", &["angry", "neutral", "happy", "sad"]);
        let test = space("test", &["anger", "neutral", "happiness", "sadness", "disgust"]);
        let mapping = build_label_mapping(&train, &test).unwrap();
        assert_eq!(mapping.pairs.len(), 4);
        assert_eq!(mapping.dropped_target_classes, vec!["disgust".to_string()]);
        assert_eq!(
            mapping.index_map(),
            vec![Some(0), Some(1), Some(2), Some(3), None]
        );
    }

    #[test]
    fn mapping_identity_and_empty() {
        let a = space("a", &["x", "y"]);
        let mapping = build_label_mapping(&a, &a).unwrap();
        assert_eq!(mapping.pairs.len(), 2);
        assert!(mapping.dropped_target_classes.is_empty());

        let b = space("b", &["p", "q"]);
        assert!(matches!(
            build_label_mapping(&a, &b),
            Err(HarnessError::EmptyLabelMapping { .. })
        ));
    }

    #[test]
    fn regression_target_normalization() {
        let target = RegressionTarget {
            name: "arousal".into(),
            raw_range: (1.0, 5.0),
            normalization: Normalization::MinMaxToUnit,
        };
        assert_eq!(target.normalize(1.0), 0.0);
        assert_eq!(target.normalize(5.0), 1.0);
        assert_eq!(target.normalize(3.0), 0.5);
        assert_eq!(target.normalize(7.0), 1.0);

        let raw = RegressionTarget {
            name: "age".into(),
            raw_range: (16.0, 80.0),
            normalization: Normalization::None,
        };
        assert_eq!(raw.normalize(23.0), 23.0);
    }

    #[test]
    fn split_counts_render_dashes_for_absent_splits() {
        assert_eq!(SplitCounts::new(4620, 0, 1680).to_string(), "4620/-/1680");
        assert_eq!(
            SplitCounts::new(9986, 1108, 2609).to_string(),
            "9986/1108/2609"
        );
    }
}
