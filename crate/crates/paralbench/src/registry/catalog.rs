//! Versioned TOML catalog format for tasks and datasets.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{HarnessError, Result};
use crate::metrics::MetricId;

use super::{
    DatasetSpec, DefaultSplit, LabelSpace, Normalization, RegressionTarget, SplitCounts,
    TaskKind, TaskSpec, Taxonomy,
};

pub const CATALOG_VERSION: u32 = 1;

/// Parsed catalog: datasets plus validated task specs, ready to merge into a
/// registry.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub datasets: Vec<DatasetSpec>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    version: u32,
    #[serde(default)]
    datasets: Vec<DatasetRecord>,
    #[serde(default)]
    tasks: Vec<TaskRecord>,
}

#[derive(Debug, Deserialize)]
struct DatasetRecord {
    id: String,
    name: String,
    split_policy: String,
    expected_counts: Option<SplitCounts>,
    default_split: Option<DefaultSplit>,
    #[serde(default)]
    notes: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TargetRecord {
    name: String,
    raw_range: [f64; 2],
    normalization: Normalization,
}

#[derive(Debug, Deserialize)]
struct TaskRecord {
    id: String,
    dataset: String,
    taxonomy: Taxonomy,
    kind: TaskKind,
    #[serde(default)]
    classes: Vec<String>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    target: Option<TargetRecord>,
    metrics: Vec<MetricId>,
    #[serde(default)]
    inferred: bool,
    #[serde(default)]
    notes: Vec<String>,
}

/// Parse and validate a catalog document.
pub fn parse_catalog(text: &str) -> Result<Catalog> {
    let file: CatalogFile = toml::from_str(text)?;
    if file.version != CATALOG_VERSION {
        return Err(HarnessError::Config(format!(
            "unsupported catalog version {} (expected {CATALOG_VERSION})",
            file.version
        )));
    }
    let datasets = file
        .datasets
        .into_iter()
        .map(|d| DatasetSpec {
            dataset_id: d.id,
            name: d.name,
            split_policy: d.split_policy,
            expected_counts: d.expected_counts,
            default_split: d.default_split,
            notes: d.notes,
        })
        .collect();
    let mut tasks = Vec::new();
    for record in file.tasks {
        let label_space = if record.classes.is_empty() {
            None
        } else {
            Some(LabelSpace::new(
                &record.id,
                &record.classes,
                &record.aliases,
            )?)
        };
        let target = record.target.map(|t| RegressionTarget {
            name: t.name,
            raw_range: (t.raw_range[0], t.raw_range[1]),
            normalization: t.normalization,
        });
        let task = TaskSpec {
            task_id: record.id,
            dataset_id: record.dataset,
            taxonomy: record.taxonomy,
            kind: record.kind,
            label_space,
            target,
            metrics: record.metrics,
            inferred_label_set: record.inferred,
            notes: record.notes,
        };
        task.validate()?;
        tasks.push(task);
    }
    Ok(Catalog { datasets, tasks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_user_catalog() {
        let text = r#"
            version = 1

            [[tasks]]
            id = "demo-binary"
            dataset = "demo"
            taxonomy = "short"
            kind = "classification"
            classes = ["no", "yes"]
            metrics = ["wa", "ua", "wf1"]
        "#;
        let catalog = parse_catalog(text).unwrap();
        assert_eq!(catalog.tasks.len(), 1);
        assert_eq!(catalog.tasks[0].label_space.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn rejects_wrong_version_and_invalid_tasks() {
        assert!(parse_catalog("version = 99").is_err());
        let bad = r#"
            version = 1

            [[tasks]]
            id = "demo"
            dataset = "demo"
            taxonomy = "short"
            kind = "classification"
            classes = ["only"]
            metrics = ["wa"]
        "#;
        assert!(parse_catalog(bad).is_err());
    }
}
