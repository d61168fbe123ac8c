//! Leaderboard rendering over stored result records.
//!
//! A leaderboard is a pure function of the selected records: rows are
//! extractors, columns are grouped per task (WA/UA/WF1 for classification,
//! MAE for regression), cells carry three-decimal values with textual
//! rank markers for the top three per column, and identical inputs render
//! byte-identical tables. The delimited rendering carries full precision.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::MetricId;
use crate::protocols::{Protocol, ResultRecord};

/// Which records participate in a leaderboard. Empty lists select
/// everything; ids must match exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardFilter {
    pub tasks: Vec<String>,
    pub extractors: Vec<String>,
    pub protocols: Vec<Protocol>,
    pub variants: Vec<String>,
}

impl LeaderboardFilter {
    fn admits(&self, record: &ResultRecord) -> bool {
        (self.tasks.is_empty() || self.tasks.contains(&record.task_id))
            && (self.extractors.is_empty() || self.extractors.contains(&record.extractor_id))
            && (self.protocols.is_empty() || self.protocols.contains(&record.protocol))
            && (self.variants.is_empty() || self.variants.contains(&record.variant))
    }
}

/// One column group: a task and the metrics reported for it, in canonical
/// order (WA, UA, WF1, MAE).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskColumns {
    pub task_id: String,
    pub metrics: Vec<MetricId>,
}

/// One leaderboard row; cells align with the flattened column list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub extractor_id: String,
    pub cells: Vec<Option<f64>>,
}

/// Rows = extractors, column groups = task × metric. Built by
/// [`build_leaderboard`]; render with [`LeaderboardTable::render_text`] or
/// [`LeaderboardTable::render_delimited`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardTable {
    pub groups: Vec<TaskColumns>,
    pub rows: Vec<LeaderboardRow>,
}

/// Choose, per (extractor, task), the record whose primary metric is best,
/// then lay the chosen records out as a table. Tasks and extractors are
/// ordered lexicographically so the table is independent of record order.
pub fn build_leaderboard(
    records: &[ResultRecord],
    filter: &LeaderboardFilter,
) -> Result<LeaderboardTable> {
    let selected: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.outcome.success().is_some() && filter.admits(r))
        .collect();
    if selected.is_empty() {
        return Err(HarnessError::Run(
            "no successful records match the report filter".into(),
        ));
    }

    // Column groups: every metric any selected record reports for a task.
    let mut metrics_per_task: BTreeMap<&str, BTreeSet<MetricId>> = BTreeMap::new();
    let mut extractor_ids: BTreeSet<&str> = BTreeSet::new();
    for record in &selected {
        let success = record.outcome.success().expect("selected successes");
        metrics_per_task
            .entry(record.task_id.as_str())
            .or_default()
            .extend(success.metrics.values.keys().copied());
        extractor_ids.insert(record.extractor_id.as_str());
    }
    let groups: Vec<TaskColumns> = metrics_per_task
        .iter()
        .map(|(task_id, ids)| TaskColumns {
            task_id: task_id.to_string(),
            metrics: ids.iter().copied().collect(), // BTreeSet: canonical order
        })
        .collect();

    let mut rows = Vec::with_capacity(extractor_ids.len());
    for extractor_id in extractor_ids {
        let mut cells = Vec::new();
        for group in &groups {
            let primary = group.metrics[0];
            let chosen = selected
                .iter()
                .filter(|r| r.extractor_id == extractor_id && r.task_id == group.task_id)
                .min_by(|a, b| {
                    compare_for_rank(a.metric(primary), b.metric(primary), primary)
                        .then_with(|| tiebreak(a).cmp(&tiebreak(b)))
                });
            match chosen {
                Some(record) => {
                    for &metric in &group.metrics {
                        cells.push(record.metric(metric));
                    }
                }
                None => cells.extend(std::iter::repeat_n(None, group.metrics.len())),
            }
        }
        rows.push(LeaderboardRow {
            extractor_id: extractor_id.to_string(),
            cells,
        });
    }
    Ok(LeaderboardTable { groups, rows })
}

/// Ordering that puts better values first (direction depends on the
/// metric) and missing values last.
fn compare_for_rank(
    a: Option<f64>,
    b: Option<f64>,
    metric: MetricId,
) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => {
            if metric.higher_is_better() {
                y.total_cmp(&x)
            } else {
                x.total_cmp(&y)
            }
        }
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    }
}

fn tiebreak(record: &ResultRecord) -> (&str, &str, &str) {
    (&record.spec_hash, &record.variant, &record.layer)
}

/// Paper-style cell: three decimals, no leading zero inside [−1, 1].
fn format_value(v: f64) -> String {
    let s = format!("{v:.3}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

/// Competition rank of `cells[i]` within its column: 1 + the number of
/// strictly better values; ties share a rank. Only ranks 1–3 get markers.
fn rank_marker(values: &[Option<f64>], i: usize, metric: MetricId) -> Option<usize> {
    let v = values[i]?;
    let better = values
        .iter()
        .flatten()
        .filter(|&&other| {
            if metric.higher_is_better() {
                other > v
            } else {
                other < v
            }
        })
        .count();
    (better < 3).then_some(better + 1)
}

const MISSING: &str = "--";
const GROUP_SEP: &str = " | ";
const CELL_SEP: &str = "  ";

impl LeaderboardTable {
    fn flat_metrics(&self) -> Vec<MetricId> {
        self.groups
            .iter()
            .flat_map(|g| g.metrics.iter().copied())
            .collect()
    }

    /// Cell texts (value + rank marker) for one column, rows in order.
    fn column_texts(&self, col: usize, metric: MetricId) -> Vec<String> {
        let values: Vec<Option<f64>> = self.rows.iter().map(|r| r.cells[col]).collect();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Some(value) => match rank_marker(&values, i, metric) {
                    Some(rank) => format!("{}({rank})", format_value(*value)),
                    None => format_value(*value),
                },
                None => MISSING.to_string(),
            })
            .collect()
    }

    /// Fixed-width plain text: two header lines (task groups, then
    /// metrics), a rule, and one line per extractor. Deterministic byte
    /// output for a given table.
    pub fn render_text(&self) -> String {
        let metrics = self.flat_metrics();
        // Assemble all cell texts first so column widths can be computed.
        let mut columns: Vec<Vec<String>> = Vec::with_capacity(metrics.len());
        let mut col = 0;
        for group in &self.groups {
            for &metric in &group.metrics {
                columns.push(self.column_texts(col, metric));
                col += 1;
            }
        }
        let widths: Vec<usize> = metrics
            .iter()
            .zip(&columns)
            .map(|(metric, texts)| {
                texts
                    .iter()
                    .map(String::len)
                    .chain(std::iter::once(metric.as_str().len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let label_width = self
            .rows
            .iter()
            .map(|r| r.extractor_id.len())
            .chain(std::iter::once("extractor".len()))
            .max()
            .unwrap_or(0);

        // Group widths: metric columns joined by the cell separator, and at
        // least wide enough for the task id itself.
        let mut group_widths = Vec::with_capacity(self.groups.len());
        let mut spans = Vec::with_capacity(self.groups.len());
        let mut start = 0;
        for group in &self.groups {
            let end = start + group.metrics.len();
            let cells: usize = widths[start..end].iter().sum::<usize>()
                + CELL_SEP.len() * (group.metrics.len() - 1);
            group_widths.push(cells.max(group.task_id.len()));
            spans.push((start, end));
            start = end;
        }
        // Widen each group's last column to absorb a long task id.
        let mut widths = widths;
        for (g, group) in self.groups.iter().enumerate() {
            let (s, e) = spans[g];
            let cells: usize =
                widths[s..e].iter().sum::<usize>() + CELL_SEP.len() * (group.metrics.len() - 1);
            if group_widths[g] > cells {
                widths[e - 1] += group_widths[g] - cells;
            }
        }

        let mut out = String::new();
        // Header line 1: task ids over their groups.
        out.push_str(&format!("{:label_width$}", ""));
        for (g, group) in self.groups.iter().enumerate() {
            out.push_str(GROUP_SEP);
            out.push_str(&format!("{:width$}", group.task_id, width = group_widths[g]));
        }
        out.push('\n');
        // Header line 2: metric names.
        out.push_str(&format!("{:label_width$}", "extractor"));
        for (g, group) in self.groups.iter().enumerate() {
            out.push_str(GROUP_SEP);
            let (s, _) = spans[g];
            let names: Vec<String> = group
                .metrics
                .iter()
                .enumerate()
                .map(|(k, m)| format!("{:width$}", m.as_str(), width = widths[s + k]))
                .collect();
            out.push_str(&names.join(CELL_SEP));
        }
        out.push('\n');
        // Rule.
        out.push_str(&"-".repeat(label_width));
        for width in &group_widths {
            out.push_str("-+-");
            out.push_str(&"-".repeat(*width));
        }
        out.push('\n');
        // Rows.
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("{:label_width$}", row.extractor_id));
            for (g, group) in self.groups.iter().enumerate() {
                out.push_str(GROUP_SEP);
                let (s, _) = spans[g];
                let cells: Vec<String> = group
                    .metrics
                    .iter()
                    .enumerate()
                    .map(|(k, _)| format!("{:width$}", columns[s + k][i], width = widths[s + k]))
                    .collect();
                out.push_str(&cells.join(CELL_SEP));
            }
            // No trailing spaces: keep lines byte-stable under width changes.
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        out
    }

    /// Machine-readable rendering: one header line (`extractor`, then
    /// `task:METRIC` per column), full-precision values, empty cells for
    /// missing entries.
    pub fn render_delimited(&self, separator: char) -> String {
        let mut out = String::from("extractor");
        for group in &self.groups {
            for metric in &group.metrics {
                out.push(separator);
                out.push_str(&format!("{}:{}", group.task_id, metric.as_str()));
            }
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.extractor_id);
            for cell in &row.cells {
                out.push(separator);
                if let Some(v) = cell {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}
