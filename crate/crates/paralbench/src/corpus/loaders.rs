//! Raw-corpus loaders: native layouts for the freely structured corpora
//! (TIMIT directory tree, MELD annotation CSVs) and a generic partitions
//! CSV for licensed datasets whose audio the user acquires separately.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::audio::probe_duration;
use crate::corpus::{LabelValue, Manifest, Sample, Split};
use crate::error::{HarnessError, Result};

/// Load a dataset from its native on-disk layout. TIMIT and MELD have
/// dedicated walkers; everything else loads from `paralbench-partitions.csv`
/// under the dataset root.
pub fn load_dataset(dataset_id: &str, root: &Path) -> Result<Manifest> {
    match dataset_id {
        "timit" => load_timit(root),
        "meld" => load_meld(root),
        _ => load_partitions_csv(dataset_id, root),
    }
}

fn raw_err(dataset: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::RawData {
        dataset: dataset.to_string(),
        reason: reason.into(),
    }
}

/// TIMIT tree: `{TRAIN,TEST}/DR<k>/<SPEAKER>/<UTT>.wav` (case-insensitive).
/// Audio may be RIFF or NIST SPHERE; unreadable files are collected and
/// reported, not silently dropped.
pub fn load_timit(root: &Path) -> Result<Manifest> {
    let mut samples = Vec::new();
    let mut unreadable: Vec<String> = Vec::new();
    let mut saw_split_dir = false;
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| raw_err("timit", e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        if !path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        {
            continue;
        }
        let rel: Vec<String> = path
            .strip_prefix(root)
            .map_err(|_| raw_err("timit", "walker escaped the dataset root"))?
            .components()
            .map(|c| c.as_os_str().to_string_lossy().to_lowercase())
            .collect();
        // Expect split/dialect/speaker/utterance.wav; skip stray files.
        if rel.len() != 4 {
            continue;
        }
        let split = match rel[0].as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            _ => continue,
        };
        saw_split_dir = true;
        let dialect = rel[1].clone();
        if !dialect.starts_with("dr") {
            continue;
        }
        let speaker = rel[2].clone();
        let sentence = rel[3].trim_end_matches(".wav").to_string();
        let (rate_hz, duration_s) = match probe_duration(path) {
            Ok(v) => v,
            Err(e) => {
                unreadable.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let mut labels = BTreeMap::new();
        labels.insert(
            "timit-dialect".to_string(),
            LabelValue::Class(dialect.clone()),
        );
        let mut group_keys = BTreeMap::new();
        group_keys.insert("speaker".to_string(), speaker.clone());
        group_keys.insert("dialect".to_string(), dialect);
        group_keys.insert("sentence".to_string(), sentence.clone());
        samples.push(Sample {
            sample_id: format!("{speaker}_{sentence}"),
            audio_ref: path.display().to_string(),
            sample_rate_hz: rate_hz,
            duration_s,
            labels,
            split,
            group_keys,
        });
    }
    if !unreadable.is_empty() {
        let shown: Vec<&str> = unreadable.iter().take(10).map(|s| s.as_str()).collect();
        return Err(raw_err(
            "timit",
            format!(
                "{} unreadable audio files: {}{}",
                unreadable.len(),
                shown.join("; "),
                if unreadable.len() > 10 { "; ..." } else { "" }
            ),
        ));
    }
    if !saw_split_dir || samples.is_empty() {
        return Err(raw_err(
            "timit",
            format!(
                "no TRAIN/TEST utterances found under {}",
                root.display()
            ),
        ));
    }
    Ok(Manifest {
        dataset_id: "timit".into(),
        split_policy_id: "official".into(),
        policy_params: BTreeMap::new(),
        samples,
    })
}

/// Parse an "hh:mm:ss,mmm" timestamp into seconds.
fn parse_timestamp(text: &str) -> Option<f64> {
    let (hms, millis) = match text.trim().split_once(',') {
        Some((a, b)) => (a, b.parse::<f64>().ok()? / 1000.0),
        None => (text.trim(), 0.0),
    };
    let mut parts = hms.split(':');
    let h: f64 = parts.next()?.parse().ok()?;
    let m: f64 = parts.next()?.parse().ok()?;
    let s: f64 = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(h * 3600.0 + m * 60.0 + s + millis)
}

/// MELD ships per-split annotation CSVs (`train_sent_emo.csv`,
/// `dev_sent_emo.csv`, `test_sent_emo.csv`); utterance clips are
/// `dia<D>_utt<U>.mp4` under per-split directories. Only the CSVs are
/// required here — clip files are referenced, not opened.
pub fn load_meld(root: &Path) -> Result<Manifest> {
    let mut samples = Vec::new();
    let parts: [(&str, Split, &str); 3] = [
        ("train_sent_emo.csv", Split::Train, "train"),
        ("dev_sent_emo.csv", Split::Validation, "dev"),
        ("test_sent_emo.csv", Split::Test, "test"),
    ];
    for (file, split, split_name) in parts {
        let path = root.join(file);
        if !path.exists() {
            return Err(raw_err(
                "meld",
                format!("missing partition file {}", path.display()),
            ));
        }
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(&path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| raw_err("meld", format!("{file} lacks column {name}")))
        };
        let c_emotion = col("Emotion")?;
        let c_sentiment = col("Sentiment")?;
        let c_dialogue = col("Dialogue_ID")?;
        let c_utterance = col("Utterance_ID")?;
        let c_season = col("Season")?;
        let c_episode = col("Episode")?;
        let c_start = col("StartTime")?;
        let c_end = col("EndTime")?;
        for record in reader.records() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
            let dialogue = field(c_dialogue);
            let utterance = field(c_utterance);
            let start = parse_timestamp(&field(c_start));
            let end = parse_timestamp(&field(c_end));
            let duration_s = match (start, end) {
                (Some(a), Some(b)) => (b - a).max(0.01),
                _ => 0.01, // malformed timestamps: keep the sample, minimal duration
            };
            let mut labels = BTreeMap::new();
            labels.insert(
                "meld-emotion".to_string(),
                LabelValue::Class(field(c_emotion)),
            );
            labels.insert(
                "meld-sentiment".to_string(),
                LabelValue::Class(field(c_sentiment)),
            );
            let mut group_keys = BTreeMap::new();
            group_keys.insert("dialogue".to_string(), format!("{split_name}-dia{dialogue}"));
            group_keys.insert("season".to_string(), field(c_season));
            group_keys.insert("episode".to_string(), field(c_episode));
            samples.push(Sample {
                sample_id: format!("meld-{split_name}-dia{dialogue}-utt{utterance}"),
                audio_ref: root
                    .join(split_name)
                    .join(format!("dia{dialogue}_utt{utterance}.mp4"))
                    .display()
                    .to_string(),
                sample_rate_hz: 16_000, // nominal; decoding happens at extraction
                duration_s,
                labels,
                split,
                group_keys,
            });
        }
    }
    Ok(Manifest {
        dataset_id: "meld".into(),
        split_policy_id: "official".into(),
        policy_params: BTreeMap::new(),
        samples,
    })
}

/// Name of the generic partitions file.
pub const PARTITIONS_FILE: &str = "paralbench-partitions.csv";

/// Generic loader for licensed corpora: the user exports one CSV with
/// columns `sample_id, audio_ref, sample_rate_hz, duration_s, split,
/// labels, group_keys`. `labels` and `group_keys` are `;`-separated pairs;
/// class labels use `task=value`, scalar targets use `task:=value`.
pub fn load_partitions_csv(dataset_id: &str, root: &Path) -> Result<Manifest> {
    let path: PathBuf = root.join(PARTITIONS_FILE);
    if !path.exists() {
        return Err(raw_err(
            dataset_id,
            format!(
                "no native loader; expected {} (columns: sample_id, audio_ref, \
                 sample_rate_hz, duration_s, split, labels, group_keys)",
                path.display()
            ),
        ));
    }
    let mut reader = csv::Reader::from_path(&path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| raw_err(dataset_id, format!("partitions file lacks column {name}")))
    };
    let c_id = col("sample_id")?;
    let c_ref = col("audio_ref")?;
    let c_rate = col("sample_rate_hz")?;
    let c_dur = col("duration_s")?;
    let c_split = col("split")?;
    let c_labels = col("labels")?;
    let c_groups = col("group_keys")?;
    let mut samples = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let row_err =
            |reason: String| raw_err(dataset_id, format!("row {}: {reason}", idx + 2));
        let sample_rate_hz: u32 = field(c_rate)
            .parse()
            .map_err(|_| row_err("bad sample_rate_hz".into()))?;
        let duration_s: f64 = field(c_dur)
            .parse()
            .map_err(|_| row_err("bad duration_s".into()))?;
        let split = Split::parse(&field(c_split))?;
        let mut labels = BTreeMap::new();
        for pair in field(c_labels).split(';').filter(|p| !p.is_empty()) {
            if let Some((task, value)) = pair.split_once(":=") {
                let v: f64 = value
                    .trim()
                    .parse()
                    .map_err(|_| row_err(format!("bad scalar label `{pair}`")))?;
                labels.insert(task.trim().to_string(), LabelValue::Scalar(v));
            } else if let Some((task, value)) = pair.split_once('=') {
                labels.insert(
                    task.trim().to_string(),
                    LabelValue::Class(value.trim().to_string()),
                );
            } else {
                return Err(row_err(format!("malformed label pair `{pair}`")));
            }
        }
        let mut group_keys = BTreeMap::new();
        for pair in field(c_groups).split(';').filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| row_err(format!("malformed group pair `{pair}`")))?;
            group_keys.insert(key.trim().to_string(), value.trim().to_string());
        }
        samples.push(Sample {
            sample_id: field(c_id),
            audio_ref: field(c_ref),
            sample_rate_hz,
            duration_s,
            labels,
            split,
            group_keys,
        });
    }
    Ok(Manifest {
        dataset_id: dataset_id.to_string(),
        split_policy_id: "official".into(),
        policy_params: BTreeMap::new(),
        samples,
    })
}
