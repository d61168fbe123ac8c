//! Error type shared across the harness.
//!
//! Errors fall into three categories that map onto process exit codes:
//! configuration problems (exit 2), data/manifest problems (exit 3), and
//! run-time evaluation failures (exit 4).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Coarse classification of an error, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Run,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Run => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    // --- configuration ---
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` is already registered")]
    DuplicateTask(String),
    #[error("invalid task spec `{task}`: {reason}")]
    InvalidTaskSpec { task: String, reason: String },
    #[error("unknown extractor `{0}`")]
    UnknownExtractor(String),
    #[error("invalid extractor descriptor `{descriptor}`: {reason}")]
    InvalidDescriptor { descriptor: String, reason: String },
    #[error("invalid grid file: {0}")]
    InvalidGrid(String),

    // --- data ---
    #[error("unknown label `{raw}` for label space `{space}`")]
    UnknownLabel { raw: String, space: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("raw data for `{dataset}` not usable: {reason}")]
    RawData { dataset: String, reason: String },
    #[error("split assignment rejected: {0}")]
    SplitAssignment(String),
    #[error("filtering removed every sample from the `{0}` split")]
    FilterEmptiedSplit(String),
    #[error("label spaces `{train}` and `{test}` share no classes")]
    EmptyLabelMapping { train: String, test: String },
    #[error("audio for sample `{sample_id}` is shorter than one analysis frame")]
    AudioTooShort { sample_id: String },
    #[error("split counts for `{dataset}` do not match the recorded reference")]
    CountMismatch { dataset: String },

    // --- run ---
    #[error("checkpoint for `{0}` is not available in this environment")]
    CheckpointUnavailable(String),
    #[error("no extraction adapter registered for scheme `{0}`")]
    AdapterMissing(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint was trained against `{expected}` but run requests `{got}`")]
    CheckpointMismatch { expected: String, got: String },
    #[error("result for spec {spec_hash} already exists (use --force to re-run)")]
    RunExists { spec_hash: String },
    #[error("no stored result for spec {0}")]
    MissingResult(String),
    #[error("run failed: {0}")]
    Run(String),

    // --- wrapped foreign errors ---
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn category(&self) -> ErrorCategory {
        use HarnessError::*;
        match self {
            Config(_) | UnknownTask(_) | DuplicateTask(_) | InvalidTaskSpec { .. }
            | UnknownExtractor(_) | InvalidDescriptor { .. } | InvalidGrid(_) | Toml(_) => {
                ErrorCategory::Config
            }
            UnknownLabel { .. } | InvalidManifest(_) | RawData { .. } | SplitAssignment(_)
            | FilterEmptiedSplit(_) | EmptyLabelMapping { .. } | AudioTooShort { .. }
            | CountMismatch { .. } | Csv(_) => ErrorCategory::Data,
            _ => ErrorCategory::Run,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category().exit_code()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_category() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(
            HarnessError::InvalidManifest("dup".into()).exit_code(),
            3
        );
        assert_eq!(
            HarnessError::Divergence {
                epoch: 1,
                step: 2,
                loss: f64::NAN
            }
            .exit_code(),
            4
        );
    }
}
