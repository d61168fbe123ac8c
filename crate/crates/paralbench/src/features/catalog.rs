//! Built-in encoder roster: the two openSMILE feature sets and fourteen
//! pretrained acoustic models, with backbone metadata and checkpoint
//! references. The harness ships deterministic synthetic encoders only;
//! these entries resolve to real extractors once an adapter for their
//! checkpoint scheme (`hf:`, `fairseq:`, `opensmile:`) is registered.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::features::{ExtractorFamily, ExtractorSpec};

const CATALOG_TEXT: &str = include_str!("catalog.toml");
const CATALOG_VERSION: u32 = 1;

/// One roster entry: extractor dimensions plus provenance metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractorEntry {
    pub id: String,
    pub family: ExtractorFamily,
    pub backbone: String,
    /// Total backbone parameters, in millions (0 for toolkit feature sets).
    pub params_m: f64,
    pub training_data: Vec<String>,
    pub toolkit: String,
    pub hidden_dim: usize,
    pub num_layers: Option<usize>,
    pub checkpoint_ref: String,
    pub input_rate_hz: u32,
    #[serde(default)]
    pub frames_per_second: Option<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ExtractorEntry {
    /// Concrete extractor spec. Roster checkpoints are unpinned until the
    /// user supplies the bytes, so the version hash marks them as such;
    /// extraction without a registered adapter fails with a checkpoint
    /// availability error rather than fabricating features.
    pub fn to_spec(&self) -> ExtractorSpec {
        ExtractorSpec {
            extractor_id: self.id.clone(),
            family: self.family,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            checkpoint_ref: self.checkpoint_ref.clone(),
            input_rate_hz: self.input_rate_hz,
            version_hash: "unpinned".into(),
            window_s: 30.0,
            frames_per_second: self.frames_per_second.unwrap_or(50.0),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CatalogFile {
    version: u32,
    extractors: Vec<ExtractorEntry>,
}

/// The embedded roster, validated.
pub fn builtin_extractors() -> Vec<ExtractorEntry> {
    let file: CatalogFile =
        toml::from_str(CATALOG_TEXT).expect("embedded extractor catalog must parse");
    assert_eq!(
        file.version, CATALOG_VERSION,
        "embedded extractor catalog version drift"
    );
    file.extractors
}

/// Look up a roster entry by id.
pub fn find_extractor(id: &str) -> Result<ExtractorEntry> {
    builtin_extractors()
        .into_iter()
        .find(|e| e.id == id)
        .ok_or_else(|| HarnessError::UnknownExtractor(id.to_string()))
}
