//! Feature extraction behind a uniform encoder contract and an on-disk
//! cache.
//!
//! An [`ExtractorSpec`] names an encoder (family, dimensions, checkpoint
//! reference, version pin); adapters registered per checkpoint-reference
//! scheme do the actual signal→array work. Extraction results are cached as
//! raw 32-bit floats plus a sidecar metadata file, keyed by a digest over
//! everything that determines the payload, so a cache hit never touches the
//! encoder. Clips longer than the extractor window are chunked and the
//! overlapping frames mean-pooled back onto a single frame grid.

pub mod backbone;
pub mod catalog;
pub mod synth_adapters;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::audio::{read_wav, resample_linear, Waveform};
use crate::corpus::{synthetic, Sample};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorFamily {
    /// Pretrained encoder emitting per-layer frame sequences.
    SslSequence,
    /// Toolkit-computed clip-level feature vector.
    HandcraftedVector,
    /// Deterministic test-double encoder.
    Synthetic,
}

/// Encoder description; the uniform handle every stage works through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub extractor_id: String,
    pub family: ExtractorFamily,
    pub hidden_dim: usize,
    /// Sequence families only.
    pub num_layers: Option<usize>,
    /// Opaque `scheme:rest` reference; the scheme selects the adapter.
    pub checkpoint_ref: String,
    pub input_rate_hz: u32,
    /// Pins the checkpoint bytes; part of every cache key.
    pub version_hash: String,
    /// Clips longer than this are chunked (seconds).
    pub window_s: f64,
    /// Frame rate of sequence outputs.
    pub frames_per_second: f64,
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(HarnessError::InvalidDescriptor {
                descriptor: self.extractor_id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be positive");
        }
        if self.version_hash.is_empty() {
            return fail("version_hash must be populated");
        }
        match self.family {
            ExtractorFamily::SslSequence | ExtractorFamily::Synthetic => {
                if self.num_layers.is_none_or(|l| l == 0) {
                    return fail("sequence families need num_layers >= 1");
                }
                if self.frames_per_second <= 0.0 || self.window_s <= 0.0 {
                    return fail("sequence families need positive frame rate and window");
                }
            }
            ExtractorFamily::HandcraftedVector => {
                if self.num_layers.is_some() {
                    return fail("vector extractors have no layer stack");
                }
            }
        }
        Ok(())
    }

    /// Samples per output frame at the extractor's input rate.
    pub fn frame_len(&self) -> usize {
        (self.input_rate_hz as f64 / self.frames_per_second).round() as usize
    }

    pub fn scheme(&self) -> &str {
        self.checkpoint_ref
            .split_once(':')
            .map(|(s, _)| s)
            .unwrap_or(self.checkpoint_ref.as_str())
    }
}

/// Which representation to pull out of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "k", rename_all = "snake_case")]
pub enum LayerSpec {
    LastHidden,
    Index(usize),
    AllLayers,
    FixedVector,
}

impl LayerSpec {
    /// Canonical string used in cache keys and file metadata.
    pub fn canonical(&self) -> String {
        match self {
            LayerSpec::LastHidden => "last_hidden".into(),
            LayerSpec::Index(k) => format!("index:{k}"),
            LayerSpec::AllLayers => "all_layers".into(),
            LayerSpec::FixedVector => "fixed_vector".into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fail = || HarnessError::InvalidDescriptor {
            descriptor: text.to_string(),
            reason: "unknown layer selector".into(),
        };
        match text {
            "last_hidden" => Ok(LayerSpec::LastHidden),
            "all_layers" => Ok(LayerSpec::AllLayers),
            "fixed_vector" => Ok(LayerSpec::FixedVector),
            other => {
                let k = other.strip_prefix("index:").ok_or_else(fail)?;
                Ok(LayerSpec::Index(k.parse().map_err(|_| fail())?))
            }
        }
    }

    /// Check compatibility with an extractor.
    pub fn validate_for(&self, spec: &ExtractorSpec) -> Result<()> {
        let fail = |reason: String| {
            Err(HarnessError::InvalidDescriptor {
                descriptor: format!("{}/{}", spec.extractor_id, self.canonical()),
                reason,
            })
        };
        match (self, spec.family) {
            (LayerSpec::FixedVector, ExtractorFamily::HandcraftedVector) => Ok(()),
            (_, ExtractorFamily::HandcraftedVector) => {
                fail("vector extractors only support fixed_vector".into())
            }
            (LayerSpec::FixedVector, _) => {
                fail("fixed_vector only pairs with vector extractors".into())
            }
            (LayerSpec::Index(k), _) => {
                let layers = spec.num_layers.unwrap_or(0);
                if *k >= layers {
                    fail(format!("layer index {k} out of range (num_layers={layers})"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Audio preprocessing applied before the encoder; part of the cache key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocParams {
    pub target_rate_hz: u32,
    pub window_s: f64,
    pub overlap_s: f64,
}

impl PreprocParams {
    pub fn for_spec(spec: &ExtractorSpec) -> Self {
        PreprocParams {
            target_rate_hz: spec.input_rate_hz,
            window_s: spec.window_s,
            overlap_s: DEFAULT_OVERLAP_S,
        }
    }

    pub fn canonical(&self) -> String {
        format!(
            "rate={};mono;window={};overlap={}",
            self.target_rate_hz, self.window_s, self.overlap_s
        )
    }
}

/// Chunk overlap for long-clip stitching (seconds).
pub const DEFAULT_OVERLAP_S: f64 = 1.0;

/// One extracted payload: `(L, h)`, `(num_layers, L, h)`, or `(h,)` floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub sample_id: String,
    pub extractor_id: String,
    pub layer: LayerSpec,
    pub shape: Vec<usize>,
    pub payload: Vec<f32>,
    pub cache_key: String,
}

impl FeatureRecord {
    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.shape.iter().product();
        if self.shape.is_empty() || expected != self.payload.len() {
            return Err(HarnessError::ShapeMismatch {
                context: format!("feature record for `{}`", self.sample_id),
                expected: format!("{:?} ({expected} values)", self.shape),
                got: format!("{} values", self.payload.len()),
            });
        }
        let rank_ok = match self.layer {
            LayerSpec::FixedVector => self.shape.len() == 1,
            LayerSpec::AllLayers => self.shape.len() == 3,
            _ => self.shape.len() == 2,
        };
        if !rank_ok {
            return Err(HarnessError::ShapeMismatch {
                context: format!("feature record for `{}`", self.sample_id),
                expected: format!("rank matching {}", self.layer.canonical()),
                got: format!("{:?}", self.shape),
            });
        }
        if self.payload.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::NonFinite(format!(
                "feature payload for `{}`",
                self.sample_id
            )));
        }
        Ok(())
    }

    /// `(L, h)` view for single-layer sequence payloads.
    pub fn sequence_view(&self) -> Result<ArrayView2<'_, f32>> {
        if self.shape.len() != 2 {
            return Err(HarnessError::ShapeMismatch {
                context: format!("sequence view for `{}`", self.sample_id),
                expected: "(L, h)".into(),
                got: format!("{:?}", self.shape),
            });
        }
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.payload).map_err(|e| {
            HarnessError::ShapeMismatch {
                context: "sequence view".into(),
                expected: format!("{:?}", self.shape),
                got: e.to_string(),
            }
        })
    }

    /// `(num_layers, L, h)` view for all-layers payloads.
    pub fn layers_view(&self) -> Result<ArrayView3<'_, f32>> {
        if self.shape.len() != 3 {
            return Err(HarnessError::ShapeMismatch {
                context: format!("layers view for `{}`", self.sample_id),
                expected: "(num_layers, L, h)".into(),
                got: format!("{:?}", self.shape),
            });
        }
        ArrayView3::from_shape(
            (self.shape[0], self.shape[1], self.shape[2]),
            &self.payload,
        )
        .map_err(|e| HarnessError::ShapeMismatch {
            context: "layers view".into(),
            expected: format!("{:?}", self.shape),
            got: e.to_string(),
        })
    }

    /// `(h,)` slice for fixed-vector payloads.
    pub fn vector_view(&self) -> Result<&[f32]> {
        if self.shape.len() != 1 {
            return Err(HarnessError::ShapeMismatch {
                context: format!("vector view for `{}`", self.sample_id),
                expected: "(h,)".into(),
                got: format!("{:?}", self.shape),
            });
        }
        Ok(&self.payload)
    }
}

/// Collision-resistant digest over everything that determines a payload.
pub fn cache_key(
    spec: &ExtractorSpec,
    sample_id: &str,
    layer: &LayerSpec,
    preproc: &PreprocParams,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-cache-key\n");
    hasher.update(spec.extractor_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(spec.version_hash.as_bytes());
    hasher.update(b"\n");
    hasher.update(layer.canonical().as_bytes());
    hasher.update(b"\n");
    hasher.update(sample_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(preproc.canonical().as_bytes());
    hex::encode(hasher.finalize())
}

/// Adapter contract: turn preprocessed audio into a feature array. The
/// engine owns windowing, validation, and caching; adapters only see one
/// chunk at a time.
pub trait Adapter {
    fn extract(
        &self,
        spec: &ExtractorSpec,
        waveform: &Waveform,
        layer: &LayerSpec,
    ) -> Result<(Vec<usize>, Vec<f32>)>;
}

/// Adapter registry plus an invocation counter (used by cache tests to
/// prove that hits perform no encoder work).
pub struct ExtractionEngine {
    adapters: BTreeMap<String, Box<dyn Adapter>>,
    calls: AtomicU64,
}

impl Default for ExtractionEngine {
    fn default() -> Self {
        Self::with_default_adapters()
    }
}

impl ExtractionEngine {
    pub fn empty() -> Self {
        ExtractionEngine {
            adapters: BTreeMap::new(),
            calls: AtomicU64::new(0),
        }
    }

    /// Engine with the built-in deterministic adapters registered:
    /// `synthetic` (layered sequences), `synthvec` (fixed vectors), and
    /// `backbone` (the adaptable synthetic transformer encoder).
    pub fn with_default_adapters() -> Self {
        let mut engine = Self::empty();
        engine.register_adapter("synthetic", Box::new(synth_adapters::SyntheticSequence));
        engine.register_adapter("synthvec", Box::new(synth_adapters::SyntheticVector));
        engine.register_adapter("backbone", Box::new(backbone::BackboneAdapter::default()));
        engine
    }

    /// Register (or replace) the adapter for a checkpoint-reference scheme.
    pub fn register_adapter(&mut self, scheme: &str, adapter: Box<dyn Adapter>) {
        self.adapters.insert(scheme.to_string(), adapter);
    }

    pub fn has_adapter(&self, scheme: &str) -> bool {
        self.adapters.contains_key(scheme)
    }

    /// Number of adapter invocations so far (chunked clips count once per
    /// chunk).
    pub fn adapter_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Full extraction for one sample: decode / synthesize, resample,
    /// window, run the adapter, stitch, validate.
    pub fn extract(
        &self,
        spec: &ExtractorSpec,
        sample: &Sample,
        layer: &LayerSpec,
    ) -> Result<FeatureRecord> {
        spec.validate()?;
        layer.validate_for(spec)?;
        let adapter = self
            .adapters
            .get(spec.scheme())
            .ok_or_else(|| HarnessError::CheckpointUnavailable(spec.checkpoint_ref.clone()))?;
        let waveform = load_waveform(sample, spec.input_rate_hz)?;
        if spec.family != ExtractorFamily::HandcraftedVector
            && waveform.samples.len() < spec.frame_len()
        {
            return Err(HarnessError::AudioTooShort {
                sample_id: sample.sample_id.clone(),
            });
        }
        let preproc = PreprocParams::for_spec(spec);
        let (shape, payload) = self.windowed_extract(adapter.as_ref(), spec, &waveform, layer)?;
        let record = FeatureRecord {
            sample_id: sample.sample_id.clone(),
            extractor_id: spec.extractor_id.clone(),
            layer: *layer,
            shape,
            payload,
            cache_key: cache_key(spec, &sample.sample_id, layer, &preproc),
        };
        record.validate()?;
        Ok(record)
    }

    /// Run the adapter over window-sized chunks and mean-pool overlapping
    /// frames back onto the clip's frame grid. Short clips take the direct
    /// single-call path.
    fn windowed_extract(
        &self,
        adapter: &dyn Adapter,
        spec: &ExtractorSpec,
        waveform: &Waveform,
        layer: &LayerSpec,
    ) -> Result<(Vec<usize>, Vec<f32>)> {
        let run = |wf: &Waveform| {
            self.calls.fetch_add(1, Ordering::Relaxed);
            adapter.extract(spec, wf, layer)
        };
        let window_samples = (spec.window_s * spec.input_rate_hz as f64).round() as usize;
        if waveform.samples.len() <= window_samples {
            return run(waveform);
        }
        if spec.family == ExtractorFamily::HandcraftedVector {
            // Length-weighted mean of per-chunk vectors.
            let mut acc: Vec<f64> = Vec::new();
            let mut total_weight = 0.0f64;
            let step = window_samples
                - (DEFAULT_OVERLAP_S * spec.input_rate_hz as f64).round() as usize;
            let mut start = 0;
            while start < waveform.samples.len() {
                let end = (start + window_samples).min(waveform.samples.len());
                let chunk = Waveform {
                    samples: waveform.samples[start..end].to_vec(),
                    rate_hz: waveform.rate_hz,
                };
                let (shape, payload) = run(&chunk)?;
                if shape != vec![spec.hidden_dim] {
                    return Err(HarnessError::ShapeMismatch {
                        context: "vector chunk".into(),
                        expected: format!("[{}]", spec.hidden_dim),
                        got: format!("{shape:?}"),
                    });
                }
                if acc.is_empty() {
                    acc = vec![0.0; payload.len()];
                }
                let weight = (end - start) as f64;
                for (a, v) in acc.iter_mut().zip(payload.iter()) {
                    *a += weight * *v as f64;
                }
                total_weight += weight;
                if end == waveform.samples.len() {
                    break;
                }
                start += step;
            }
            let vector: Vec<f32> = acc.iter().map(|a| (*a / total_weight) as f32).collect();
            return Ok((vec![spec.hidden_dim], vector));
        }

        // Sequence families: chunk on whole-frame boundaries.
        let frame_len = spec.frame_len();
        let total_frames = waveform.samples.len() / frame_len;
        let window_frames = window_samples / frame_len;
        let overlap_frames =
            ((DEFAULT_OVERLAP_S * spec.input_rate_hz as f64).round() as usize / frame_len).max(1);
        let step_frames = window_frames - overlap_frames;
        let h = spec.hidden_dim;
        let layers = match layer {
            LayerSpec::AllLayers => spec.num_layers.unwrap_or(1),
            _ => 1,
        };
        let mut acc = vec![0.0f64; layers * total_frames * h];
        let mut counts = vec![0u32; total_frames];
        let mut start_frame = 0;
        while start_frame < total_frames {
            let chunk_frames = (total_frames - start_frame).min(window_frames);
            let start = start_frame * frame_len;
            let end = ((start_frame + chunk_frames) * frame_len).min(waveform.samples.len());
            let chunk = Waveform {
                samples: waveform.samples[start..end].to_vec(),
                rate_hz: waveform.rate_hz,
            };
            let (shape, payload) = run(&chunk)?;
            let expected_shape = match layer {
                LayerSpec::AllLayers => vec![layers, chunk_frames, h],
                _ => vec![chunk_frames, h],
            };
            if shape != expected_shape {
                return Err(HarnessError::ShapeMismatch {
                    context: "sequence chunk".into(),
                    expected: format!("{expected_shape:?}"),
                    got: format!("{shape:?}"),
                });
            }
            for l in 0..layers {
                for f in 0..chunk_frames {
                    let global = start_frame + f;
                    let src = (l * chunk_frames + f) * h;
                    let dst = (l * total_frames + global) * h;
                    for j in 0..h {
                        acc[dst + j] += payload[src + j] as f64;
                    }
                }
            }
            for f in 0..chunk_frames {
                counts[start_frame + f] += 1;
            }
            if start_frame + chunk_frames >= total_frames {
                break;
            }
            start_frame += step_frames;
        }
        let mut stitched = vec![0.0f32; layers * total_frames * h];
        for l in 0..layers {
            for f in 0..total_frames {
                let n = counts[f].max(1) as f64;
                let at = (l * total_frames + f) * h;
                for j in 0..h {
                    stitched[at + j] = (acc[at + j] / n) as f32;
                }
            }
        }
        let shape = match layer {
            LayerSpec::AllLayers => vec![layers, total_frames, h],
            _ => vec![total_frames, h],
        };
        Ok((shape, stitched))
    }
}

/// Decode a sample's audio (file or synthetic descriptor), downmixed to
/// mono and resampled to the extractor's input rate.
pub fn load_waveform(sample: &Sample, target_rate_hz: u32) -> Result<Waveform> {
    let wf = if synthetic::is_descriptor(&sample.audio_ref) {
        synthetic::synthesize(&sample.audio_ref)?
    } else {
        let path = Path::new(&sample.audio_ref);
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("wav") => read_wav(path)?,
            other => {
                return Err(HarnessError::RawData {
                    dataset: sample.sample_id.clone(),
                    reason: format!(
                        "no decoder for container `{}`; transcode to wav first",
                        other.unwrap_or("<none>")
                    ),
                })
            }
        }
    };
    Ok(if wf.rate_hz == target_rate_hz {
        wf
    } else {
        resample_linear(&wf, target_rate_hz)
    })
}

/// What the cache did for one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheEvent {
    Hit,
    Miss,
    /// A corrupt entry was invalidated and the payload re-extracted.
    Reextracted,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheMeta {
    cache_key: String,
    sample_id: String,
    extractor_id: String,
    version_hash: String,
    layer: String,
    shape: Vec<usize>,
    dtype: String,
    preproc: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    cache_key: String,
    sample_id: String,
    layer: String,
    shape: Vec<usize>,
}

/// On-disk feature store: `root/extractor_id/version_hash/<key>.bin` (raw
/// little-endian f32) plus `<key>.meta` (layout descriptor), and an
/// advisory `index.jsonl` per extractor. Writes are temp-file-then-rename,
/// payload before metadata, so a visible meta file always describes a
/// complete payload.
pub struct FeatureCache {
    root: PathBuf,
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_dir(&self, spec: &ExtractorSpec) -> PathBuf {
        self.root.join(&spec.extractor_id).join(&spec.version_hash)
    }

    fn entry_paths(&self, spec: &ExtractorSpec, key: &str) -> (PathBuf, PathBuf) {
        let dir = self.entry_dir(spec);
        (dir.join(format!("{key}.bin")), dir.join(format!("{key}.meta")))
    }

    /// Serve from cache or extract-and-store. Returns what happened so
    /// callers can assert cache behavior and log invalidations.
    pub fn get_or_extract(
        &self,
        engine: &ExtractionEngine,
        spec: &ExtractorSpec,
        sample: &Sample,
        layer: &LayerSpec,
    ) -> Result<(FeatureRecord, CacheEvent)> {
        spec.validate()?;
        layer.validate_for(spec)?;
        let preproc = PreprocParams::for_spec(spec);
        let key = cache_key(spec, &sample.sample_id, layer, &preproc);
        let (bin_path, meta_path) = self.entry_paths(spec, &key);

        let existed = meta_path.exists() || bin_path.exists();
        if existed {
            match self.try_load(&bin_path, &meta_path, &key, sample, *layer) {
                Ok(record) => return Ok((record, CacheEvent::Hit)),
                Err(_) => {
                    // Invalidate both halves of the corrupt entry.
                    let _ = std::fs::remove_file(&bin_path);
                    let _ = std::fs::remove_file(&meta_path);
                }
            }
        }
        let record = engine.extract(spec, sample, layer)?;
        self.store(spec, &record, &preproc)?;
        Ok((
            record,
            if existed {
                CacheEvent::Reextracted
            } else {
                CacheEvent::Miss
            },
        ))
    }

    fn try_load(
        &self,
        bin_path: &Path,
        meta_path: &Path,
        key: &str,
        sample: &Sample,
        layer: LayerSpec,
    ) -> Result<FeatureRecord> {
        let meta: CacheMeta = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        let corrupt = |reason: &str| HarnessError::Run(format!("cache entry {key}: {reason}"));
        if meta.cache_key != key || meta.dtype != "f32" {
            return Err(corrupt("metadata does not match request"));
        }
        let bytes = std::fs::read(bin_path)?;
        let expected: usize = meta.shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(corrupt("payload length mismatch"));
        }
        let payload: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let record = FeatureRecord {
            sample_id: sample.sample_id.clone(),
            extractor_id: meta.extractor_id,
            layer,
            shape: meta.shape,
            payload,
            cache_key: key.to_string(),
        };
        record.validate()?;
        Ok(record)
    }

    /// Atomic write: payload first, metadata second, both via rename.
    fn store(
        &self,
        spec: &ExtractorSpec,
        record: &FeatureRecord,
        preproc: &PreprocParams,
    ) -> Result<()> {
        let dir = self.entry_dir(spec);
        std::fs::create_dir_all(&dir)?;
        let (bin_path, meta_path) = self.entry_paths(spec, &record.cache_key);

        let mut bytes = Vec::with_capacity(record.payload.len() * 4);
        for v in &record.payload {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        atomic_write(&bin_path, &bytes)?;

        let meta = CacheMeta {
            cache_key: record.cache_key.clone(),
            sample_id: record.sample_id.clone(),
            extractor_id: record.extractor_id.clone(),
            version_hash: spec.version_hash.clone(),
            layer: record.layer.canonical(),
            shape: record.shape.clone(),
            dtype: "f32".into(),
            preproc: preproc.canonical(),
        };
        atomic_write(&meta_path, serde_json::to_string(&meta)?.as_bytes())?;

        let index_line = serde_json::to_string(&IndexEntry {
            cache_key: record.cache_key.clone(),
            sample_id: record.sample_id.clone(),
            layer: record.layer.canonical(),
            shape: record.shape.clone(),
        })?;
        let index_path = self.root.join(&spec.extractor_id).join("index.jsonl");
        use std::io::Write;
        let mut index = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(index_path)?;
        writeln!(index, "{index_line}")?;
        Ok(())
    }

    /// Number of advisory index entries recorded for an extractor.
    pub fn index_len(&self, extractor_id: &str) -> Result<usize> {
        let path = self.root.join(extractor_id).join("index.jsonl");
        if !path.exists() {
            return Ok(0);
        }
        Ok(std::fs::read_to_string(path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .count())
    }
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().ok_or_else(|| {
        HarnessError::Run(format!("cache path {} has no parent", path.display()))
    })?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    use std::io::Write;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| HarnessError::Io(e.error))?;
    Ok(())
}
