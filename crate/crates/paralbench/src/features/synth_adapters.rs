//! Deterministic test-double extractors.
//!
//! The sequence extractor emits `num_layers` per-frame representations: one
//! designated layer linearly embeds the 16-value signature recovered from
//! the audio (classes become linearly separable there), every other layer
//! is pure keyed noise. That construction is what layer-sweep and fusion
//! tests lean on. The vector extractor embeds the clip-level signature into
//! a fixed-size vector, exercising the handcrafted-feature path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::corpus::audio::Waveform;
use crate::corpus::synthetic::SIGNATURE_DIM;
use crate::error::{HarnessError, Result};
use crate::features::{Adapter, ExtractorFamily, ExtractorSpec, LayerSpec};

/// Noise amplitude added on top of the informative layer's embedding.
const INFORMATIVE_NOISE: f64 = 0.05;

/// Build the layered synthetic extractor. The informative layer defaults to
/// `num_layers - 2` so the last hidden layer stays noisy (which is what
/// makes fusion-versus-last comparisons non-trivial).
pub fn make_synthetic_extractor(seed: u64, h: usize, num_layers: usize) -> ExtractorSpec {
    make_synthetic_extractor_with_informative(seed, h, num_layers, num_layers.saturating_sub(2))
}

/// Same, with an explicitly designated informative layer.
pub fn make_synthetic_extractor_with_informative(
    seed: u64,
    h: usize,
    num_layers: usize,
    informative: usize,
) -> ExtractorSpec {
    assert!(h > 0 && num_layers >= 1 && informative < num_layers);
    let checkpoint_ref =
        format!("synthetic:seed={seed};h={h};layers={num_layers};informative={informative}");
    ExtractorSpec {
        extractor_id: format!("synthetic-s{seed}-h{h}-l{num_layers}-k{informative}"),
        family: ExtractorFamily::Synthetic,
        hidden_dim: h,
        num_layers: Some(num_layers),
        checkpoint_ref: checkpoint_ref.clone(),
        input_rate_hz: 16_000,
        version_hash: ref_hash(&checkpoint_ref),
        window_s: 30.0,
        frames_per_second: 10.0,
    }
}

/// Clip-level vector extractor (handcrafted-feature stand-in).
pub fn make_synthetic_vector_extractor(seed: u64, h: usize) -> ExtractorSpec {
    assert!(h > 0);
    let checkpoint_ref = format!("synthvec:seed={seed};h={h}");
    ExtractorSpec {
        extractor_id: format!("synthvec-s{seed}-h{h}"),
        family: ExtractorFamily::HandcraftedVector,
        hidden_dim: h,
        num_layers: None,
        checkpoint_ref: checkpoint_ref.clone(),
        input_rate_hz: 16_000,
        version_hash: ref_hash(&checkpoint_ref),
        window_s: 30.0,
        frames_per_second: 10.0,
    }
}

pub(crate) fn ref_hash(checkpoint_ref: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(checkpoint_ref.as_bytes());
    hex::encode(hasher.finalize())[..16].to_string()
}

/// Parse `key=value;...` parameters out of a checkpoint reference.
pub(crate) fn ref_params(checkpoint_ref: &str) -> Result<std::collections::BTreeMap<String, u64>> {
    let fail = |reason: &str| HarnessError::InvalidDescriptor {
        descriptor: checkpoint_ref.to_string(),
        reason: reason.to_string(),
    };
    let (_, rest) = checkpoint_ref
        .split_once(':')
        .ok_or_else(|| fail("missing scheme"))?;
    let mut params = std::collections::BTreeMap::new();
    for pair in rest.split(';').filter(|p| !p.is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| fail("malformed parameter"))?;
        params.insert(
            key.to_string(),
            value.parse::<u64>().map_err(|_| fail("non-integer parameter"))?,
        );
    }
    Ok(params)
}

pub(crate) fn param(
    params: &std::collections::BTreeMap<String, u64>,
    checkpoint_ref: &str,
    key: &str,
) -> Result<u64> {
    params
        .get(key)
        .copied()
        .ok_or_else(|| HarnessError::InvalidDescriptor {
            descriptor: checkpoint_ref.to_string(),
            reason: format!("missing parameter `{key}`"),
        })
}

/// Per-frame signature estimates: within each full frame, average the
/// samples at each of the 16 tile positions. Frame starts are multiples of
/// the frame length, which is a multiple of 16, so tile phase is global.
pub(crate) fn frame_signatures(waveform: &Waveform, frame_len: usize) -> Vec<[f64; SIGNATURE_DIM]> {
    let frames = waveform.samples.len() / frame_len;
    let per_position = frame_len / SIGNATURE_DIM;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut sig = [0.0; SIGNATURE_DIM];
        let base = f * frame_len;
        for (offset, value) in waveform.samples[base..base + frame_len].iter().enumerate() {
            sig[offset % SIGNATURE_DIM] += *value as f64;
        }
        for v in sig.iter_mut() {
            *v /= per_position as f64;
        }
        out.push(sig);
    }
    out
}

/// Fixed random embedding `R^16 -> R^h` for (seed, layer, salt).
fn embed_matrix(salt: &[u8], seed: u64, layer: u64, h: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(salt);
    hasher.update(seed.to_le_bytes());
    hasher.update(layer.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    let scale = 1.0 / (SIGNATURE_DIM as f64).sqrt();
    (0..h * SIGNATURE_DIM)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        })
        .collect()
}

/// Per-(layer, frame) noise stream, keyed by the audio bytes so different
/// clips never share noise.
fn noise_rng(seed: u64, layer: u64, audio_digest: &[u8; 32], frame: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-layernoise");
    hasher.update(seed.to_le_bytes());
    hasher.update(layer.to_le_bytes());
    hasher.update(audio_digest);
    hasher.update(frame.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn audio_digest(waveform: &Waveform) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for s in &waveform.samples {
        hasher.update(s.to_le_bytes());
    }
    hasher.finalize().into()
}

/// Layered sequence extractor (`synthetic:` scheme).
pub struct SyntheticSequence;

impl SyntheticSequence {
    /// One layer's output for all frames, written into `out` (L*h floats).
    #[allow(clippy::too_many_arguments)]
    fn layer_into(
        out: &mut [f32],
        sigs: &[[f64; SIGNATURE_DIM]],
        seed: u64,
        layer: usize,
        informative: usize,
        h: usize,
        digest: &[u8; 32],
    ) {
        let embed = if layer == informative {
            Some(embed_matrix(b"paralbench-embed", seed, layer as u64, h))
        } else {
            None
        };
        for (f, sig) in sigs.iter().enumerate() {
            let mut rng = noise_rng(seed, layer as u64, digest, f as u64);
            for j in 0..h {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let value = match &embed {
                    Some(a) => {
                        let mut acc = 0.0;
                        for (p, s) in sig.iter().enumerate() {
                            acc += a[j * SIGNATURE_DIM + p] * s;
                        }
                        acc + INFORMATIVE_NOISE * noise
                    }
                    None => noise,
                };
                out[f * h + j] = value as f32;
            }
        }
    }
}

impl Adapter for SyntheticSequence {
    fn extract(
        &self,
        spec: &ExtractorSpec,
        waveform: &Waveform,
        layer: &LayerSpec,
    ) -> Result<(Vec<usize>, Vec<f32>)> {
        let params = ref_params(&spec.checkpoint_ref)?;
        let seed = param(&params, &spec.checkpoint_ref, "seed")?;
        let h = param(&params, &spec.checkpoint_ref, "h")? as usize;
        let num_layers = param(&params, &spec.checkpoint_ref, "layers")? as usize;
        let informative = param(&params, &spec.checkpoint_ref, "informative")? as usize;
        if h != spec.hidden_dim || Some(num_layers) != spec.num_layers {
            return Err(HarnessError::InvalidDescriptor {
                descriptor: spec.checkpoint_ref.clone(),
                reason: "checkpoint parameters disagree with the extractor spec".into(),
            });
        }
        let frame_len = spec.frame_len();
        let sigs = frame_signatures(waveform, frame_len);
        let frames = sigs.len();
        if frames == 0 {
            return Err(HarnessError::AudioTooShort {
                sample_id: "<adapter input>".into(),
            });
        }
        let digest = audio_digest(waveform);
        match layer {
            LayerSpec::AllLayers => {
                let mut payload = vec![0.0f32; num_layers * frames * h];
                for l in 0..num_layers {
                    Self::layer_into(
                        &mut payload[l * frames * h..(l + 1) * frames * h],
                        &sigs,
                        seed,
                        l,
                        informative,
                        h,
                        &digest,
                    );
                }
                Ok((vec![num_layers, frames, h], payload))
            }
            LayerSpec::LastHidden | LayerSpec::Index(_) => {
                let l = match layer {
                    LayerSpec::Index(k) => *k,
                    _ => num_layers - 1,
                };
                let mut payload = vec![0.0f32; frames * h];
                Self::layer_into(&mut payload, &sigs, seed, l, informative, h, &digest);
                Ok((vec![frames, h], payload))
            }
            LayerSpec::FixedVector => Err(HarnessError::InvalidDescriptor {
                descriptor: spec.extractor_id.clone(),
                reason: "sequence extractor cannot emit fixed vectors".into(),
            }),
        }
    }
}

/// Clip-level vector extractor (`synthvec:` scheme).
pub struct SyntheticVector;

impl Adapter for SyntheticVector {
    fn extract(
        &self,
        spec: &ExtractorSpec,
        waveform: &Waveform,
        layer: &LayerSpec,
    ) -> Result<(Vec<usize>, Vec<f32>)> {
        if *layer != LayerSpec::FixedVector {
            return Err(HarnessError::InvalidDescriptor {
                descriptor: spec.extractor_id.clone(),
                reason: "vector extractor only emits fixed vectors".into(),
            });
        }
        let params = ref_params(&spec.checkpoint_ref)?;
        let seed = param(&params, &spec.checkpoint_ref, "seed")?;
        let h = param(&params, &spec.checkpoint_ref, "h")? as usize;
        if h != spec.hidden_dim {
            return Err(HarnessError::InvalidDescriptor {
                descriptor: spec.checkpoint_ref.clone(),
                reason: "checkpoint parameters disagree with the extractor spec".into(),
            });
        }
        let tiles = waveform.samples.len() / SIGNATURE_DIM;
        if tiles == 0 {
            return Err(HarnessError::AudioTooShort {
                sample_id: "<adapter input>".into(),
            });
        }
        // Clip-level signature: average every tile position over the clip.
        let mut sig = [0.0f64; SIGNATURE_DIM];
        for (offset, value) in waveform.samples[..tiles * SIGNATURE_DIM].iter().enumerate() {
            sig[offset % SIGNATURE_DIM] += *value as f64;
        }
        for v in sig.iter_mut() {
            *v /= tiles as f64;
        }
        let embed = embed_matrix(b"paralbench-embedvec", seed, 0, h);
        let mut payload = Vec::with_capacity(h);
        for j in 0..h {
            let mut acc = 0.0;
            for (p, s) in sig.iter().enumerate() {
                acc += embed[j * SIGNATURE_DIM + p] * s;
            }
            payload.push(acc as f32);
        }
        Ok((vec![h], payload))
    }
}
