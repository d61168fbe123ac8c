//! Deterministic transformer encoder used as an adaptable extraction
//! backbone: a seeded embedding plus encoder blocks over per-frame
//! signature estimates. It serves two roles — a plain sequence extractor
//! behind the `backbone:` checkpoint scheme, and the fine-tuning target for
//! low-rank adapters, exposing frozen-weight checksums and gradient flow
//! into the adapter matrices only.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::synth_adapters::{frame_signatures, param, ref_hash, ref_params};
use super::{Adapter, ExtractorFamily, ExtractorSpec, LayerSpec};
use crate::corpus::audio::Waveform;
use crate::corpus::synthetic::SIGNATURE_DIM;
use crate::error::{HarnessError, Result};
use crate::nn::encoder::{EncoderLayer, EncoderLayerCache};
use crate::nn::layers::{Linear, LoraPair};
use crate::nn::{add_positional, Packed, Param};

pub const DEFAULT_BACKBONE_HEADS: usize = 8;

/// Extractor spec for a seeded backbone with the default 8-head blocks.
pub fn make_backbone_extractor(seed: u64, hidden_dim: usize, num_layers: usize) -> ExtractorSpec {
    let checkpoint_ref = format!(
        "backbone:seed={seed};h={hidden_dim};layers={num_layers};heads={DEFAULT_BACKBONE_HEADS}"
    );
    ExtractorSpec {
        extractor_id: format!("backbone-s{seed}-h{hidden_dim}-l{num_layers}"),
        family: ExtractorFamily::SslSequence,
        hidden_dim,
        num_layers: Some(num_layers),
        version_hash: ref_hash(&checkpoint_ref),
        checkpoint_ref,
        input_rate_hz: 16_000,
        window_s: 30.0,
        frames_per_second: 10.0,
    }
}

/// Seeded encoder stack. Hidden states are the outputs of each block, so
/// layer indices run over `0..num_blocks`.
#[derive(Debug, Clone)]
pub struct BackboneModel {
    pub embed: Linear,
    pub blocks: Vec<EncoderLayer>,
    pub hidden_dim: usize,
    pub heads: usize,
}

/// Forward state kept for the backward pass through the backbone.
#[derive(Debug)]
pub struct BackboneTrace {
    frames: Array2<f64>,
    offsets: Vec<usize>,
    caches: Vec<EncoderLayerCache>,
}

impl BackboneModel {
    pub fn new(seed: u64, hidden_dim: usize, num_blocks: usize, heads: usize) -> Self {
        assert!(num_blocks >= 1, "backbone needs at least one block");
        assert!(
            heads >= 1 && hidden_dim % heads == 0,
            "head count must divide the hidden width"
        );
        let mut hasher = Sha256::new();
        hasher.update(b"paralbench-backbone");
        hasher.update(seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let embed = Linear::new("embed", &mut rng, SIGNATURE_DIM, hidden_dim, true);
        let blocks = (0..num_blocks)
            .map(|i| EncoderLayer::new(&format!("block{i}"), &mut rng, hidden_dim, heads, 0.0))
            .collect();
        BackboneModel {
            embed,
            blocks,
            hidden_dim,
            heads,
        }
    }

    /// Build from a `backbone:seed=..;h=..;layers=..;heads=..` reference.
    pub fn from_ref(checkpoint_ref: &str) -> Result<Self> {
        let params = ref_params(checkpoint_ref)?;
        let seed = param(&params, checkpoint_ref, "seed")?;
        let h = param(&params, checkpoint_ref, "h")? as usize;
        let layers = param(&params, checkpoint_ref, "layers")? as usize;
        let heads = param(&params, checkpoint_ref, "heads")? as usize;
        if h == 0 || layers == 0 || heads == 0 || h % heads != 0 {
            return Err(HarnessError::InvalidDescriptor {
                descriptor: checkpoint_ref.to_string(),
                reason: "inconsistent backbone dimensions".into(),
            });
        }
        Ok(BackboneModel::new(seed, h, layers, heads))
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Hidden states for a single clip's frame signatures, one matrix per
    /// block, evaluation mode.
    pub fn forward_states(&self, frames: &Array2<f64>) -> Vec<Array2<f64>> {
        let offsets = vec![0, frames.nrows()];
        let mut x = Packed {
            data: self.embed.forward(frames),
            offsets,
        };
        add_positional(&mut x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut states = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, _) = block.forward(&x, false, &mut rng);
            x = y;
            states.push(x.data.clone());
        }
        states
    }

    /// Training-path forward over a packed batch of frame-signature
    /// sequences, stopping at the hidden state of block `upto` (inclusive).
    pub fn forward_to_layer(&self, frames: &Packed, upto: usize) -> (Packed, BackboneTrace) {
        assert!(upto < self.blocks.len(), "block index out of range");
        let mut x = Packed {
            data: self.embed.forward(&frames.data),
            offsets: frames.offsets.clone(),
        };
        add_positional(&mut x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut caches = Vec::with_capacity(upto + 1);
        for block in &self.blocks[..=upto] {
            let (y, cache) = block.forward(&x, false, &mut rng);
            x = y;
            caches.push(cache);
        }
        (
            x,
            BackboneTrace {
                frames: frames.data.clone(),
                offsets: frames.offsets.clone(),
                caches,
            },
        )
    }

    /// Backpropagate a hidden-state gradient down to the embedding. Frozen
    /// base parameters still accumulate gradients; the optimizer ignores
    /// them, while attached adapters receive theirs.
    pub fn backward_from_layer(&mut self, trace: &BackboneTrace, d_state: &Packed) {
        let mut d = Packed {
            data: d_state.data.clone(),
            offsets: trace.offsets.clone(),
        };
        let used = trace.caches.len();
        for (block, cache) in self.blocks[..used].iter_mut().zip(trace.caches.iter()).rev() {
            d = block.backward(cache, &d);
        }
        // Position encodings pass the gradient through unchanged.
        self.embed.backward(&trace.frames, &d.data);
    }

    /// Attach low-rank adapters to every block's query and value
    /// projections and freeze everything else.
    pub fn attach_lora(&mut self, rank: usize, alpha: f64, init_seed: u64) {
        let mut hasher = Sha256::new();
        hasher.update(b"paralbench-lora");
        hasher.update(init_seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
        let h = self.hidden_dim;
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.mha.lora_q = Some(LoraPair::new(
                &format!("block{i}.attn.wq"),
                &mut rng,
                h,
                h,
                rank,
                alpha,
            ));
            block.mha.lora_v = Some(LoraPair::new(
                &format!("block{i}.attn.wv"),
                &mut rng,
                h,
                h,
                rank,
                alpha,
            ));
        }
        self.set_base_trainable(false);
    }

    pub fn adapters_attached(&self) -> bool {
        self.blocks
            .iter()
            .any(|b| b.mha.lora_q.is_some() || b.mha.lora_v.is_some())
    }

    pub fn set_base_trainable(&mut self, trainable: bool) {
        self.embed.set_trainable(trainable);
        for block in &mut self.blocks {
            block.set_base_trainable(trainable);
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.embed.params();
        for block in &self.blocks {
            out.extend(block.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.embed.params_mut();
        for block in &mut self.blocks {
            out.extend(block.params_mut());
        }
        out
    }

    fn is_adapter(p: &Param) -> bool {
        p.name.contains(".lora_")
    }

    /// Parameter count of the frozen base (adapters excluded).
    pub fn base_parameter_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| !Self::is_adapter(p))
            .map(|p| p.numel())
            .sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.numel())
            .sum()
    }

    /// Digest over the base weights (names, shapes, and 64-bit values in
    /// declaration order); adapters never contribute, so adapter updates
    /// must leave it unchanged.
    pub fn base_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params() {
            if Self::is_adapter(p) {
                continue;
            }
            hasher.update(p.name.as_bytes());
            hasher.update([0u8]);
            hasher.update((p.value.nrows() as u64).to_le_bytes());
            hasher.update((p.value.ncols() as u64).to_le_bytes());
            for v in p.value.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Adapter serving `backbone:` checkpoint references; models are built on
/// first use and memoized per reference.
#[derive(Default)]
pub struct BackboneAdapter {
    models: Mutex<HashMap<String, Arc<BackboneModel>>>,
}

impl BackboneAdapter {
    pub fn model_for(&self, checkpoint_ref: &str) -> Result<Arc<BackboneModel>> {
        let mut models = self.models.lock().expect("backbone cache poisoned");
        if let Some(model) = models.get(checkpoint_ref) {
            return Ok(model.clone());
        }
        let model = Arc::new(BackboneModel::from_ref(checkpoint_ref)?);
        models.insert(checkpoint_ref.to_string(), model.clone());
        Ok(model)
    }
}

impl Adapter for BackboneAdapter {
    fn extract(
        &self,
        spec: &ExtractorSpec,
        waveform: &Waveform,
        layer: &LayerSpec,
    ) -> Result<(Vec<usize>, Vec<f32>)> {
        let params = ref_params(&spec.checkpoint_ref)?;
        let h = param(&params, &spec.checkpoint_ref, "h")? as usize;
        let layers = param(&params, &spec.checkpoint_ref, "layers")? as usize;
        if spec.hidden_dim != h || spec.num_layers != Some(layers) {
            return Err(HarnessError::InvalidDescriptor {
                descriptor: spec.checkpoint_ref.clone(),
                reason: "checkpoint parameters disagree with the extractor spec".into(),
            });
        }
        let model = self.model_for(&spec.checkpoint_ref)?;
        let sigs = frame_signatures(waveform, spec.frame_len());
        if sigs.is_empty() {
            return Err(HarnessError::AudioTooShort {
                sample_id: "<adapter input>".into(),
            });
        }
        let frames = Array2::from_shape_fn((sigs.len(), SIGNATURE_DIM), |(i, j)| sigs[i][j]);
        let states = model.forward_states(&frames);
        let to_payload = |state: &Array2<f64>| state.iter().map(|&v| v as f32).collect::<Vec<f32>>();
        match layer {
            LayerSpec::LastHidden => {
                let last = states.last().expect("at least one block");
                Ok((vec![sigs.len(), h], to_payload(last)))
            }
            LayerSpec::Index(k) => {
                let state = states.get(*k).ok_or_else(|| HarnessError::InvalidDescriptor {
                    descriptor: spec.checkpoint_ref.clone(),
                    reason: format!("layer {k} out of range for {layers} blocks"),
                })?;
                Ok((vec![sigs.len(), h], to_payload(state)))
            }
            LayerSpec::AllLayers => {
                let mut payload = Vec::with_capacity(layers * sigs.len() * h);
                for state in &states {
                    payload.extend(state.iter().map(|&v| v as f32));
                }
                Ok((vec![layers, sigs.len(), h], payload))
            }
            LayerSpec::FixedVector => Err(HarnessError::InvalidDescriptor {
                descriptor: spec.checkpoint_ref.clone(),
                reason: "sequence backbone cannot produce fixed vectors".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic::{class_signature, SYNTH_RATE_HZ};

    fn clip_from_class(name: &str, n_tiles: usize) -> Waveform {
        let sig = class_signature(name);
        let samples: Vec<f32> = (0..n_tiles * SIGNATURE_DIM)
            .map(|i| sig[i % SIGNATURE_DIM] as f32)
            .collect();
        Waveform {
            samples,
            rate_hz: SYNTH_RATE_HZ,
        }
    }

    #[test]
    fn construction_is_seed_deterministic() {
        let a = BackboneModel::new(9, 16, 2, 2);
        let b = BackboneModel::new(9, 16, 2, 2);
        let c = BackboneModel::new(10, 16, 2, 2);
        assert_eq!(a.base_checksum(), b.base_checksum());
        assert_ne!(a.base_checksum(), c.base_checksum());
    }

    #[test]
    fn adapters_are_exact_identity_at_init() {
        let frames = Array2::from_shape_fn((5, SIGNATURE_DIM), |(i, j)| {
            ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5
        });
        let frozen = BackboneModel::new(3, 16, 2, 2);
        let mut adapted = frozen.clone();
        adapted.attach_lora(4, 8.0, 77);
        assert!(adapted.adapters_attached());
        assert_eq!(frozen.base_checksum(), adapted.base_checksum());
        let a = frozen.forward_states(&frames);
        let b = adapted.forward_states(&frames);
        for (x, y) in a.iter().zip(b.iter()) {
            for (u, v) in x.iter().zip(y.iter()) {
                assert_eq!(u.to_bits(), v.to_bits(), "adapter init must be exact");
            }
        }
    }

    #[test]
    fn freezing_leaves_only_adapters_trainable() {
        let mut model = BackboneModel::new(4, 32, 3, 4);
        let base = model.base_parameter_count();
        model.attach_lora(8, 16.0, 1);
        // Two adapted projections per block, each rank * (h_in + h_out).
        let expected = 3 * 2 * 8 * (32 + 32);
        assert_eq!(model.trainable_parameter_count(), expected);
        assert_eq!(model.base_parameter_count(), base);
        assert!(model.params().iter().all(|p| p.trainable == BackboneModel::is_adapter(p)));
    }

    #[test]
    fn gradients_reach_adapters_through_the_stack() {
        let mut model = BackboneModel::new(6, 16, 2, 2);
        model.attach_lora(4, 8.0, 5);
        // Push the adapters off zero so both factors see gradient.
        for p in model.params_mut() {
            if p.name.ends_with(".lora_b") {
                p.value.fill(0.01);
            }
        }
        let frames = Packed::from_sequences(&[
            Array2::from_shape_fn((4, SIGNATURE_DIM), |(i, j)| ((i + j) % 5) as f64 * 0.1),
            Array2::from_shape_fn((3, SIGNATURE_DIM), |(i, j)| ((i * j) % 7) as f64 * 0.05),
        ]);
        let (state, trace) = model.forward_to_layer(&frames, 1);
        let d = Packed {
            data: Array2::ones(state.data.raw_dim()),
            offsets: state.offsets.clone(),
        };
        model.backward_from_layer(&trace, &d);
        for p in model.params() {
            if BackboneModel::is_adapter(p) {
                let sum: f64 = p.grad.iter().map(|g| g.abs()).sum();
                assert!(sum > 0.0, "no gradient reached {}", p.name);
            }
        }
    }

    #[test]
    fn training_path_matches_extraction_path() {
        let model = BackboneModel::new(2, 16, 2, 2);
        let frames = Array2::from_shape_fn((6, SIGNATURE_DIM), |(i, j)| {
            (i as f64 - j as f64) * 0.03
        });
        let states = model.forward_states(&frames);
        let packed = Packed::from_sequences(&[frames.clone()]);
        let (last, _) = model.forward_to_layer(&packed, 1);
        for (a, b) in states[1].iter().zip(last.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn engine_extraction_shapes_and_determinism() {
        use crate::features::ExtractionEngine;
        let spec = make_backbone_extractor(11, 16, 2);
        assert!(spec.validate().is_ok());
        let engine = ExtractionEngine::with_default_adapters();
        let clip = clip_from_class("calm", 200); // 3200 samples = two frames
        let adapter = BackboneAdapter::default();
        let (shape, payload) = adapter
            .extract(&spec, &clip, &LayerSpec::LastHidden)
            .unwrap();
        assert_eq!(shape, vec![2, 16]);
        let (shape_all, payload_all) = adapter
            .extract(&spec, &clip, &LayerSpec::AllLayers)
            .unwrap();
        assert_eq!(shape_all, vec![2, 2, 16]);
        assert_eq!(&payload_all[2 * 16..], &payload[..], "last block slice");
        let (_, payload2) = adapter
            .extract(&spec, &clip, &LayerSpec::LastHidden)
            .unwrap();
        assert_eq!(payload, payload2);
        assert!(engine.has_adapter("backbone"));

        let err = adapter
            .extract(&spec, &clip, &LayerSpec::FixedVector)
            .unwrap_err();
        assert!(matches!(err, HarnessError::InvalidDescriptor { .. }));
    }

    #[test]
    fn malformed_references_are_rejected() {
        assert!(BackboneModel::from_ref("backbone:seed=1;h=16;layers=2").is_err());
        assert!(BackboneModel::from_ref("backbone:seed=1;h=15;layers=2;heads=2").is_err());
        assert!(BackboneModel::from_ref("nonsense").is_err());
    }
}
