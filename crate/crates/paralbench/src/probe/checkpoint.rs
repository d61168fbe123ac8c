//! Versioned checkpoint container: a fixed magic, a JSON header describing
//! the probe and its tensor table, then raw 64-bit little-endian tensor
//! data. The header pins the extractor binding so evaluation can refuse
//! features the probe was never trained on. Adapter tensors (low-rank
//! factors belonging to a backbone) ride along in a separate section.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ExtractorBinding, Probe, ProbeConfig, ProbePath};
use crate::error::{HarnessError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLBCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ProbeConfig,
    path: ProbePath,
    input_dim: usize,
    fusion_layers: Option<usize>,
    binding: ExtractorBinding,
    tensors: Vec<TensorMeta>,
    adapters: Vec<TensorMeta>,
}

fn corrupt(reason: &str) -> HarnessError {
    HarnessError::Run(format!("corrupt checkpoint: {reason}"))
}

/// Write the probe (and optional backbone adapter tensors) to `path`.
pub fn save_probe(
    probe: &Probe,
    adapters: &[(String, Array2<f64>)],
    path: &Path,
) -> Result<()> {
    let tensors: Vec<TensorMeta> = probe
        .params()
        .iter()
        .map(|p| TensorMeta {
            name: p.name.clone(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
            trainable: p.trainable,
        })
        .collect();
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: probe.config.clone(),
        path: probe.path,
        input_dim: probe.input_dim,
        fusion_layers: probe.fusion.as_ref().map(|f| f.value.ncols()),
        binding: probe.binding.clone(),
        tensors,
        adapters: adapters
            .iter()
            .map(|(name, value)| TensorMeta {
                name: name.clone(),
                rows: value.nrows(),
                cols: value.ncols(),
                trainable: true,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for p in probe.params() {
        for v in p.value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for (_, value) in adapters {
        for v in value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_tensor(r: &mut impl Read, meta: &TensorMeta) -> Result<Array2<f64>> {
    let mut bytes = vec![0u8; meta.rows * meta.cols * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| corrupt(&format!("tensor `{}` is truncated", meta.name)))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array2::from_shape_vec((meta.rows, meta.cols), values)
        .map_err(|_| corrupt(&format!("tensor `{}` has a bad shape", meta.name)))
}

/// Load a probe and any adapter tensors stored alongside it.
pub fn load_probe(path: &Path) -> Result<(Probe, Vec<(String, Array2<f64>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("missing magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)
        .map_err(|_| corrupt("missing header length"))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    if header_len > 16 * 1024 * 1024 {
        return Err(corrupt("unreasonable header length"));
    }
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| corrupt("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_bytes).map_err(|_| corrupt("unparseable header"))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(corrupt(&format!(
            "unsupported version {}",
            header.version
        )));
    }

    let mut probe = Probe::new(
        header.config,
        header.path,
        header.input_dim,
        header.fusion_layers,
        header.binding,
        0,
    )?;
    {
        let mut params = probe.params_mut();
        if params.len() != header.tensors.len() {
            return Err(corrupt("tensor table does not match the probe structure"));
        }
        for (param, meta) in params.iter_mut().zip(header.tensors.iter()) {
            if param.name != meta.name
                || param.value.nrows() != meta.rows
                || param.value.ncols() != meta.cols
            {
                return Err(corrupt(&format!(
                    "tensor `{}` does not match the probe structure",
                    meta.name
                )));
            }
        }
        for (param, meta) in params.iter_mut().zip(header.tensors.iter()) {
            param.value = read_tensor(&mut r, meta)?;
            param.trainable = meta.trainable;
        }
    }
    let mut adapters = Vec::with_capacity(header.adapters.len());
    for meta in &header.adapters {
        adapters.push((meta.name.clone(), read_tensor(&mut r, meta)?));
    }
    Ok((probe, adapters))
}

/// Refuse evaluating features from a different extractor or checkpoint
/// revision than the probe was trained on.
pub fn verify_binding(binding: &ExtractorBinding, extractor_id: &str, version_hash: &str) -> Result<()> {
    if binding.extractor_id != extractor_id || binding.version_hash != version_hash {
        return Err(HarnessError::CheckpointMismatch {
            expected: format!("{}@{}", binding.extractor_id, binding.version_hash),
            got: format!("{extractor_id}@{version_hash}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{BatchInput, Pooling, ProbeKind};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe_with_fusion() -> Probe {
        let config = ProbeConfig {
            d: 8,
            encoder_layers: 1,
            attention_heads: 2,
            encoder_dropout: 0.1,
            classifier_dropout: 0.2,
            kind: ProbeKind::Classification { classes: 3 },
            pooling: Pooling::PrependedToken,
        };
        Probe::new(
            config,
            ProbePath::Sequence,
            5,
            Some(4),
            ExtractorBinding {
                extractor_id: "synthetic-x".into(),
                version_hash: "beef".into(),
            },
            42,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_outputs_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("probe.ckpt");
        let mut probe = probe_with_fusion();
        probe.head1.w.trainable = false; // non-default flag must survive
        save_probe(&probe, &[], &file).unwrap();
        let (loaded, adapters) = load_probe(&file).unwrap();
        assert!(adapters.is_empty());

        let batch = BatchInput::Sequences(vec![Array2::from_shape_fn((3, 5), |(i, j)| {
            (i as f64) * 0.2 - (j as f64) * 0.1
        })]);
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = probe.forward(&batch, false, &mut r1).unwrap();
        let (b, _) = loaded.forward(&batch, false, &mut r2).unwrap();
        assert_eq!(a, b, "bitwise identical outputs");
        assert!(!loaded.head1.w.trainable);
        assert_eq!(loaded.fusion_weights(), probe.fusion_weights());
        assert_eq!(loaded.binding, probe.binding);
    }

    #[test]
    fn adapter_tensors_ride_along() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("with-adapters.ckpt");
        let probe = probe_with_fusion();
        let a = Array2::from_shape_fn((4, 2), |(i, j)| i as f64 + j as f64 * 0.5);
        let b = Array2::zeros((2, 4));
        save_probe(
            &probe,
            &[
                ("block0.attn.wq.lora_a".into(), a.clone()),
                ("block0.attn.wq.lora_b".into(), b.clone()),
            ],
            &file,
        )
        .unwrap();
        let (_, adapters) = load_probe(&file).unwrap();
        assert_eq!(adapters.len(), 2);
        assert_eq!(adapters[0].0, "block0.attn.wq.lora_a");
        assert_eq!(adapters[0].1, a);
        assert_eq!(adapters[1].1, b);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("probe.ckpt");
        let probe = probe_with_fusion();
        save_probe(&probe, &[], &file).unwrap();

        // Truncation.
        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_probe(&file).is_err());

        // Bad magic.
        let mut flipped = bytes.clone();
        flipped[0] ^= 0xff;
        std::fs::write(&file, &flipped).unwrap();
        assert!(load_probe(&file).is_err());
    }

    #[test]
    fn binding_mismatch_is_refused() {
        let probe = probe_with_fusion();
        assert!(verify_binding(&probe.binding, "synthetic-x", "beef").is_ok());
        let err = verify_binding(&probe.binding, "synthetic-x", "dead").unwrap_err();
        assert!(matches!(err, HarnessError::CheckpointMismatch { .. }));
        let err = verify_binding(&probe.binding, "other", "beef").unwrap_err();
        assert!(matches!(err, HarnessError::CheckpointMismatch { .. }));
    }
}
