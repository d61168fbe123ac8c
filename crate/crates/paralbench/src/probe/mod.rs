//! The downstream probe: a learnable projection into a fixed working
//! width, a small Transformer encoder, and a two-dense-layer output head.
//! Sequence features travel the full path; fixed-vector features bypass
//! projection and encoder and hit the head directly. An optional set of
//! learnable fusion weights combines per-layer feature stacks into a single
//! sequence before projection.

pub mod checkpoint;
pub mod train;

use ndarray::{s, Array2, Array3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::nn::encoder::{EncoderLayer, EncoderLayerCache};
use crate::nn::layers::Linear;
use crate::nn::{
    add_positional, dropout_backward, dropout_forward, normal_init, relu_backward, relu_forward,
    softmax_rows, softmax_rows_backward, Packed, Param,
};

/// Working width of the encoder (projection output dimension).
pub const DEFAULT_WORKING_DIM: usize = 768;

/// Output structure of the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeKind {
    Classification { classes: usize },
    Regression,
}

impl ProbeKind {
    pub fn output_dim(&self) -> usize {
        match self {
            ProbeKind::Classification { classes } => *classes,
            ProbeKind::Regression => 1,
        }
    }
}

/// How the encoder output is pooled into one row per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Prepend a learnable aggregation token; read position 0.
    PrependedToken,
    /// No extra token; read the first frame's output.
    FirstFrame,
}

/// Which feature family the probe consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePath {
    /// Projection + encoder + head.
    Sequence,
    /// Head only (handcrafted fixed vectors).
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub d: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub encoder_dropout: f64,
    pub classifier_dropout: f64,
    #[serde(flatten)]
    pub kind: ProbeKind,
    pub pooling: Pooling,
}

impl ProbeConfig {
    pub fn classification(classes: usize) -> Self {
        ProbeConfig {
            d: DEFAULT_WORKING_DIM,
            encoder_layers: 2,
            attention_heads: 8,
            encoder_dropout: 0.1,
            classifier_dropout: 0.5,
            kind: ProbeKind::Classification { classes },
            pooling: Pooling::PrependedToken,
        }
    }

    pub fn regression() -> Self {
        ProbeConfig {
            kind: ProbeKind::Regression,
            ..Self::classification(2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(HarnessError::Config(format!("probe config: {reason}")));
        if self.d == 0 {
            return bad("working dimension must be positive");
        }
        if self.encoder_layers == 0 {
            return bad("encoder needs at least one layer");
        }
        if self.attention_heads == 0 || self.d % self.attention_heads != 0 {
            return bad("attention heads must divide the working dimension");
        }
        if !(0.0..1.0).contains(&self.encoder_dropout)
            || !(0.0..1.0).contains(&self.classifier_dropout)
        {
            return bad("dropout rates must lie in [0, 1)");
        }
        if let ProbeKind::Classification { classes } = self.kind {
            if classes < 2 {
                return bad("classification needs at least two classes");
            }
        }
        Ok(())
    }
}

/// Identity of the feature source a trained probe is valid for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorBinding {
    pub extractor_id: String,
    pub version_hash: String,
}

/// Per-sample feature input to one forward pass.
#[derive(Debug, Clone)]
pub enum BatchInput {
    /// One `(frames, h)` matrix per sample.
    Sequences(Vec<Array2<f64>>),
    /// One `(layers, frames, h)` stack per sample; requires fusion weights.
    Stacks(Vec<Array3<f64>>),
    /// `(batch, h)` fixed vectors.
    Vectors(Array2<f64>),
}

impl BatchInput {
    pub fn len(&self) -> usize {
        match self {
            BatchInput::Sequences(v) => v.len(),
            BatchInput::Stacks(v) => v.len(),
            BatchInput::Vectors(m) => m.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Forward state of the head (shared by both paths).
#[derive(Debug)]
struct HeadCache {
    h1_in: Array2<f64>,
    relu_mask: Array2<f64>,
    drop_mask: Array2<f64>,
    h2_in: Array2<f64>,
}

/// Forward state of one probe forward pass.
#[derive(Debug)]
pub struct ForwardCache {
    /// Fusion inputs and softmaxed weights, when the input was a stack.
    stacks: Option<(Vec<Array3<f64>>, Vec<f64>)>,
    /// Pre-projection packed features (sequence path).
    proj_in: Option<Packed>,
    enc_caches: Vec<EncoderLayerCache>,
    /// Offsets of the encoder input (with aggregation rows when pooled).
    enc_offsets: Vec<usize>,
    head: HeadCache,
    /// Softmax output (classification only).
    probs: Option<Array2<f64>>,
}

/// The downstream model. All parameters are 64-bit; construction is a pure
/// function of (config, dimensions, seed).
#[derive(Debug, Clone)]
pub struct Probe {
    pub config: ProbeConfig,
    pub path: ProbePath,
    pub input_dim: usize,
    pub projection: Option<Linear>,
    pub agg_token: Option<Param>,
    pub encoder: Vec<EncoderLayer>,
    pub head1: Linear,
    pub head2: Linear,
    pub fusion: Option<Param>,
    pub binding: ExtractorBinding,
}

fn probe_init_rng(seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"paralbench-probe-init");
    hasher.update(seed.to_le_bytes());
    use rand::SeedableRng;
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

impl Probe {
    /// Build an untrained probe. `fusion_layers` enables the learnable
    /// layer-fusion weights (sequence path only).
    pub fn new(
        config: ProbeConfig,
        path: ProbePath,
        input_dim: usize,
        fusion_layers: Option<usize>,
        binding: ExtractorBinding,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(HarnessError::Config("probe input dimension must be positive".into()));
        }
        if matches!(path, ProbePath::Vector) && fusion_layers.is_some() {
            return Err(HarnessError::Config(
                "layer fusion requires sequence features".into(),
            ));
        }
        let mut rng = probe_init_rng(seed);
        let (projection, agg_token, encoder, head_dim) = match path {
            ProbePath::Sequence => {
                let projection = Linear::new("projection", &mut rng, input_dim, config.d, false);
                let agg = match config.pooling {
                    Pooling::PrependedToken => Some(Param::new(
                        "agg_token",
                        normal_init(&mut rng, 1, config.d, 0.02),
                    )),
                    Pooling::FirstFrame => None,
                };
                let encoder = (0..config.encoder_layers)
                    .map(|i| {
                        EncoderLayer::new(
                            &format!("enc{i}"),
                            &mut rng,
                            config.d,
                            config.attention_heads,
                            config.encoder_dropout,
                        )
                    })
                    .collect();
                (Some(projection), agg, encoder, config.d)
            }
            ProbePath::Vector => (None, None, Vec::new(), input_dim),
        };
        let head1 = Linear::new("head1", &mut rng, head_dim, head_dim, true);
        let head2 = Linear::new("head2", &mut rng, head_dim, config.kind.output_dim(), true);
        let fusion = fusion_layers.map(|n| Param::new("fusion", Array2::zeros((1, n))));
        Ok(Probe {
            config,
            path,
            input_dim,
            projection,
            agg_token,
            encoder,
            head1,
            head2,
            fusion,
            binding,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.kind.output_dim()
    }

    /// Current fusion weights after softmax, when fusion is enabled.
    pub fn fusion_weights(&self) -> Option<Vec<f64>> {
        self.fusion.as_ref().map(|p| {
            let raw: Vec<f64> = p.value.row(0).to_vec();
            softmax_slice(&raw)
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        if let Some(p) = &self.projection {
            out.extend(p.params());
        }
        if let Some(a) = &self.agg_token {
            out.push(a);
        }
        for layer in &self.encoder {
            out.extend(layer.params());
        }
        out.extend(self.head1.params());
        out.extend(self.head2.params());
        if let Some(f) = &self.fusion {
            out.push(f);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.projection {
            out.extend(p.params_mut());
        }
        if let Some(a) = &mut self.agg_token {
            out.push(a);
        }
        for layer in &mut self.encoder {
            out.extend(layer.params_mut());
        }
        out.extend(self.head1.params_mut());
        out.extend(self.head2.params_mut());
        if let Some(f) = &mut self.fusion {
            out.push(f);
        }
        out
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.numel())
            .sum()
    }

    /// One forward pass. Classification returns `(batch, classes)`
    /// probabilities; regression returns `(batch, 1)` raw predictions.
    pub fn forward(
        &self,
        batch: &BatchInput,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        if batch.is_empty() {
            return Err(HarnessError::Run("empty batch".into()));
        }
        let (pooled, stacks, proj_in, enc_caches, enc_offsets) = match (&self.path, batch) {
            (ProbePath::Vector, BatchInput::Vectors(x)) => {
                self.check_width("fixed-vector features", x.ncols())?;
                (x.clone(), None, None, Vec::new(), Vec::new())
            }
            (ProbePath::Vector, _) => {
                return Err(HarnessError::ShapeMismatch {
                    context: "probe input".into(),
                    expected: "fixed vectors".into(),
                    got: "sequence features".into(),
                })
            }
            (ProbePath::Sequence, BatchInput::Vectors(_)) => {
                return Err(HarnessError::ShapeMismatch {
                    context: "probe input".into(),
                    expected: "sequence features".into(),
                    got: "fixed vectors".into(),
                })
            }
            (ProbePath::Sequence, BatchInput::Sequences(seqs)) => {
                let (pooled, caches, offsets, proj_in) = self.forward_sequences(seqs, train, rng)?;
                (pooled, None, Some(proj_in), caches, offsets)
            }
            (ProbePath::Sequence, BatchInput::Stacks(stacks)) => {
                let weights = self.fusion.as_ref().ok_or_else(|| {
                    HarnessError::Config("layer-stack input needs fusion weights".into())
                })?;
                let raw: Vec<f64> = weights.value.row(0).to_vec();
                let fused: Vec<Array2<f64>> = stacks
                    .iter()
                    .map(|stack| fuse_layers(stack, &raw))
                    .collect::<Result<_>>()?;
                let (pooled, caches, offsets, proj_in) =
                    self.forward_sequences(&fused, train, rng)?;
                let s = softmax_slice(&raw);
                (
                    pooled,
                    Some((stacks.clone(), s)),
                    Some(proj_in),
                    caches,
                    offsets,
                )
            }
        };

        // Two dense layers with dropout between them.
        let h1_out = self.head1.forward(&pooled);
        let (relu_out, relu_mask) = relu_forward(&h1_out);
        let (h2_in, drop_mask) =
            dropout_forward(&relu_out, self.config.classifier_dropout, train, rng);
        let logits = self.head2.forward(&h2_in);

        let (output, probs) = match self.config.kind {
            ProbeKind::Classification { .. } => {
                let mut p = logits;
                softmax_rows(&mut p);
                (p.clone(), Some(p))
            }
            ProbeKind::Regression => (logits, None),
        };
        if output.iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::NonFinite("probe output".into()));
        }
        Ok((
            output,
            ForwardCache {
                stacks,
                proj_in,
                enc_caches,
                enc_offsets,
                head: HeadCache {
                    h1_in: pooled,
                    relu_mask,
                    drop_mask,
                    h2_in,
                },
                probs,
            },
        ))
    }

    fn check_width(&self, what: &str, got: usize) -> Result<()> {
        if got != self.input_dim {
            return Err(HarnessError::ShapeMismatch {
                context: what.to_string(),
                expected: format!("width {}", self.input_dim),
                got: format!("width {got}"),
            });
        }
        Ok(())
    }

    /// Projection, aggregation-token prepend, position encoding, encoder.
    /// Returns pooled readout rows plus everything backward needs.
    #[allow(clippy::type_complexity)]
    fn forward_sequences(
        &self,
        seqs: &[Array2<f64>],
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, Vec<EncoderLayerCache>, Vec<usize>, Packed)> {
        for seq in seqs {
            if seq.nrows() == 0 {
                return Err(HarnessError::ShapeMismatch {
                    context: "sequence features".into(),
                    expected: "at least one frame".into(),
                    got: "empty sequence".into(),
                });
            }
            self.check_width("sequence features", seq.ncols())?;
        }
        let proj_in = Packed::from_sequences(seqs);
        let projection = self.projection.as_ref().expect("sequence path");
        let proj_out = projection.forward(&proj_in.data);

        let d = self.config.d;
        let mut x = match &self.agg_token {
            Some(agg) => {
                // Insert one aggregation row ahead of every sequence.
                let total = proj_out.nrows() + seqs.len();
                let mut data = Array2::zeros((total, d));
                let mut offsets = Vec::with_capacity(seqs.len() + 1);
                offsets.push(0);
                let mut at = 0;
                for i in 0..seqs.len() {
                    data.row_mut(at).assign(&agg.value.row(0));
                    let (r0, r1) = (proj_in.offsets[i], proj_in.offsets[i + 1]);
                    data.slice_mut(s![at + 1..at + 1 + (r1 - r0), ..])
                        .assign(&proj_out.slice(s![r0..r1, ..]));
                    at += r1 - r0 + 1;
                    offsets.push(at);
                }
                Packed { data, offsets }
            }
            None => Packed {
                data: proj_out,
                offsets: proj_in.offsets.clone(),
            },
        };
        add_positional(&mut x);

        let enc_offsets = x.offsets.clone();
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (y, cache) = layer.forward(&x, train, rng);
            x = y;
            caches.push(cache);
        }
        Ok((x.first_rows(), caches, enc_offsets, proj_in))
    }

    /// Backward pass. `d_output` is the gradient at the forward output
    /// (probabilities for classification, raw predictions for regression).
    /// Returns the gradient with respect to the packed pre-projection
    /// features (sequence path) or the input vectors (vector path);
    /// stack inputs consume their gradient into the fusion weights.
    pub fn backward(&mut self, cache: &ForwardCache, d_output: &Array2<f64>) -> Packed {
        let d_logits = match (&self.config.kind, &cache.probs) {
            (ProbeKind::Classification { .. }, Some(probs)) => {
                softmax_rows_backward(probs, d_output)
            }
            _ => d_output.clone(),
        };
        let d_h2in = self.head2.backward(&cache.head.h2_in, &d_logits);
        let d_relu = dropout_backward(&d_h2in, &cache.head.drop_mask);
        let d_h1out = relu_backward(&d_relu, &cache.head.relu_mask);
        let d_pooled = self.head1.backward(&cache.head.h1_in, &d_h1out);

        if matches!(self.path, ProbePath::Vector) {
            let n = d_pooled.nrows();
            return Packed {
                data: d_pooled,
                offsets: (0..=n).collect(),
            };
        }

        // Scatter pooled gradients back to each sequence's readout row.
        let offsets = &cache.enc_offsets;
        let n_seq = offsets.len() - 1;
        let mut d_x = Packed {
            data: Array2::zeros((*offsets.last().unwrap(), self.config.d)),
            offsets: offsets.clone(),
        };
        for i in 0..n_seq {
            d_x.data.row_mut(offsets[i]).assign(&d_pooled.row(i));
        }
        for (layer, layer_cache) in self.encoder.iter_mut().zip(cache.enc_caches.iter()).rev() {
            d_x = layer.backward(layer_cache, &d_x);
        }

        // Position encodings pass gradients through; split off aggregation
        // rows, which belong to the token parameter.
        let proj_in = cache.proj_in.as_ref().expect("sequence path");
        let d_proj_out = match &mut self.agg_token {
            Some(agg) => {
                let total: usize = proj_in.data.nrows();
                let mut d_proj = Array2::zeros((total, self.config.d));
                for i in 0..n_seq {
                    agg.grad += &d_x
                        .data
                        .row(offsets[i])
                        .view()
                        .insert_axis(ndarray::Axis(0));
                    let len = offsets[i + 1] - offsets[i] - 1;
                    let (p0, _) = (proj_in.offsets[i], proj_in.offsets[i + 1]);
                    d_proj
                        .slice_mut(s![p0..p0 + len, ..])
                        .assign(&d_x.data.slice(s![offsets[i] + 1..offsets[i + 1], ..]));
                }
                d_proj
            }
            None => d_x.data,
        };
        let projection = self.projection.as_mut().expect("sequence path");
        let d_features = projection.backward(&proj_in.data, &d_proj_out);

        if let (Some((stacks, s)), Some(fusion)) = (&cache.stacks, &mut self.fusion) {
            // d loss / d s_l, then back through the softmax.
            let n_layers = s.len();
            let mut ds = vec![0.0; n_layers];
            for (i, stack) in stacks.iter().enumerate() {
                let (r0, r1) = (proj_in.offsets[i], proj_in.offsets[i + 1]);
                let d_fused = d_features.slice(s![r0..r1, ..]);
                for (l, dsl) in ds.iter_mut().enumerate() {
                    let layer = stack.slice(s![l, .., ..]);
                    *dsl += (&d_fused * &layer).sum();
                }
            }
            let dot: f64 = s.iter().zip(ds.iter()).map(|(a, b)| a * b).sum();
            for l in 0..n_layers {
                fusion.grad[(0, l)] += s[l] * (ds[l] - dot);
            }
        }

        Packed {
            data: d_features,
            offsets: proj_in.offsets.clone(),
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Softmax over a plain slice.
pub fn softmax_slice(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Softmax-weighted sum of a `(layers, frames, h)` stack into `(frames, h)`.
pub fn fuse_layers(stack: &Array3<f64>, raw_weights: &[f64]) -> Result<Array2<f64>> {
    let (n_layers, frames, h) = stack.dim();
    if n_layers != raw_weights.len() {
        return Err(HarnessError::ShapeMismatch {
            context: "layer fusion".into(),
            expected: format!("{} weights", n_layers),
            got: format!("{} weights", raw_weights.len()),
        });
    }
    let s = softmax_slice(raw_weights);
    let mut out = Array2::zeros((frames, h));
    for (l, &w) in s.iter().enumerate() {
        out.scaled_add(w, &stack.slice(ndarray::s![l, .., ..]));
    }
    Ok(out)
}

/// Epsilon guard for log terms; documented behavior for degenerate inputs
/// where a true-class probability is exactly zero.
pub const CE_EPSILON: f64 = 1e-12;

/// Mean cross-entropy over a batch of probability rows and class targets.
pub fn loss_ce(p: &Array2<f64>, targets: &[usize]) -> Result<f64> {
    if p.nrows() == 0 || p.nrows() != targets.len() {
        return Err(HarnessError::ShapeMismatch {
            context: "cross-entropy loss".into(),
            expected: format!("{} probability rows", targets.len()),
            got: format!("{} rows", p.nrows()),
        });
    }
    let n = p.nrows() as f64;
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        if y >= p.ncols() {
            return Err(HarnessError::Run(format!(
                "target class {y} out of range for {} outputs",
                p.ncols()
            )));
        }
        total -= p[(i, y)].max(CE_EPSILON).ln();
    }
    Ok(total / n)
}

/// Gradient of [`loss_ce`] with respect to the probabilities. Entries in
/// the clamped region carry zero gradient, matching the clamped loss.
pub fn loss_ce_backward(p: &Array2<f64>, targets: &[usize]) -> Array2<f64> {
    let n = p.nrows() as f64;
    let mut d = Array2::zeros(p.raw_dim());
    for (i, &y) in targets.iter().enumerate() {
        if p[(i, y)] > CE_EPSILON {
            d[(i, y)] = -1.0 / (n * p[(i, y)]);
        }
    }
    d
}

/// Mean absolute error over paired predictions and targets.
pub fn loss_mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(HarnessError::ShapeMismatch {
            context: "absolute-error loss".into(),
            expected: format!("{} predictions", targets.len()),
            got: format!("{}", preds.len()),
        });
    }
    let n = preds.len() as f64;
    Ok(preds
        .iter()
        .zip(targets.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Gradient of [`loss_mae`] with respect to the predictions (sign
/// convention: zero at an exact tie).
pub fn loss_mae_backward(preds: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = preds.len() as f64;
    preds
        .iter()
        .zip(targets.iter())
        .map(|(a, b)| {
            if a > b {
                1.0 / n
            } else if a < b {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rel_err;
    use crate::nn::xavier_init;
    use rand::SeedableRng;

    fn binding() -> ExtractorBinding {
        ExtractorBinding {
            extractor_id: "test-extractor".into(),
            version_hash: "abc".into(),
        }
    }

    fn small_config(classes: usize) -> ProbeConfig {
        ProbeConfig {
            d: 8,
            encoder_layers: 1,
            attention_heads: 2,
            encoder_dropout: 0.0,
            classifier_dropout: 0.0,
            kind: ProbeKind::Classification { classes },
            pooling: Pooling::PrependedToken,
        }
    }

    fn seq_batch(rng: &mut ChaCha8Rng, h: usize) -> Vec<Array2<f64>> {
        vec![xavier_init(rng, 3, h), xavier_init(rng, 2, h)]
    }

    #[test]
    fn classification_outputs_are_distributions_and_deterministic() {
        let probe = Probe::new(small_config(3), ProbePath::Sequence, 6, None, binding(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = BatchInput::Sequences(seq_batch(&mut rng, 6));
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let (p1, _) = probe.forward(&batch, false, &mut r1).unwrap();
        assert_eq!(p1.dim(), (2, 3));
        for row in p1.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let (p2, _) = probe.forward(&batch, false, &mut r2).unwrap();
        assert_eq!(p1, p2, "evaluation mode ignores the rng");
    }

    #[test]
    fn projection_maps_input_width_to_working_dim() {
        let probe =
            Probe::new(small_config(2), ProbePath::Sequence, 24, None, binding(), 3).unwrap();
        let w = &probe.projection.as_ref().unwrap().w;
        assert_eq!(w.value.dim(), (24, 8));
        assert!(probe.projection.as_ref().unwrap().b.is_none(), "pure matrix");
    }

    #[test]
    fn vector_path_bypasses_encoder() {
        let cfg = ProbeConfig {
            kind: ProbeKind::Classification { classes: 2 },
            ..small_config(2)
        };
        let probe = Probe::new(cfg, ProbePath::Vector, 10, None, binding(), 4).unwrap();
        assert!(probe.projection.is_none());
        assert!(probe.encoder.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Zero vectors still produce a finite, normalized output.
        let (p, _) = probe
            .forward(&BatchInput::Vectors(Array2::zeros((3, 10))), false, &mut rng)
            .unwrap();
        assert_eq!(p.dim(), (3, 2));
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }

        // Sequence payload on the vector path is the wrong branch.
        let err = probe
            .forward(
                &BatchInput::Sequences(vec![Array2::zeros((2, 10))]),
                false,
                &mut rng,
            )
            .unwrap_err();
        assert!(matches!(err, HarnessError::ShapeMismatch { .. }));
    }

    #[test]
    fn empty_sequences_are_rejected() {
        let probe = Probe::new(small_config(2), ProbePath::Sequence, 6, None, binding(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = probe
            .forward(&BatchInput::Sequences(vec![Array2::zeros((0, 6))]), false, &mut rng)
            .unwrap_err();
        assert!(matches!(err, HarnessError::ShapeMismatch { .. }));
    }

    #[test]
    fn fuse_layers_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stack = Array3::from_shape_fn((4, 3, 5), |(l, i, j)| {
            (l as f64 + 1.0) * 0.3 - (i as f64) * 0.1 + (j as f64) * 0.01
        });
        // Uniform raw weights: every softmax weight is 1/4.
        let fused = fuse_layers(&stack, &[0.7, 0.7, 0.7, 0.7]).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mean = (0..4).map(|l| stack[(l, i, j)]).sum::<f64>() / 4.0;
                assert!((fused[(i, j)] - mean).abs() < 1e-12);
            }
        }

        // Random weights against an independent elementwise sum.
        let raw: Vec<f64> = (0..4).map(|_| xavier_init(&mut rng, 1, 1)[(0, 0)]).collect();
        let s = softmax_slice(&raw);
        let fused = fuse_layers(&stack, &raw).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut want = 0.0;
                for l in 0..4 {
                    want += s[l] * stack[(l, i, j)];
                }
                assert!((fused[(i, j)] - want).abs() < 1e-6);
            }
        }

        // A dominant raw weight selects its layer.
        let fused = fuse_layers(&stack, &[0.0, 50.0, 0.0, 0.0]).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                assert!((fused[(i, j)] - stack[(1, i, j)]).abs() < 1e-6);
            }
        }

        assert!(fuse_layers(&stack, &[1.0, 2.0]).is_err(), "length mismatch");
    }

    #[test]
    fn ce_loss_closed_forms() {
        // One-hot match: zero loss.
        let p = Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 0.0]).unwrap();
        assert!(loss_ce(&p, &[1]).unwrap().abs() < 1e-12);
        // Uniform over 4 classes: ln 4.
        let p = Array2::from_elem((2, 4), 0.25);
        let l = loss_ce(&p, &[0, 3]).unwrap();
        assert!((l - 4.0f64.ln()).abs() < 1e-12);
        // Mean over mixed batch.
        let p = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 1.0, 0.0]).unwrap();
        let l = loss_ce(&p, &[0, 0]).unwrap();
        assert!((l - 0.5 * 0.5f64.ln().abs()).abs() < 1e-12);
        // Exact zero at the true class is clamped, not infinite.
        let p = Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
        assert!(loss_ce(&p, &[0]).unwrap().is_finite());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..8 {
            let n = 1 + (trial % 4);
            let c = 2 + (trial % 3);
            let mut p = Array2::from_shape_fn((n, c), |_| {
                use rand::Rng;
                rng.random_range(0.05..1.0)
            });
            for mut row in p.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            let targets: Vec<usize> = (0..n).map(|i| i % c).collect();
            let analytic = loss_ce_backward(&p, &targets);
            for i in 0..n {
                for j in 0..c {
                    let h = 1e-6;
                    let mut plus = p.clone();
                    plus[(i, j)] += h;
                    let mut minus = p.clone();
                    minus[(i, j)] -= h;
                    let numeric = (loss_ce(&plus, &targets).unwrap()
                        - loss_ce(&minus, &targets).unwrap())
                        / (2.0 * h);
                    assert!(
                        rel_err(analytic[(i, j)], numeric) < 1e-4 || analytic[(i, j)] == numeric,
                        "ce ({i},{j}): {} vs {numeric}",
                        analytic[(i, j)]
                    );
                }
            }

            let preds: Vec<f64> = (0..n).map(|i| (i as f64) * 0.37 - 0.4).collect();
            let targets: Vec<f64> = (0..n).map(|i| (i as f64) * 0.21).collect();
            let analytic = loss_mae_backward(&preds, &targets);
            for i in 0..n {
                let h = 1e-6;
                let mut plus = preds.clone();
                plus[i] += h;
                let mut minus = preds.clone();
                minus[i] -= h;
                let numeric =
                    (loss_mae(&plus, &targets).unwrap() - loss_mae(&minus, &targets).unwrap())
                        / (2.0 * h);
                assert!(rel_err(analytic[i], numeric) < 1e-4);
            }
        }
    }

    #[test]
    fn probe_gradients_match_finite_differences() {
        let probe =
            Probe::new(small_config(3), ProbePath::Sequence, 6, None, binding(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let seqs = seq_batch(&mut rng, 6);
        let targets = vec![1usize, 2];
        let batch = BatchInput::Sequences(seqs.clone());

        let mut trained = probe.clone();
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let (p, cache) = trained.forward(&batch, false, &mut fwd_rng).unwrap();
        let d_p = loss_ce_backward(&p, &targets);
        trained.backward(&cache, &d_p);

        let n_params = probe.params().len();
        for pi in 0..n_params {
            let shape = probe.params()[pi].value.raw_dim();
            for i in 0..shape[0] {
                for j in 0..shape[1] {
                    let base = probe.params()[pi].value[(i, j)];
                    let h = 1e-5 * base.abs().max(1.0);
                    let eval = |delta: f64| {
                        let mut m = probe.clone();
                        m.params_mut()[pi].value[(i, j)] += delta;
                        let mut r = ChaCha8Rng::seed_from_u64(0);
                        let (p, _) = m.forward(&batch, false, &mut r).unwrap();
                        loss_ce(&p, &targets).unwrap()
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    let analytic = trained.params()[pi].grad[(i, j)];
                    assert!(
                        rel_err(analytic, numeric) < 1e-4
                            || (analytic.abs() < 1e-10 && numeric.abs() < 1e-7),
                        "param {} ({i},{j}): {analytic} vs {numeric}",
                        trained.params()[pi].name
                    );
                }
            }
        }
    }

    #[test]
    fn fusion_gradients_match_finite_differences() {
        let probe =
            Probe::new(small_config(2), ProbePath::Sequence, 5, Some(3), binding(), 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let stacks: Vec<Array3<f64>> = (0..2)
            .map(|_| {
                Array3::from_shape_fn((3, 2, 5), |_| {
                    use rand::Rng;
                    rng.random_range(-0.5..0.5)
                })
            })
            .collect();
        let targets = vec![0usize, 1];
        let batch = BatchInput::Stacks(stacks);

        let mut trained = probe.clone();
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let (p, cache) = trained.forward(&batch, false, &mut fwd_rng).unwrap();
        let d_p = loss_ce_backward(&p, &targets);
        trained.backward(&cache, &d_p);

        // Fusion is the last parameter.
        let pi = probe.params().len() - 1;
        assert_eq!(probe.params()[pi].name, "fusion");
        for j in 0..3 {
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut m = probe.clone();
                m.params_mut()[pi].value[(0, j)] += delta;
                let mut r = ChaCha8Rng::seed_from_u64(0);
                let (p, _) = m.forward(&batch, false, &mut r).unwrap();
                loss_ce(&p, &targets).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = trained.params()[pi].grad[(0, j)];
            assert!(
                rel_err(analytic, numeric) < 1e-4,
                "fusion[{j}]: {analytic} vs {numeric}"
            );
        }

        // Softmaxed weights stay a distribution.
        let w = trained.fusion_weights().unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let probe = Probe::new(small_config(2), ProbePath::Sequence, 4, None, binding(), 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let seqs = seq_batch(&mut rng, 4);
        let targets = vec![0usize, 1];

        let mut trained = probe.clone();
        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let (p, cache) = trained
            .forward(&BatchInput::Sequences(seqs.clone()), false, &mut fwd_rng)
            .unwrap();
        let d_p = loss_ce_backward(&p, &targets);
        let d_in = trained.backward(&cache, &d_p);

        for (si, row, col) in [(0usize, 1usize, 2usize), (1, 0, 3)] {
            let h = 1e-5;
            let eval = |delta: f64| {
                let mut s2 = seqs.clone();
                s2[si][(row, col)] += delta;
                let mut r = ChaCha8Rng::seed_from_u64(0);
                let (p, _) = probe
                    .forward(&BatchInput::Sequences(s2), false, &mut r)
                    .unwrap();
                loss_ce(&p, &targets).unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = d_in.rows(si)[(row, col)];
            assert!(
                rel_err(analytic, numeric) < 1e-4,
                "input ({si},{row},{col}): {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn pooling_modes_differ_and_first_frame_has_no_token() {
        let mut cfg = small_config(2);
        cfg.pooling = Pooling::FirstFrame;
        let ff = Probe::new(cfg, ProbePath::Sequence, 6, None, binding(), 17).unwrap();
        assert!(ff.agg_token.is_none());
        let pt = Probe::new(small_config(2), ProbePath::Sequence, 6, None, binding(), 17).unwrap();
        assert!(pt.agg_token.is_some());

        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let batch = BatchInput::Sequences(seq_batch(&mut rng, 6));
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = ff.forward(&batch, false, &mut r).unwrap();
        let (b, _) = pt.forward(&batch, false, &mut r).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn batch_order_does_not_change_per_sample_outputs() {
        let probe = Probe::new(small_config(3), ProbePath::Sequence, 6, None, binding(), 19).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let seqs = seq_batch(&mut rng, 6);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (fwd, _) = probe
            .forward(&BatchInput::Sequences(seqs.clone()), false, &mut r)
            .unwrap();
        let swapped = vec![seqs[1].clone(), seqs[0].clone()];
        let (rev, _) = probe
            .forward(&BatchInput::Sequences(swapped), false, &mut r)
            .unwrap();
        for j in 0..3 {
            assert!((fwd[(0, j)] - rev[(1, j)]).abs() < 1e-12);
            assert!((fwd[(1, j)] - rev[(0, j)]).abs() < 1e-12);
        }
    }
}
