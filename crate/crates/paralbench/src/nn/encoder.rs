//! Post-norm Transformer encoder layer over packed ragged batches.
//! Attention runs per sequence on row slices, so no padding or masking is
//! ever materialized. Query and value projections optionally carry low-rank
//! adapters.

use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;

use super::layers::{LayerNorm, LayerNormCache, Linear, LoraPair};
use super::{
    dropout_backward, dropout_forward, relu_backward, relu_forward, softmax_rows,
    softmax_rows_backward, Packed, Param,
};

/// Scaled dot-product multi-head attention with shared projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub lora_q: Option<LoraPair>,
    pub lora_v: Option<LoraPair>,
    pub heads: usize,
}

/// Forward state for the attention backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    xa_q: Option<Array2<f64>>,
    xa_v: Option<Array2<f64>>,
    /// Attention distributions, indexed by sequence then head.
    probs: Vec<Vec<Array2<f64>>>,
    ctx: Array2<f64>,
    offsets: Vec<usize>,
}

impl MultiHeadAttention {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, d: usize, heads: usize) -> Self {
        assert!(heads > 0 && d % heads == 0, "head count must divide width");
        MultiHeadAttention {
            wq: Linear::new(&format!("{name}.wq"), rng, d, d, true),
            wk: Linear::new(&format!("{name}.wk"), rng, d, d, true),
            wv: Linear::new(&format!("{name}.wv"), rng, d, d, true),
            wo: Linear::new(&format!("{name}.wo"), rng, d, d, true),
            lora_q: None,
            lora_v: None,
            heads,
        }
    }

    pub fn forward(&self, x: &Packed) -> (Packed, AttentionCache) {
        let d = x.data.ncols();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let mut q = self.wq.forward(&x.data);
        let mut xa_q = None;
        if let Some(lora) = &self.lora_q {
            let (delta, xa) = lora.forward(&x.data);
            q += &delta;
            xa_q = Some(xa);
        }
        let k = self.wk.forward(&x.data);
        let mut v = self.wv.forward(&x.data);
        let mut xa_v = None;
        if let Some(lora) = &self.lora_v {
            let (delta, xa) = lora.forward(&x.data);
            v += &delta;
            xa_v = Some(xa);
        }

        let mut ctx = Array2::zeros(x.data.raw_dim());
        let mut probs = Vec::with_capacity(x.n_sequences());
        for i in 0..x.n_sequences() {
            let (r0, r1) = (x.offsets[i], x.offsets[i + 1]);
            let mut seq_probs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let cols = h * dk..(h + 1) * dk;
                let qi = q.slice(s![r0..r1, cols.clone()]);
                let ki = k.slice(s![r0..r1, cols.clone()]);
                let vi = v.slice(s![r0..r1, cols.clone()]);
                let mut scores = qi.dot(&ki.t());
                scores *= scale;
                softmax_rows(&mut scores);
                ctx.slice_mut(s![r0..r1, cols]).assign(&scores.dot(&vi));
                seq_probs.push(scores);
            }
            probs.push(seq_probs);
        }

        let out = self.wo.forward(&ctx);
        (
            Packed {
                data: out,
                offsets: x.offsets.clone(),
            },
            AttentionCache {
                x: x.data.clone(),
                q,
                k,
                v,
                xa_q,
                xa_v,
                probs,
                ctx,
                offsets: x.offsets.clone(),
            },
        )
    }

    pub fn backward(&mut self, cache: &AttentionCache, d_out: &Packed) -> Packed {
        let d = cache.x.ncols();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let d_ctx = self.wo.backward(&cache.ctx, &d_out.data);
        let mut dq = Array2::zeros(cache.x.raw_dim());
        let mut dkk = Array2::zeros(cache.x.raw_dim());
        let mut dv = Array2::zeros(cache.x.raw_dim());

        for i in 0..cache.offsets.len() - 1 {
            let (r0, r1) = (cache.offsets[i], cache.offsets[i + 1]);
            for h in 0..self.heads {
                let cols = h * dk..(h + 1) * dk;
                let probs = &cache.probs[i][h];
                let d_ctx_ih = d_ctx.slice(s![r0..r1, cols.clone()]);
                let ki = cache.k.slice(s![r0..r1, cols.clone()]);
                let qi = cache.q.slice(s![r0..r1, cols.clone()]);
                let vi = cache.v.slice(s![r0..r1, cols.clone()]);

                let d_probs = d_ctx_ih.dot(&vi.t());
                dv.slice_mut(s![r0..r1, cols.clone()])
                    .assign(&probs.t().dot(&d_ctx_ih));
                let mut d_scores = softmax_rows_backward(probs, &d_probs);
                d_scores *= scale;
                dq.slice_mut(s![r0..r1, cols.clone()])
                    .assign(&d_scores.dot(&ki));
                dkk.slice_mut(s![r0..r1, cols]).assign(&d_scores.t().dot(&qi));
            }
        }

        let mut dx = self.wq.backward(&cache.x, &dq);
        if let (Some(lora), Some(xa)) = (&mut self.lora_q, &cache.xa_q) {
            dx += &lora.backward(&cache.x, xa, &dq);
        }
        dx += &self.wk.backward(&cache.x, &dkk);
        dx += &self.wv.backward(&cache.x, &dv);
        if let (Some(lora), Some(xa)) = (&mut self.lora_v, &cache.xa_v) {
            dx += &lora.backward(&cache.x, xa, &dv);
        }
        Packed {
            data: dx,
            offsets: cache.offsets.clone(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.wq.params_mut();
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        if let Some(l) = &mut self.lora_q {
            out.extend(l.params_mut());
        }
        if let Some(l) = &mut self.lora_v {
            out.extend(l.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.wq.params();
        out.extend(self.wk.params());
        out.extend(self.wv.params());
        out.extend(self.wo.params());
        if let Some(l) = &self.lora_q {
            out.extend(l.params());
        }
        if let Some(l) = &self.lora_v {
            out.extend(l.params());
        }
        out
    }
}

/// One post-norm encoder block: `LN(x + Drop(MHA(x)))` then
/// `LN(h + Drop(FFN(h)))` with a ReLU feed-forward expansion of 4x.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub mha: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
    pub dropout: f64,
}

/// Forward state for the encoder-layer backward pass.
#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    attn: AttentionCache,
    mask1: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    relu_mask: Array2<f64>,
    relu_out: Array2<f64>,
    mask2: Array2<f64>,
    ln2: LayerNormCache,
    offsets: Vec<usize>,
}

impl EncoderLayer {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, d: usize, heads: usize, dropout: f64) -> Self {
        EncoderLayer {
            mha: MultiHeadAttention::new(&format!("{name}.attn"), rng, d, heads),
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            ff1: Linear::new(&format!("{name}.ff1"), rng, d, 4 * d, true),
            ff2: Linear::new(&format!("{name}.ff2"), rng, 4 * d, d, true),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            dropout,
        }
    }

    pub fn forward(
        &self,
        x: &Packed,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> (Packed, EncoderLayerCache) {
        let (attn_out, attn_cache) = self.mha.forward(x);
        let (attn_drop, mask1) = dropout_forward(&attn_out.data, self.dropout, train, rng);
        let sum1 = &x.data + &attn_drop;
        let (h1, ln1_cache) = self.ln1.forward(&sum1);

        let ff_pre = self.ff1.forward(&h1);
        let (relu_out, relu_mask) = relu_forward(&ff_pre);
        let ff = self.ff2.forward(&relu_out);
        let (ff_drop, mask2) = dropout_forward(&ff, self.dropout, train, rng);
        let sum2 = &h1 + &ff_drop;
        let (y, ln2_cache) = self.ln2.forward(&sum2);

        (
            Packed {
                data: y,
                offsets: x.offsets.clone(),
            },
            EncoderLayerCache {
                attn: attn_cache,
                mask1,
                ln1: ln1_cache,
                h1,
                relu_mask,
                relu_out,
                mask2,
                ln2: ln2_cache,
                offsets: x.offsets.clone(),
            },
        )
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache, d_y: &Packed) -> Packed {
        let d_sum2 = self.ln2.backward(&cache.ln2, &d_y.data);
        let d_ff = dropout_backward(&d_sum2, &cache.mask2);
        let d_relu_out = self.ff2.backward(&cache.relu_out, &d_ff);
        let d_ff_pre = relu_backward(&d_relu_out, &cache.relu_mask);
        let mut d_h1 = self.ff1.backward(&cache.h1, &d_ff_pre);
        d_h1 += &d_sum2; // residual branch

        let d_sum1 = self.ln1.backward(&cache.ln1, &d_h1);
        let d_attn = dropout_backward(&d_sum1, &cache.mask1);
        let d_attn_packed = Packed {
            data: d_attn,
            offsets: cache.offsets.clone(),
        };
        let mut dx = self.mha.backward(&cache.attn, &d_attn_packed);
        dx.data += &d_sum1; // residual branch
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.mha.params_mut();
        out.extend(self.ln1.params_mut());
        out.extend(self.ff1.params_mut());
        out.extend(self.ff2.params_mut());
        out.extend(self.ln2.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.mha.params();
        out.extend(self.ln1.params());
        out.extend(self.ff1.params());
        out.extend(self.ff2.params());
        out.extend(self.ln2.params());
        out
    }

    /// Freeze/unfreeze everything except any attached adapters.
    pub fn set_base_trainable(&mut self, trainable: bool) {
        self.mha.wq.set_trainable(trainable);
        self.mha.wk.set_trainable(trainable);
        self.mha.wv.set_trainable(trainable);
        self.mha.wo.set_trainable(trainable);
        self.ln1.set_trainable(trainable);
        self.ff1.set_trainable(trainable);
        self.ff2.set_trainable(trainable);
        self.ln2.set_trainable(trainable);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{rel_err, xavier_init};
    use rand::SeedableRng;

    fn test_batch(rng: &mut ChaCha8Rng, d: usize) -> Packed {
        let a = xavier_init(rng, 3, d);
        let b = xavier_init(rng, 2, d);
        Packed::from_sequences(&[a, b])
    }

    /// Finite-difference check over every parameter of a cloneable module.
    fn gradcheck_all_params<M, F>(module: &M, analytic: &[&Param], mut eval: F)
    where
        M: Clone,
        F: FnMut(&mut M, usize, usize, usize, f64) -> f64,
    {
        for (pi, param) in analytic.iter().enumerate() {
            for i in 0..param.value.nrows() {
                for j in 0..param.value.ncols() {
                    let h = 1e-5 * param.value[(i, j)].abs().max(1.0);
                    let mut m_plus = module.clone();
                    let plus = eval(&mut m_plus, pi, i, j, h);
                    let mut m_minus = module.clone();
                    let minus = eval(&mut m_minus, pi, i, j, -h);
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = param.grad[(i, j)];
                    assert!(
                        rel_err(a, numeric) < 1e-4,
                        "param {} ({i},{j}): analytic {a} vs numeric {numeric}",
                        param.name
                    );
                }
            }
        }
    }

    #[test]
    fn attention_preserves_shape_and_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mha = MultiHeadAttention::new("t", &mut rng, 8, 2);
        let x = test_batch(&mut rng, 8);
        let (y, _) = mha.forward(&x);
        assert_eq!(y.data.dim(), x.data.dim());
        assert_eq!(y.offsets, x.offsets);
    }

    #[test]
    fn attention_rows_mix_only_within_a_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mha = MultiHeadAttention::new("t", &mut rng, 4, 2);
        let a = xavier_init(&mut rng, 3, 4);
        let b = xavier_init(&mut rng, 2, 4);
        let joint = Packed::from_sequences(&[a.clone(), b.clone()]);
        let (y_joint, _) = mha.forward(&joint);
        // Running each sequence alone must give identical rows: sequences
        // in one packed batch cannot attend across the boundary.
        let (y_a, _) = mha.forward(&Packed::from_sequences(&[a]));
        let (y_b, _) = mha.forward(&Packed::from_sequences(&[b]));
        for j in 0..4 {
            for r in 0..3 {
                assert!((y_joint.data[(r, j)] - y_a.data[(r, j)]).abs() < 1e-12);
            }
            for r in 0..2 {
                assert!((y_joint.data[(3 + r, j)] - y_b.data[(r, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut mha = MultiHeadAttention::new("t", &mut rng, 4, 2);
        let x = test_batch(&mut rng, 4);
        let weights = xavier_init(&mut rng, 5, 4);

        let (_, cache) = mha.forward(&x);
        let d_out = Packed {
            data: weights.clone(),
            offsets: x.offsets.clone(),
        };
        let dx = mha.backward(&cache, &d_out);

        let snapshot = mha.clone();
        gradcheck_all_params(&snapshot, &snapshot.params(), |m, pi, i, j, h| {
            m.params_mut()[pi].value[(i, j)] += h;
            let (y, _) = m.forward(&x);
            (&y.data * &weights).sum()
        });

        // Input gradient.
        for i in 0..x.data.nrows() {
            for j in 0..x.data.ncols() {
                let h = 1e-5 * x.data[(i, j)].abs().max(1.0);
                let mut xp = x.clone();
                xp.data[(i, j)] += h;
                let mut xm = x.clone();
                xm.data[(i, j)] -= h;
                let (yp, _) = snapshot.forward(&xp);
                let (ym, _) = snapshot.forward(&xm);
                let numeric = ((&yp.data * &weights).sum() - (&ym.data * &weights).sum()) / (2.0 * h);
                assert!(
                    rel_err(dx.data[(i, j)], numeric) < 1e-4,
                    "dx ({i},{j}): {} vs {numeric}",
                    dx.data[(i, j)]
                );
            }
        }
    }

    #[test]
    fn attention_with_adapters_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut mha = MultiHeadAttention::new("t", &mut rng, 4, 2);
        let mut lq = crate::nn::layers::LoraPair::new("t.wq", &mut rng, 4, 4, 2, 16.0);
        let mut lv = crate::nn::layers::LoraPair::new("t.wv", &mut rng, 4, 4, 2, 16.0);
        // Push B off zero so the adapter path carries signal.
        lq.b.value = xavier_init(&mut rng, 2, 4);
        lv.b.value = xavier_init(&mut rng, 2, 4);
        mha.lora_q = Some(lq);
        mha.lora_v = Some(lv);

        let x = test_batch(&mut rng, 4);
        let weights = xavier_init(&mut rng, 5, 4);
        let (_, cache) = mha.forward(&x);
        let d_out = Packed {
            data: weights.clone(),
            offsets: x.offsets.clone(),
        };
        mha.backward(&cache, &d_out);

        let snapshot = mha.clone();
        gradcheck_all_params(&snapshot, &snapshot.params(), |m, pi, i, j, h| {
            m.params_mut()[pi].value[(i, j)] += h;
            let (y, _) = m.forward(&x);
            (&y.data * &weights).sum()
        });
    }

    #[test]
    fn encoder_layer_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut layer = EncoderLayer::new("t", &mut rng, 4, 2, 0.0);
        let x = test_batch(&mut rng, 4);
        let weights = xavier_init(&mut rng, 5, 4);

        let mut fwd_rng = ChaCha8Rng::seed_from_u64(0);
        let (_, cache) = layer.forward(&x, false, &mut fwd_rng);
        let d_out = Packed {
            data: weights.clone(),
            offsets: x.offsets.clone(),
        };
        let dx = layer.backward(&cache, &d_out);

        let snapshot = layer.clone();
        gradcheck_all_params(&snapshot, &snapshot.params(), |m, pi, i, j, h| {
            m.params_mut()[pi].value[(i, j)] += h;
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (y, _) = m.forward(&x, false, &mut r);
            (&y.data * &weights).sum()
        });

        for i in 0..x.data.nrows() {
            for j in 0..x.data.ncols() {
                let h = 1e-5 * x.data[(i, j)].abs().max(1.0);
                let mut xp = x.clone();
                xp.data[(i, j)] += h;
                let mut xm = x.clone();
                xm.data[(i, j)] -= h;
                let mut ra = ChaCha8Rng::seed_from_u64(0);
                let mut rb = ChaCha8Rng::seed_from_u64(0);
                let (yp, _) = snapshot.forward(&xp, false, &mut ra);
                let (ym, _) = snapshot.forward(&xm, false, &mut rb);
                let numeric = ((&yp.data * &weights).sum() - (&ym.data * &weights).sum()) / (2.0 * h);
                assert!(
                    rel_err(dx.data[(i, j)], numeric) < 1e-4,
                    "dx ({i},{j}): {} vs {numeric}",
                    dx.data[(i, j)]
                );
            }
        }
    }

    #[test]
    fn dropout_gradient_with_frozen_mask() {
        // With the same RNG stream the mask is identical across evaluations,
        // so finite differences remain valid in train mode.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut layer = EncoderLayer::new("t", &mut rng, 4, 2, 0.3);
        let x = test_batch(&mut rng, 4);
        let weights = xavier_init(&mut rng, 5, 4);

        let mut fwd_rng = ChaCha8Rng::seed_from_u64(77);
        let (_, cache) = layer.forward(&x, true, &mut fwd_rng);
        let d_out = Packed {
            data: weights.clone(),
            offsets: x.offsets.clone(),
        };
        let dx = layer.backward(&cache, &d_out);

        let snapshot = layer.clone();
        for (i, j) in [(0, 0), (2, 3), (4, 1)] {
            let h = 1e-5 * x.data[(i, j)].abs().max(1.0);
            let mut xp = x.clone();
            xp.data[(i, j)] += h;
            let mut xm = x.clone();
            xm.data[(i, j)] -= h;
            let mut ra = ChaCha8Rng::seed_from_u64(77);
            let mut rb = ChaCha8Rng::seed_from_u64(77);
            let (yp, _) = snapshot.forward(&xp, true, &mut ra);
            let (ym, _) = snapshot.forward(&xm, true, &mut rb);
            let numeric = ((&yp.data * &weights).sum() - (&ym.data * &weights).sum()) / (2.0 * h);
            assert!(
                rel_err(dx.data[(i, j)], numeric) < 1e-4,
                "dx ({i},{j}): {} vs {numeric}",
                dx.data[(i, j)]
            );
        }
    }

    #[test]
    fn freezing_base_leaves_adapters_trainable() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut layer = EncoderLayer::new("t", &mut rng, 4, 2, 0.1);
        layer.mha.lora_q = Some(crate::nn::layers::LoraPair::new("q", &mut rng, 4, 4, 2, 16.0));
        layer.set_base_trainable(false);
        let trainable: Vec<&str> = layer
            .params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.as_str())
            .collect();
        assert_eq!(trainable, vec!["q.lora_a", "q.lora_b"]);
    }
}
