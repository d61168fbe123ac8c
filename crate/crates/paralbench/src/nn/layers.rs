//! Dense, normalization, and low-rank-adapter layers with explicit
//! forward caches and hand-written backward passes.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{normal_init, xavier_init, Param};

/// Fully connected layer `y = x W + b`. Weight shape is (in, out); the bias
/// is optional because the sequence projection is a pure matrix.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

impl Linear {
    pub fn new(name: &str, rng: &mut ChaCha8Rng, d_in: usize, d_out: usize, bias: bool) -> Self {
        Linear {
            w: Param::new(format!("{name}.w"), xavier_init(rng, d_in, d_out)),
            b: bias.then(|| Param::new(format!("{name}.b"), Array2::zeros((1, d_out)))),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.value);
        if let Some(b) = &self.b {
            y += &b.value;
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, d_out: &Array2<f64>) -> Array2<f64> {
        self.w.grad += &x.t().dot(d_out);
        if let Some(b) = &mut self.b {
            b.grad += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        d_out.dot(&self.w.value.t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.w];
        if let Some(b) = &mut self.b {
            out.push(b);
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.w];
        if let Some(b) = &self.b {
            out.push(b);
        }
        out
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.w.trainable = trainable;
        if let Some(b) = &mut self.b {
            b.trainable = trainable;
        }
    }
}

/// Row-wise layer normalization with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

/// Forward state needed by the LayerNorm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: Param::new(format!("{name}.gamma"), Array2::ones((1, d))),
            beta: Param::new(format!("{name}.beta"), Array2::zeros((1, d))),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Vec::with_capacity(x.nrows());
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std.push(istd);
            for (j, &v) in row.iter().enumerate() {
                xhat[(i, j)] = (v - mean) * istd;
            }
        }
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, d_out: &Array2<f64>) -> Array2<f64> {
        let d = d_out.ncols() as f64;
        self.gamma.grad += &(&cache.xhat * d_out).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dx = Array2::zeros(d_out.raw_dim());
        for i in 0..d_out.nrows() {
            let istd = cache.inv_std[i];
            // d_xhat = d_out * gamma; then the standard two-moment correction.
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..d_out.ncols() {
                let dxh = d_out[(i, j)] * self.gamma.value[(0, j)];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * cache.xhat[(i, j)];
            }
            for j in 0..d_out.ncols() {
                let dxh = d_out[(i, j)] * self.gamma.value[(0, j)];
                dx[(i, j)] = istd * (dxh - sum_dxhat / d - cache.xhat[(i, j)] * sum_dxhat_xhat / d);
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.gamma.trainable = trainable;
        self.beta.trainable = trainable;
    }
}

/// Low-rank additive adapter for a frozen weight: the effective weight is
/// `W + (alpha/r) * A B` with `A: (d_in, r)` and `B: (r, d_out)`. `B` starts
/// at zero so the adapted layer is bit-identical to the frozen one until
/// training moves it.
#[derive(Debug, Clone)]
pub struct LoraPair {
    pub a: Param,
    pub b: Param,
    pub scale: f64,
    pub rank: usize,
}

impl LoraPair {
    pub fn new(
        name: &str,
        rng: &mut ChaCha8Rng,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
    ) -> Self {
        LoraPair {
            a: Param::new(format!("{name}.lora_a"), normal_init(rng, d_in, rank, 0.02)),
            b: Param::new(format!("{name}.lora_b"), Array2::zeros((rank, d_out))),
            scale: alpha / rank as f64,
            rank,
        }
    }

    /// Adapter contribution `(x A) B * scale`; caches `x A` for backward.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let xa = x.dot(&self.a.value);
        let y = xa.dot(&self.b.value) * self.scale;
        (y, xa)
    }

    /// Accumulates adapter gradients and returns this path's input gradient.
    pub fn backward(
        &mut self,
        x: &Array2<f64>,
        xa: &Array2<f64>,
        d_out: &Array2<f64>,
    ) -> Array2<f64> {
        self.b.grad += &(xa.t().dot(d_out) * self.scale);
        let d_xa = d_out.dot(&self.b.value.t()) * self.scale;
        self.a.grad += &x.t().dot(&d_xa);
        d_xa.dot(&self.a.value.t())
    }

    pub fn trainable_count(&self) -> usize {
        self.a.numel() + self.b.numel()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.a, &mut self.b]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.a, &self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rel_err;
    use rand::SeedableRng;

    fn gradcheck_scalar<F>(param_like: &Array2<f64>, analytic: &Array2<f64>, mut eval: F)
    where
        F: FnMut(&Array2<f64>) -> f64,
    {
        for i in 0..param_like.nrows() {
            for j in 0..param_like.ncols() {
                let h = 1e-5 * param_like[(i, j)].abs().max(1.0);
                let mut plus = param_like.clone();
                plus[(i, j)] += h;
                let mut minus = param_like.clone();
                minus[(i, j)] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                assert!(
                    rel_err(analytic[(i, j)], numeric) < 1e-4,
                    "({i},{j}): analytic {} vs numeric {numeric}",
                    analytic[(i, j)]
                );
            }
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut lin = Linear::new("t", &mut rng, 4, 3, true);
        let x = xavier_init(&mut rng, 5, 4);
        let weights = xavier_init(&mut rng, 5, 3); // fixed projection to a scalar
        let loss = |y: &Array2<f64>| (y * &weights).sum();

        let y = lin.forward(&x);
        let dx = lin.backward(&x, &weights);

        let w0 = lin.w.value.clone();
        gradcheck_scalar(&w0, &lin.w.grad, |w| {
            let mut y = x.dot(w);
            y += &lin.b.as_ref().unwrap().value;
            loss(&y)
        });
        let b0 = lin.b.as_ref().unwrap().value.clone();
        gradcheck_scalar(&b0, &lin.b.as_ref().unwrap().grad, |b| {
            let mut y = x.dot(&w0);
            y += b;
            loss(&y)
        });
        gradcheck_scalar(&x, &dx, |xv| {
            let mut y = xv.dot(&w0);
            y += &b0;
            loss(&y)
        });
        assert_eq!(y.dim(), (5, 3));
    }

    #[test]
    fn layernorm_output_is_normalized() {
        let ln = LayerNorm::new("t", 6);
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i as f64 + 1.0) * (j as f64 - 2.5));
        let (y, _) = ln.forward(&x);
        for row in y.rows() {
            let mean: f64 = row.sum() / 6.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn layernorm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut ln = LayerNorm::new("t", 5);
        ln.gamma.value = xavier_init(&mut rng, 1, 5);
        ln.beta.value = xavier_init(&mut rng, 1, 5);
        let x = xavier_init(&mut rng, 4, 5);
        let weights = xavier_init(&mut rng, 4, 5);

        let (_, cache) = ln.forward(&x);
        let dx = ln.backward(&cache, &weights);

        let gamma0 = ln.gamma.value.clone();
        let beta0 = ln.beta.value.clone();
        let eval = |xv: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>| -> f64 {
            let probe = LayerNorm {
                gamma: Param::new("g", g.clone()),
                beta: Param::new("b", b.clone()),
                eps: 1e-5,
            };
            let (y, _) = probe.forward(xv);
            (&y * &weights).sum()
        };
        gradcheck_scalar(&x, &dx, |xv| eval(xv, &gamma0, &beta0));
        gradcheck_scalar(&gamma0, &ln.gamma.grad, |g| eval(&x, g, &beta0));
        gradcheck_scalar(&beta0, &ln.beta.grad, |b| eval(&x, &gamma0, b));
    }

    #[test]
    fn lora_starts_as_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lora = LoraPair::new("t", &mut rng, 8, 8, 4, 16.0);
        let x = xavier_init(&mut rng, 3, 8);
        let (delta, _) = lora.forward(&x);
        assert!(delta.iter().all(|&v| v == 0.0), "B=0 must zero the path");
        assert!(lora.a.value.iter().any(|&v| v != 0.0));
        assert_eq!(lora.trainable_count(), 8 * 4 + 4 * 8);
        assert!((lora.scale - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lora_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut lora = LoraPair::new("t", &mut rng, 4, 3, 2, 16.0);
        // Move B off zero so every path carries gradient.
        lora.b.value = xavier_init(&mut rng, 2, 3);
        let x = xavier_init(&mut rng, 5, 4);
        let weights = xavier_init(&mut rng, 5, 3);

        let (_, xa) = lora.forward(&x);
        let dx = lora.backward(&x, &xa, &weights);

        let a0 = lora.a.value.clone();
        let b0 = lora.b.value.clone();
        let scale = lora.scale;
        let eval = |xv: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>| -> f64 {
            let y = xv.dot(a).dot(b) * scale;
            (&y * &weights).sum()
        };
        gradcheck_scalar(&x, &dx, |xv| eval(xv, &a0, &b0));
        gradcheck_scalar(&a0, &lora.a.grad, |a| eval(&x, a, &b0));
        gradcheck_scalar(&b0, &lora.b.grad, |b| eval(&x, &a0, b));
    }
}
