//! Minimal neural-network substrate for the downstream probe: tensors are
//! 64-bit `ndarray` matrices, batches of variable-length sequences are
//! packed row-blocks (no padding, no masking), and every layer implements
//! an explicit backward pass against cached forward state. Finite-difference
//! tests pin the analytic gradients.

pub mod encoder;
pub mod layers;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// One trainable (or frozen) tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    // Optimizer moments stay unallocated until the first update so frozen
    // parameters never pay for them.
    m1: Option<Array2<f64>>,
    m2: Option<Array2<f64>>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let shape = value.raw_dim();
        Param {
            name: name.into(),
            value,
            grad: Array2::zeros(shape),
            m1: None,
            m2: None,
            trainable: true,
        }
    }

    pub fn frozen(name: impl Into<String>, value: Array2<f64>) -> Self {
        let mut p = Self::new(name, value);
        p.trainable = false;
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Uniform Xavier/Glorot init: ±sqrt(6 / (fan_in + fan_out)).
pub fn xavier_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Gaussian init with the given standard deviation.
pub fn normal_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = StandardNormal.sample(rng);
        v * std
    })
}

/// Decoupled-weight-decay Adam. Weight decay applies uniformly to every
/// trainable parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
        }
    }

    /// One update over the given parameters at learning rate `lr`.
    pub fn step(&mut self, lr: f64, params: Vec<&mut Param>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for param in params {
            if !param.trainable {
                continue;
            }
            azip_update(param, self.beta1, self.beta2, bc1, bc2, self.eps, lr, self.weight_decay);
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_update(
    param: &mut Param,
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    eps: f64,
    lr: f64,
    weight_decay: f64,
) {
    let shape = param.value.raw_dim();
    let g = &param.grad;
    let m1 = param.m1.get_or_insert_with(|| Array2::zeros(shape));
    m1.zip_mut_with(g, |m, &gv| *m = beta1 * *m + (1.0 - beta1) * gv);
    let m2 = param.m2.get_or_insert_with(|| Array2::zeros(shape));
    m2.zip_mut_with(g, |v, &gv| *v = beta2 * *v + (1.0 - beta2) * gv * gv);
    let m1 = param.m1.as_ref().unwrap();
    let m2 = param.m2.as_ref().unwrap();
    let mut update = Array2::zeros(shape);
    for ((i, j), u) in update.indexed_iter_mut() {
        let mhat = m1[(i, j)] / bc1;
        let vhat = m2[(i, j)] / bc2;
        *u = mhat / (vhat.sqrt() + eps);
    }
    let wd = weight_decay;
    param.value.zip_mut_with(&update, |v, &u| {
        *v -= lr * (u + wd * *v);
    });
}

/// Linear decay from the base rate to zero over the training horizon.
pub fn polynomial_decay_lr(base_lr: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let t = (step.min(total_steps)) as f64 / total_steps as f64;
    base_lr * (1.0 - t)
}

/// A batch of variable-length sequences packed into one row-block matrix.
/// Sequence `i` owns rows `offsets[i]..offsets[i+1]`.
#[derive(Debug, Clone)]
pub struct Packed {
    pub data: Array2<f64>,
    pub offsets: Vec<usize>,
}

impl Packed {
    pub fn from_sequences(seqs: &[Array2<f64>]) -> Packed {
        assert!(!seqs.is_empty(), "packed batch needs at least one sequence");
        let d = seqs[0].ncols();
        let total: usize = seqs.iter().map(|s| s.nrows()).sum();
        let mut data = Array2::zeros((total, d));
        let mut offsets = Vec::with_capacity(seqs.len() + 1);
        offsets.push(0);
        let mut at = 0;
        for seq in seqs {
            assert_eq!(seq.ncols(), d, "inconsistent feature width in batch");
            data.slice_mut(ndarray::s![at..at + seq.nrows(), ..])
                .assign(seq);
            at += seq.nrows();
            offsets.push(at);
        }
        Packed { data, offsets }
    }

    pub fn n_sequences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn seq_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn rows(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data
            .slice(ndarray::s![self.offsets[i]..self.offsets[i + 1], ..])
    }

    /// Same offsets, zeroed data (gradient buffers).
    pub fn zeros_like(&self) -> Packed {
        Packed {
            data: Array2::zeros(self.data.raw_dim()),
            offsets: self.offsets.clone(),
        }
    }

    /// Rows at each sequence's first position (pooling / readout).
    pub fn first_rows(&self) -> Array2<f64> {
        let d = self.data.ncols();
        let mut out = Array2::zeros((self.n_sequences(), d));
        for i in 0..self.n_sequences() {
            out.row_mut(i).assign(&self.data.row(self.offsets[i]));
        }
        out
    }
}

/// Numerically stable row-wise softmax, in place.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Backward of row-wise softmax given its output `probs` and `d_probs`.
pub fn softmax_rows_backward(probs: &Array2<f64>, d_probs: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for (i, (p_row, d_row)) in probs
        .axis_iter(Axis(0))
        .zip(d_probs.axis_iter(Axis(0)))
        .enumerate()
    {
        let dot: f64 = p_row.iter().zip(d_row.iter()).map(|(p, d)| p * d).sum();
        for (j, (&p, &d)) in p_row.iter().zip(d_row.iter()).enumerate() {
            out[(i, j)] = p * (d - dot);
        }
    }
    out
}

pub fn relu_forward(x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    (x * &mask, mask)
}

pub fn relu_backward(d_out: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    d_out * mask
}

/// Inverted dropout: scales kept activations by 1/(1-rate) at train time so
/// evaluation is a pure pass-through. Returns the multiplier mask.
pub fn dropout_forward(
    x: &Array2<f64>,
    rate: f64,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> (Array2<f64>, Array2<f64>) {
    if !train || rate == 0.0 {
        return (x.clone(), Array2::ones(x.raw_dim()));
    }
    let keep = 1.0 - rate;
    let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    (x * &mask, mask)
}

pub fn dropout_backward(d_out: &Array2<f64>, mask: &Array2<f64>) -> Array2<f64> {
    d_out * mask
}

/// Fixed sinusoidal position table of shape (len, d).
pub fn sinusoidal_encoding(len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d));
    for p in 0..len {
        for j in 0..d {
            let exponent = (2 * (j / 2)) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            pe[(p, j)] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Add position encodings per sequence (position restarts at every
/// sequence boundary). Backward is a pass-through.
pub fn add_positional(x: &mut Packed) {
    let d = x.data.ncols();
    let max_len = (0..x.n_sequences()).map(|i| x.seq_len(i)).max().unwrap_or(0);
    let pe = sinusoidal_encoding(max_len, d);
    for i in 0..x.n_sequences() {
        let (start, end) = (x.offsets[i], x.offsets[i + 1]);
        let mut rows = x.data.slice_mut(ndarray::s![start..end, ..]);
        rows += &pe.slice(ndarray::s![..end - start, ..]);
    }
}

/// Relative-error comparison used by the finite-difference tests.
#[cfg(test)]
pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
