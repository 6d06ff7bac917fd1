//! Feed-forward quantized softmax network.
//!
//! Hidden layers use leaky-ReLU; the linear output layer is split into
//! `n_heads` blocks of `n_bins` logits, each pushed through its own softmax,
//! so one forward pass yields a pmf over bins per output site. Training
//! minimizes the summed-over-heads cross-entropy with minibatch RMSProp.
//! The output-layer gradient has the closed form `pmf − one-hot`, which the
//! backward pass uses directly; the log only appears in the loss value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Mat};

/// Probability floor inside the loss; keeps `log` finite without touching
/// the gradient path.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsnArchitecture {
    pub input_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Negative-side slope of the leaky ReLU.
    pub leaky_slope: f64,
    /// Number of softmax heads (output sites).
    pub n_heads: usize,
    /// Bins per head.
    pub n_bins: usize,
}

impl QsnArchitecture {
    pub fn new(input_dim: usize, n_heads: usize, n_bins: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![256, 256, 256],
            leaky_slope: 0.01,
            n_heads,
            n_bins,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.n_heads * self.n_bins
    }

    /// `(fan_in, fan_out)` of every weight matrix, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.n_heads == 0 || self.n_bins < 2 {
            return Err(Error::Config(format!(
                "degenerate architecture: input {}, heads {}, bins {}",
                self.input_dim, self.n_heads, self.n_bins
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden width of zero".into()));
        }
        Ok(())
    }
}

/// Weights, biases and the seed they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsNetwork {
    pub arch: QsnArchitecture,
    /// One `[out × in]` matrix per layer.
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
    pub init_seed: u64,
}

impl QsNetwork {
    /// Uniform `±1/√fan_in` weights, zero biases; bit-reproducible per seed.
    pub fn init(arch: QsnArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut w = Mat::zeros(fan_out, fan_in);
            for v in w.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            arch,
            weights,
            biases,
            init_seed: seed,
        })
    }

    /// All-zero parameters (uniform pmfs regardless of input).
    pub fn zeros(arch: QsnArchitecture) -> Result<Self> {
        arch.validate()?;
        let weights = arch
            .layer_dims()
            .iter()
            .map(|&(i, o)| Mat::zeros(o, i))
            .collect();
        let biases = arch.layer_dims().iter().map(|&(_, o)| vec![0.0; o]).collect();
        Ok(Self {
            arch,
            weights,
            biases,
            init_seed: 0,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }
}

/// Per-head softmax with max-subtraction, written into `pmf`.
pub fn softmax_heads(logits: &[f64], n_heads: usize, n_bins: usize, pmf: &mut [f64]) {
    debug_assert_eq!(logits.len(), n_heads * n_bins);
    for h in 0..n_heads {
        let block = h * n_bins..(h + 1) * n_bins;
        let max = logits[block.clone()]
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for i in block.clone() {
            let e = (logits[i] - max).exp();
            pmf[i] = e;
            sum += e;
        }
        for i in block {
            pmf[i] /= sum;
        }
    }
}

/// Activations of every layer for one batch.
pub struct ForwardPass {
    /// Hidden activations, one `[batch × width]` matrix per hidden layer.
    pub hidden: Vec<Mat>,
    /// Pre-softmax outputs `[batch × n_heads·n_bins]`.
    pub logits: Mat,
    /// Per-head pmfs, same shape as `logits`.
    pub pmf: Mat,
}

fn affine(input: &Mat, w: &Mat, b: &[f64], out: &mut Mat) {
    matmul_nt(input, w, out);
    for i in 0..out.rows() {
        for (v, bi) in out.row_mut(i).iter_mut().zip(b) {
            *v += bi;
        }
    }
}

fn leaky_inplace(m: &mut Mat, slope: f64) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// Batched forward pass.
pub fn forward_batch(net: &QsNetwork, input: &Mat) -> Result<ForwardPass> {
    if input.cols() != net.arch.input_dim {
        return Err(Error::Config(format!(
            "input dim {} does not match network input {}",
            input.cols(),
            net.arch.input_dim
        )));
    }
    let batch = input.rows();
    let n_layers = net.n_layers();
    let mut hidden: Vec<Mat> = Vec::with_capacity(n_layers - 1);
    let mut current = input;
    for l in 0..n_layers - 1 {
        let mut z = Mat::zeros(batch, net.weights[l].rows());
        affine(current, &net.weights[l], &net.biases[l], &mut z);
        leaky_inplace(&mut z, net.arch.leaky_slope);
        if !z.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite activation in hidden layer {l}"
            )));
        }
        hidden.push(z);
        current = hidden.last().unwrap();
    }
    let last = n_layers - 1;
    let mut logits = Mat::zeros(batch, net.arch.output_dim());
    affine(current, &net.weights[last], &net.biases[last], &mut logits);
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite output logits".into()));
    }
    let mut pmf = Mat::zeros(batch, net.arch.output_dim());
    for i in 0..batch {
        softmax_heads(
            logits.row(i),
            net.arch.n_heads,
            net.arch.n_bins,
            pmf.row_mut(i),
        );
    }
    Ok(ForwardPass {
        hidden,
        logits,
        pmf,
    })
}

/// Single-row forward pass; returns `(logits, pmf)`.
pub fn forward(net: &QsNetwork, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pass = forward_batch(net, &Mat::from_vec(1, input.len(), input.to_vec()))?;
    Ok((pass.logits.row(0).to_vec(), pass.pmf.row(0).to_vec()))
}

/// Mean over rows of the summed-over-heads cross-entropy.
///
/// `labels` holds the true bin per `(row, head)`, flattened row-major.
pub fn loss_from_pmf(pmf: &Mat, labels: &[usize], n_heads: usize, n_bins: usize) -> f64 {
    let rows = pmf.rows();
    debug_assert_eq!(labels.len(), rows * n_heads);
    let mut total = 0.0;
    for i in 0..rows {
        let p = pmf.row(i);
        for h in 0..n_heads {
            let true_bin = labels[i * n_heads + h];
            total -= p[h * n_bins + true_bin].max(LOG_FLOOR).ln();
        }
    }
    total / rows as f64
}

pub fn loss(net: &QsNetwork, input: &Mat, labels: &[usize]) -> Result<f64> {
    let pass = forward_batch(net, input)?;
    Ok(loss_from_pmf(
        &pass.pmf,
        labels,
        net.arch.n_heads,
        net.arch.n_bins,
    ))
}

/// Per-row output-layer gradient `pmf − one-hot` (no batch averaging).
pub fn output_delta(pmf: &Mat, labels: &[usize], n_heads: usize, n_bins: usize) -> Mat {
    let mut delta = pmf.clone();
    for i in 0..delta.rows() {
        let row = delta.row_mut(i);
        for h in 0..n_heads {
            row[h * n_bins + labels[i * n_heads + h]] -= 1.0;
        }
    }
    delta
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

/// Backpropagate the batch-mean loss through the cached forward pass.
pub fn backward(
    net: &QsNetwork,
    input: &Mat,
    pass: &ForwardPass,
    labels: &[usize],
) -> Gradients {
    let batch = input.rows();
    let inv_b = 1.0 / batch as f64;
    let n_layers = net.n_layers();
    let mut g_weights: Vec<Mat> = net
        .weights
        .iter()
        .map(|w| Mat::zeros(w.rows(), w.cols()))
        .collect();
    let mut g_biases: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();

    // δ at the output layer, averaged over the batch inside the GEMM
    let mut delta = output_delta(&pass.pmf, labels, net.arch.n_heads, net.arch.n_bins);

    for l in (0..n_layers).rev() {
        let below: &Mat = if l == 0 { input } else { &pass.hidden[l - 1] };
        // dW = (1/B)·δᵀ·A_below, db = (1/B)·column sums of δ
        matmul_tn(&delta, below, &mut g_weights[l]);
        for v in g_weights[l].data_mut() {
            *v *= inv_b;
        }
        for i in 0..batch {
            for (g, d) in g_biases[l].iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }
        for g in &mut g_biases[l] {
            *g *= inv_b;
        }
        if l > 0 {
            // δ_below = (δ·W) ⊙ leaky'(z_below)
            let mut next = Mat::zeros(batch, net.weights[l].cols());
            matmul_nn(&delta, &net.weights[l], &mut next);
            let act = &pass.hidden[l - 1];
            for i in 0..batch {
                for (d, a) in next.row_mut(i).iter_mut().zip(act.row(i)) {
                    if *a <= 0.0 {
                        *d *= net.arch.leaky_slope;
                    }
                }
            }
            delta = next;
        }
    }
    Gradients {
        weights: g_weights,
        biases: g_biases,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            learning_rate: 0.001,
            batch_size: 64,
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::Config("rms decay must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Running second-moment accumulators, one per parameter tensor.
#[derive(Debug, Clone)]
pub struct RmsPropState {
    v_weights: Vec<Mat>,
    v_biases: Vec<Vec<f64>>,
}

impl RmsPropState {
    pub fn zeros(net: &QsNetwork) -> Self {
        Self {
            v_weights: net
                .weights
                .iter()
                .map(|w| Mat::zeros(w.rows(), w.cols()))
                .collect(),
            v_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Elementwise RMSProp: `v ← γv + (1−γ)g²; w ← w − lr·g/(√v + ε)`.
pub fn rmsprop_step(params: &mut [f64], grads: &[f64], v: &mut [f64], cfg: &TrainConfig) {
    let (gamma, lr, eps) = (cfg.rms_decay, cfg.learning_rate, cfg.rms_epsilon);
    for ((w, &g), vi) in params.iter_mut().zip(grads).zip(v.iter_mut()) {
        *vi = gamma * *vi + (1.0 - gamma) * g * g;
        *w -= lr * g / (vi.sqrt() + eps);
    }
}

pub fn rmsprop_update(
    net: &mut QsNetwork,
    grads: &Gradients,
    state: &mut RmsPropState,
    cfg: &TrainConfig,
) {
    for l in 0..net.weights.len() {
        rmsprop_step(
            net.weights[l].data_mut(),
            grads.weights[l].data(),
            state.v_weights[l].data_mut(),
            cfg,
        );
        rmsprop_step(
            &mut net.biases[l],
            &grads.biases[l],
            &mut state.v_biases[l],
            cfg,
        );
    }
}

/// Minibatch training loop; returns the per-iteration loss history.
///
/// Rows are sampled uniformly with replacement from `features`, which must
/// already be standardized. Deterministic given the RNG state.
pub fn train(
    net: &mut QsNetwork,
    features: &Mat,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let rows = features.rows();
    if rows == 0 {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let n_heads = net.arch.n_heads;
    if labels.len() != rows * n_heads {
        return Err(Error::Config(format!(
            "labels length {} does not match {} rows × {} heads",
            labels.len(),
            rows,
            n_heads
        )));
    }
    let mut state = RmsPropState::zeros(net);
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut batch_idx = vec![0usize; cfg.batch_size];
    let mut batch_labels = vec![0usize; cfg.batch_size * n_heads];
    for iter in 0..cfg.iterations {
        for idx in &mut batch_idx {
            *idx = rng.gen_range(0..rows);
        }
        let batch = features.gather_rows(&batch_idx);
        for (k, &idx) in batch_idx.iter().enumerate() {
            batch_labels[k * n_heads..(k + 1) * n_heads]
                .copy_from_slice(&labels[idx * n_heads..(idx + 1) * n_heads]);
        }
        let pass = forward_batch(net, &batch)?;
        let batch_loss = loss_from_pmf(&pass.pmf, &batch_labels, n_heads, net.arch.n_bins);
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { iteration: iter });
        }
        let grads = backward(net, &batch, &pass, &batch_labels);
        rmsprop_update(net, &grads, &mut state, cfg);
        history.push(batch_loss);
    }
    Ok(history)
}

/// Fraction of rows whose argmax bin differs from the true bin, per head.
/// Ties break toward the lowest index on both sides.
pub fn misclassification(net: &QsNetwork, features: &Mat, labels: &[usize]) -> Result<Vec<f64>> {
    let rows = features.rows();
    let (n_heads, n_bins) = (net.arch.n_heads, net.arch.n_bins);
    let mut wrong = vec![0usize; n_heads];
    let chunk = 1024;
    let mut start = 0;
    while start < rows {
        let end = (start + chunk).min(rows);
        let idx: Vec<usize> = (start..end).collect();
        let batch = features.gather_rows(&idx);
        let pass = forward_batch(net, &batch)?;
        for (k, row) in idx.iter().enumerate() {
            let p = pass.pmf.row(k);
            for h in 0..n_heads {
                let pred = argmax(&p[h * n_bins..(h + 1) * n_bins]);
                if pred != labels[row * n_heads + h] {
                    wrong[h] += 1;
                }
            }
        }
        start = end;
    }
    Ok(wrong.iter().map(|&w| w as f64 / rows as f64).collect())
}

/// Index of the largest value; lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
