//! From-scratch multilayer-perceptron training and federated averaging.
//!
//! Models are flat `f64` vectors laid out layer by layer: weight matrix
//! (input-major, so `w[i * n_out + j]` maps input `i` to output `j`),
//! then bias. Hidden layers use ReLU, the output layer a numerically
//! stable softmax with cross-entropy loss. Gradients come from analytic
//! backpropagation in the same flat layout.
//!
//! Federated rounds compose two pieces: `local_update` runs `E` epochs of
//! seeded minibatch SGD on one shard, and `aggregate` forms the
//! sample-count-weighted average of the returned parameter vectors.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Shard};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSWMLP01";

/// Flat parameter vector of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_sizes: Vec<usize>,
    values: Vec<f64>,
}

impl ModelParams {
    /// Zero-initialized parameters for the given layer widths.
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        assert!(
            layer_sizes.len() >= 2 && layer_sizes.iter().all(|&s| s > 0),
            "need at least two positive layer sizes"
        );
        let count = param_count(layer_sizes);
        Self {
            layer_sizes: layer_sizes.to_vec(),
            values: vec![0.0; count],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Weight and bias slices of weight-layer `l`.
    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = self.layer_span(l);
        (
            &self.values[start..start + n_in * n_out],
            &self.values[start + n_in * n_out..start + n_in * n_out + n_out],
        )
    }

    fn layer_span(&self, l: usize) -> (usize, usize, usize) {
        let mut start = 0;
        for k in 0..l {
            start += self.layer_sizes[k] * self.layer_sizes[k + 1] + self.layer_sizes[k + 1];
        }
        (start, self.layer_sizes[l], self.layer_sizes[l + 1])
    }
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Hyperparameters of one local training pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub minibatch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            local_epochs: 5,
            minibatch_size: 10,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 || self.minibatch_size == 0 {
            return Err(Error::Config(
                "local epochs and minibatch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded uniform initialization with per-layer fan-based bounds;
/// biases start at zero.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> ModelParams {
    let mut model = ModelParams::zeros(layer_sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for l in 0..layer_sizes.len() - 1 {
        let (start, n_in, n_out) = model.layer_span(l);
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        for w in &mut model.values[start..start + n_in * n_out] {
            *w = rng.gen::<f64>() * 2.0 * bound - bound;
        }
        // biases stay zero
    }
    model
}

// ---------------------------------------------------------------------------
// Dense kernels. These run inside the minibatch loop; keep them branch-lean.
// Zero inputs are skipped: raw pixels are mostly background and ReLU zeroes
// out roughly half of the hidden units.
// ---------------------------------------------------------------------------

#[inline]
fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * *s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let quads = a.len() / 4;
    for i in 0..quads {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * quads..a.len() {
        sum += a[j] * b[j];
    }
    sum
}

/// z = a_prev * W + bias, optionally ReLU-clamped.
#[allow(clippy::too_many_arguments)]
fn layer_forward(
    w: &[f64],
    bias: &[f64],
    a_prev: &[f64],
    z: &mut [f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
    relu: bool,
) {
    for s in 0..batch {
        z[s * n_out..(s + 1) * n_out].copy_from_slice(bias);
    }
    for i in 0..n_in {
        let wrow = &w[i * n_out..(i + 1) * n_out];
        for s in 0..batch {
            let x = a_prev[s * n_in + i];
            if x != 0.0 {
                axpy(&mut z[s * n_out..(s + 1) * n_out], x, wrow);
            }
        }
    }
    if relu {
        for v in z[..batch * n_out].iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Converts output-layer scores into softmax probabilities in place and
/// returns the summed cross-entropy over the batch.
fn softmax_loss(scores_to_probs: &mut [f64], labels: &[usize], batch: usize, n_out: usize) -> f64 {
    let mut loss_sum = 0.0;
    for s in 0..batch {
        let row = &mut scores_to_probs[s * n_out..(s + 1) * n_out];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let score_at_label = row[labels[s]];
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        loss_sum += max + sum.ln() - score_at_label;
        let inv = 1.0 / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    loss_sum
}

/// Accumulates weight/bias gradients for one layer and, unless this is the
/// first layer, the upstream error signal masked by the previous ReLU.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    w: &[f64],
    a_prev: &[f64],
    dz: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    da_prev: Option<&mut [f64]>,
    batch: usize,
    n_in: usize,
    n_out: usize,
) {
    for s in 0..batch {
        axpy(gb, 1.0, &dz[s * n_out..(s + 1) * n_out]);
    }
    for i in 0..n_in {
        let gwrow = &mut gw[i * n_out..(i + 1) * n_out];
        for s in 0..batch {
            let a = a_prev[s * n_in + i];
            if a != 0.0 {
                axpy(gwrow, a, &dz[s * n_out..(s + 1) * n_out]);
            }
        }
    }
    if let Some(da) = da_prev {
        for s in 0..batch {
            let dzrow = &dz[s * n_out..(s + 1) * n_out];
            for i in 0..n_in {
                da[s * n_in + i] = if a_prev[s * n_in + i] > 0.0 {
                    dot(&w[i * n_out..(i + 1) * n_out], dzrow)
                } else {
                    0.0
                };
            }
        }
    }
}

/// Reusable per-thread buffers for batched passes.
struct Workspace {
    /// acts[0] holds the gathered inputs; acts[l] the post-activation of
    /// weight-layer l-1 (softmax probabilities for the last layer).
    acts: Vec<Vec<f64>>,
    /// Ping-pong error-signal buffers.
    delta: [Vec<f64>; 2],
    grad: Vec<f64>,
}

impl Workspace {
    fn new(layer_sizes: &[usize], max_batch: usize) -> Self {
        let acts = layer_sizes
            .iter()
            .map(|&s| vec![0.0; s * max_batch])
            .collect();
        let widest = *layer_sizes.iter().max().unwrap();
        Self {
            acts,
            delta: [vec![0.0; widest * max_batch], vec![0.0; widest * max_batch]],
            grad: vec![0.0; param_count(layer_sizes)],
        }
    }
}

fn forward_pass(model: &ModelParams, batch: usize, ws: &mut Workspace) {
    let passes = model.layer_sizes.len() - 1;
    for l in 0..passes {
        let (w, bias) = model.layer(l);
        let n_in = model.layer_sizes[l];
        let n_out = model.layer_sizes[l + 1];
        let (before, after) = ws.acts.split_at_mut(l + 1);
        layer_forward(
            w,
            bias,
            &before[l],
            &mut after[0],
            batch,
            n_in,
            n_out,
            l + 1 < passes,
        );
    }
}

/// Mean loss and gradient over the gathered batch in `ws.acts[0]`.
/// `ws.acts` ends with softmax probabilities after this call.
fn loss_and_gradient_pass(
    model: &ModelParams,
    labels: &[usize],
    batch: usize,
    ws: &mut Workspace,
) -> f64 {
    forward_pass(model, batch, ws);
    let passes = model.layer_sizes.len() - 1;
    let n_out = model.layer_sizes[passes];

    let loss_sum = softmax_loss(&mut ws.acts[passes], labels, batch, n_out);

    ws.grad.fill(0.0);
    // dz at the output: probability minus one-hot.
    ws.delta[0][..batch * n_out].copy_from_slice(&ws.acts[passes][..batch * n_out]);
    for (s, &label) in labels.iter().enumerate().take(batch) {
        ws.delta[0][s * n_out + label] -= 1.0;
    }

    let mut cur = 0;
    for l in (0..passes).rev() {
        let (start, n_in, n_out) = model.layer_span(l);
        let (w, _) = model.layer(l);
        let (gw, gb) = {
            let slice = &mut ws.grad[start..start + n_in * n_out + n_out];
            slice.split_at_mut(n_in * n_out)
        };
        let (dz_buf, da_buf) = if cur == 0 {
            let (a, b) = ws.delta.split_at_mut(1);
            (&a[0], &mut b[0])
        } else {
            let (a, b) = ws.delta.split_at_mut(1);
            (&b[0], &mut a[0])
        };
        let da_prev = if l > 0 {
            Some(&mut da_buf[..batch * n_in])
        } else {
            None
        };
        layer_backward(
            w,
            &ws.acts[l],
            &dz_buf[..batch * n_out],
            gw,
            gb,
            da_prev,
            batch,
            n_in,
            n_out,
        );
        cur ^= 1;
    }

    let inv = 1.0 / batch as f64;
    for g in &mut ws.grad {
        *g *= inv;
    }
    loss_sum * inv
}

fn gather_rows(dataset: &Dataset, indices: &[usize], dst: &mut [f64]) {
    let len = dataset.feature_len();
    for (s, &i) in indices.iter().enumerate() {
        dst[s * len..(s + 1) * len].copy_from_slice(dataset.feature(i));
    }
}

/// Runs the model on a single input.
///
/// Returns the class probabilities and the per-hidden-layer activations.
pub fn forward(model: &ModelParams, input: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if input.len() != model.layer_sizes[0] {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, model expects {}",
            input.len(),
            model.layer_sizes[0]
        )));
    }
    let mut ws = Workspace::new(&model.layer_sizes, 1);
    ws.acts[0].copy_from_slice(input);
    forward_pass(model, 1, &mut ws);
    let passes = model.layer_sizes.len() - 1;
    let n_out = model.layer_sizes[passes];
    let scores = &mut ws.acts[passes];
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in scores.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in scores.iter_mut() {
        *v /= sum;
    }
    let probs = scores[..n_out].to_vec();
    let hidden = ws.acts[1..passes].to_vec();
    Ok((probs, hidden))
}

/// Mean cross-entropy and analytic gradient over an explicit batch.
pub fn local_loss_and_gradient(
    model: &ModelParams,
    batch: &[(&[f64], usize)],
) -> Result<(f64, Vec<f64>)> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let n_in = model.layer_sizes[0];
    let n_out = *model.layer_sizes.last().unwrap();
    for (input, label) in batch {
        if input.len() != n_in {
            return Err(Error::ShapeMismatch(format!(
                "input has {} features, model expects {n_in}",
                input.len()
            )));
        }
        if *label >= n_out {
            return Err(Error::LabelOutOfRange {
                label: *label,
                num_classes: n_out,
            });
        }
    }
    let mut ws = Workspace::new(&model.layer_sizes, batch.len());
    for (s, (input, _)) in batch.iter().enumerate() {
        ws.acts[0][s * n_in..(s + 1) * n_in].copy_from_slice(input);
    }
    let labels: Vec<usize> = batch.iter().map(|&(_, label)| label).collect();
    let loss = loss_and_gradient_pass(model, &labels, batch.len(), &mut ws);
    Ok((loss, ws.grad))
}

/// `E` epochs of seeded minibatch SGD over one shard; the input model is
/// untouched and the updated copy is returned.
pub fn local_update(
    model: &ModelParams,
    shard: &Shard,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<ModelParams> {
    config.validate()?;
    if shard.sample_indices.is_empty() {
        return Err(Error::EmptyShard(shard.owner_uav));
    }
    if dataset.feature_len() != model.layer_sizes[0] {
        return Err(Error::ShapeMismatch(format!(
            "dataset features have length {}, model expects {}",
            dataset.feature_len(),
            model.layer_sizes[0]
        )));
    }
    let n_out = *model.layer_sizes.last().unwrap();
    if dataset.num_classes() > n_out {
        return Err(Error::LabelOutOfRange {
            label: dataset.num_classes() - 1,
            num_classes: n_out,
        });
    }

    let mut updated = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order = shard.sample_indices.clone();
    let batch_cap = config.minibatch_size.min(order.len());
    let mut ws = Workspace::new(&model.layer_sizes, batch_cap);
    let mut labels = vec![0usize; batch_cap];

    for _ in 0..config.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.minibatch_size) {
            let b = chunk.len();
            gather_rows(dataset, chunk, &mut ws.acts[0]);
            for (s, &i) in chunk.iter().enumerate() {
                labels[s] = dataset.label(i);
            }
            loss_and_gradient_pass(&updated, &labels[..b], b, &mut ws);
            let lr = config.learning_rate;
            for (w, g) in updated.values.iter_mut().zip(&ws.grad) {
                *w -= lr * g;
            }
        }
    }
    Ok(updated)
}

/// Element-wise average of the models weighted by sample counts.
pub fn aggregate(models: &[ModelParams], sample_counts: &[usize]) -> Result<ModelParams> {
    if models.is_empty() || models.len() != sample_counts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models vs {} sample counts",
            models.len(),
            sample_counts.len()
        )));
    }
    let sizes = models[0].layer_sizes.clone();
    for m in models {
        if m.layer_sizes != sizes {
            return Err(Error::ShapeMismatch(
                "models disagree on layer sizes".into(),
            ));
        }
    }
    let total: usize = sample_counts.iter().sum();
    if total == 0 {
        return Err(Error::Config(
            "aggregate needs a positive total sample count".into(),
        ));
    }
    let total = total as f64;
    let mut out = ModelParams::zeros(&sizes);
    for (model, &count) in models.iter().zip(sample_counts) {
        let weight = count as f64 / total;
        axpy(&mut out.values, weight, &model.values);
    }
    Ok(out)
}

/// Fraction of test samples whose highest-probability class matches the
/// label; ties resolve to the lowest class id.
pub fn evaluate(model: &ModelParams, test: &Dataset) -> f64 {
    assert!(!test.is_empty(), "test set must be non-empty");
    const EVAL_BATCH: usize = 128;
    let passes = model.layer_sizes.len() - 1;
    let n_out = model.layer_sizes[passes];
    let mut ws = Workspace::new(&model.layer_sizes, EVAL_BATCH);
    let indices: Vec<usize> = (0..test.len()).collect();
    let mut hits = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let b = chunk.len();
        gather_rows(test, chunk, &mut ws.acts[0]);
        forward_pass(model, b, &mut ws);
        let scores = &ws.acts[passes];
        for (s, &i) in chunk.iter().enumerate() {
            let row = &scores[s * n_out..(s + 1) * n_out];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == test.label(i) {
                hits += 1;
            }
        }
    }
    hits as f64 / test.len() as f64
}

/// Mean cross-entropy of the model over the given sample indices.
pub fn dataset_loss(model: &ModelParams, dataset: &Dataset, indices: &[usize]) -> f64 {
    assert!(!indices.is_empty(), "loss needs at least one sample");
    const EVAL_BATCH: usize = 128;
    let passes = model.layer_sizes.len() - 1;
    let n_out = model.layer_sizes[passes];
    let mut ws = Workspace::new(&model.layer_sizes, EVAL_BATCH);
    let mut labels = vec![0usize; EVAL_BATCH];
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let b = chunk.len();
        gather_rows(dataset, chunk, &mut ws.acts[0]);
        for (s, &i) in chunk.iter().enumerate() {
            labels[s] = dataset.label(i);
        }
        forward_pass(model, b, &mut ws);
        loss_sum += softmax_loss(&mut ws.acts[passes], &labels[..b], b, n_out);
    }
    loss_sum / indices.len() as f64
}

/// Writes a checkpoint: magic, layer sizes, then raw little-endian values.
pub fn save_model(path: impl AsRef<Path>, model: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(io_err);
    write(CHECKPOINT_MAGIC)?;
    write(&(model.layer_sizes.len() as u32).to_le_bytes())?;
    for &s in &model.layer_sizes {
        write(&(s as u32).to_le_bytes())?;
    }
    for &v in &model.values {
        write(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let mut file =
        std::io::BufReader::new(std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?);
    let bad = |detail: &str| Error::BadCheckpoint {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| bad("missing magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic"));
    }
    let mut u32_buf = [0u8; 4];
    file.read_exact(&mut u32_buf)
        .map_err(|_| bad("missing layer count"))?;
    let n_layers = u32::from_le_bytes(u32_buf) as usize;
    if !(2..=64).contains(&n_layers) {
        return Err(bad("implausible layer count"));
    }
    let mut layer_sizes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        file.read_exact(&mut u32_buf)
            .map_err(|_| bad("missing layer size"))?;
        let size = u32::from_le_bytes(u32_buf) as usize;
        if size == 0 {
            return Err(bad("zero layer size"));
        }
        layer_sizes.push(size);
    }
    let count = param_count(&layer_sizes);
    let mut values = Vec::with_capacity(count);
    let mut f64_buf = [0u8; 8];
    for _ in 0..count {
        file.read_exact(&mut f64_buf)
            .map_err(|_| bad("value payload shorter than header promises"))?;
        values.push(f64::from_le_bytes(f64_buf));
    }
    if file.read(&mut [0u8; 1]).map_err(|_| bad("read error"))? != 0 {
        return Err(bad("trailing bytes after value payload"));
    }
    Ok(ModelParams {
        layer_sizes,
        values,
    })
}
