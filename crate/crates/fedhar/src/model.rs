//! The 196-16C_4M_1024D network: 196 filters of a 16-wide 1-D convolution
//! over the sensor window, 4-wide max pooling, a 1024-unit dense layer with
//! inverted dropout, and a softmax readout over the six activities.
//! Backpropagation is written out by hand; training is plain mini-batch SGD.

use thiserror::Error;

use crate::dataset::{Activity, Dataset, NUM_CLASSES};
use crate::rng::Rng;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Layer sizes. Everything except the filter and hidden counts is fixed by
/// the window geometry, so reduced variants (used by the gradient checks)
/// only scale those two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub filters: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub pool: usize,
    pub input_len: usize,
    pub channels: usize,
    pub classes: usize,
}

impl Arch {
    pub const PAPER: Arch = Arch {
        filters: 196,
        hidden: 1024,
        kernel: 16,
        pool: 4,
        input_len: 128,
        channels: 6,
        classes: 6,
    };

    pub fn reduced(filters: usize, hidden: usize) -> Arch {
        Arch {
            filters,
            hidden,
            ..Arch::PAPER
        }
    }

    /// Valid-padding convolution output length: 128 - 16 + 1 = 113.
    pub fn conv_len(&self) -> usize {
        self.input_len - self.kernel + 1
    }

    /// Pooled length: floor(113 / 4) = 28.
    pub fn pool_len(&self) -> usize {
        self.conv_len() / self.pool
    }

    /// Flattened feature size: 196 * 28 = 5488.
    pub fn flat_dim(&self) -> usize {
        self.filters * self.pool_len()
    }

    pub fn patch_dim(&self) -> usize {
        self.kernel * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub conv_w: Tensor, // [filters, kernel, channels]
    pub conv_b: Tensor, // [filters]
    pub fc1_w: Tensor,  // [hidden, flat_dim]
    pub fc1_b: Tensor,  // [hidden]
    pub out_w: Tensor,  // [classes, hidden]
    pub out_b: Tensor,  // [classes]
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv_w: Tensor,
    pub conv_b: Tensor,
    pub fc1_w: Tensor,
    pub fc1_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl ModelParams {
    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.out_w,
            &self.out_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// `p <- p - lr * g`. With `lr == 0` the parameters are untouched.
    pub fn sgd_step(&mut self, g: &Gradients, lr: f64) {
        for (p, gt) in self.tensors_mut().into_iter().zip(g.tensors()) {
            p.scaled_add_assign(-lr, gt);
        }
    }
}

impl Gradients {
    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.out_w,
            &self.out_b,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HyperParams {
    #[serde(rename = "lr")]
    pub learning_rate: f64,
    #[serde(rename = "batch")]
    pub batch_size: usize,
    #[serde(rename = "dropout")]
    pub dropout_rate: f64,
    pub epochs: usize,
}

impl HyperParams {
    /// The settings of the federated experiments.
    pub fn paper() -> HyperParams {
        HyperParams {
            learning_rate: 0.01,
            batch_size: 32,
            dropout_rate: 0.5,
            epochs: 10,
        }
    }

    fn validate(&self) {
        assert!(self.learning_rate > 0.0, "learning rate must be positive");
        assert!(self.batch_size >= 1, "batch size must be at least 1");
        assert!(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout rate must lie in [0, 1)"
        );
    }
}

/// Dropout behaviour of a forward pass. `Off` is evaluation mode (identity);
/// `Sample` draws a fresh inverted-dropout mask; `Mask` replays a fixed
/// scaled mask, which is what gradient checks differentiate through.
pub enum DropoutMode<'a> {
    Off,
    Sample { rate: f64, rng: &'a mut Rng },
    Mask(&'a [f64]),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Activations retained by a forward pass for backpropagation and feature
/// extraction.
pub struct ForwardCache {
    batch: usize,
    xcol: Vec<f64>,     // [batch*conv_len, patch_dim] input patches
    conv_act: Vec<f64>, // [batch*conv_len, filters] post-ReLU
    pool_arg: Vec<u8>,  // [batch*pool_len*filters] argmax offset in window
    flat: Vec<f64>,     // [batch, flat_dim]
    fc1_pre: Vec<f64>,  // [batch, hidden] pre-ReLU
    hdrop: Vec<f64>,    // [batch, hidden] post ReLU and dropout
    mask: Option<Vec<f64>>,
}

impl ForwardCache {
    /// Dense-layer pre-activation rows, the features the projections use.
    pub fn penultimate(&self) -> &[f64] {
        &self.fc1_pre
    }
}

/// He-initialized weights (zero-mean Gaussian, std `sqrt(2 / fan_in)`) and
/// zero biases.
pub fn init_params(arch: Arch, rng: &mut Rng) -> ModelParams {
    let fill = |shape: Vec<usize>, fan_in: usize, rng: &mut Rng| {
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| std * rng.next_normal()).collect();
        Tensor::new(shape, values)
    };
    let conv_w = fill(
        vec![arch.filters, arch.kernel, arch.channels],
        arch.patch_dim(),
        rng,
    );
    let fc1_w = fill(vec![arch.hidden, arch.flat_dim()], arch.flat_dim(), rng);
    let out_w = fill(vec![arch.classes, arch.hidden], arch.hidden, rng);
    ModelParams {
        arch,
        conv_w,
        conv_b: Tensor::zeros(vec![arch.filters]),
        fc1_w,
        fc1_b: Tensor::zeros(vec![arch.hidden]),
        out_w,
        out_b: Tensor::zeros(vec![arch.classes]),
    }
}

/// Run the network on a `[batch, input_len, channels]` tensor.
pub fn forward(
    p: &ModelParams,
    batch: &Tensor,
    dropout: DropoutMode,
) -> Result<(Tensor, ForwardCache), ModelError> {
    let arch = p.arch;
    let shape = batch.shape();
    if shape.len() != 3 || shape[1] != arch.input_len || shape[2] != arch.channels {
        return Err(ModelError::ShapeMismatch(format!(
            "batch shape {:?}, expected [*, {}, {}]",
            shape, arch.input_len, arch.channels
        )));
    }
    let b = shape[0];
    let (cl, pl, fd, patch) = (
        arch.conv_len(),
        arch.pool_len(),
        arch.flat_dim(),
        arch.patch_dim(),
    );

    // im2col: row (b, t) holds the kernel-wide patch starting at t. Patches
    // are contiguous in the input because channels are the innermost axis.
    let mut xcol = vec![0.0; b * cl * patch];
    let input = batch.values();
    let row_w = arch.input_len * arch.channels;
    for bi in 0..b {
        let w = &input[bi * row_w..(bi + 1) * row_w];
        for t in 0..cl {
            let src = &w[t * arch.channels..t * arch.channels + patch];
            xcol[(bi * cl + t) * patch..(bi * cl + t + 1) * patch].copy_from_slice(src);
        }
    }

    // Convolution + bias + ReLU.
    let mut conv_act = matmul_nt(&xcol, p.conv_w.values(), b * cl, patch, arch.filters);
    let conv_b = p.conv_b.values();
    for row in conv_act.chunks_exact_mut(arch.filters) {
        for (v, bias) in row.iter_mut().zip(conv_b) {
            *v = (*v + bias).max(0.0);
        }
    }

    // Max pooling, first occurrence wins ties.
    let mut flat = vec![0.0; b * fd];
    let mut pool_arg = vec![0u8; b * pl * arch.filters];
    for bi in 0..b {
        for tp in 0..pl {
            let base_row = bi * cl + tp * arch.pool;
            for f in 0..arch.filters {
                let mut best = conv_act[base_row * arch.filters + f];
                let mut arg = 0u8;
                for d in 1..arch.pool {
                    let v = conv_act[(base_row + d) * arch.filters + f];
                    if v > best {
                        best = v;
                        arg = d as u8;
                    }
                }
                flat[bi * fd + tp * arch.filters + f] = best;
                pool_arg[(bi * pl + tp) * arch.filters + f] = arg;
            }
        }
    }

    // Dense hidden layer.
    let mut fc1_pre = matmul_nt(&flat, p.fc1_w.values(), b, fd, arch.hidden);
    let fc1_b = p.fc1_b.values();
    for row in fc1_pre.chunks_exact_mut(arch.hidden) {
        for (v, bias) in row.iter_mut().zip(fc1_b) {
            *v += bias;
        }
    }

    // ReLU then inverted dropout.
    let mut hdrop: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();
    let mask = match dropout {
        DropoutMode::Off => None,
        DropoutMode::Sample { rate, rng } => {
            let scale = 1.0 / (1.0 - rate);
            let m: Vec<f64> = (0..hdrop.len())
                .map(|_| if rng.next_f64() < rate { 0.0 } else { scale })
                .collect();
            for (h, &mv) in hdrop.iter_mut().zip(&m) {
                *h *= mv;
            }
            Some(m)
        }
        DropoutMode::Mask(m) => {
            assert_eq!(m.len(), hdrop.len(), "dropout mask length mismatch");
            for (h, &mv) in hdrop.iter_mut().zip(m) {
                *h *= mv;
            }
            Some(m.to_vec())
        }
    };

    // Readout.
    let mut logits = matmul_nt(&hdrop, p.out_w.values(), b, arch.hidden, arch.classes);
    let out_b = p.out_b.values();
    for row in logits.chunks_exact_mut(arch.classes) {
        for (v, bias) in row.iter_mut().zip(out_b) {
            *v += bias;
        }
    }

    Ok((
        Tensor::new(vec![b, arch.classes], logits),
        ForwardCache {
            batch: b,
            xcol,
            conv_act,
            pool_arg,
            flat,
            fc1_pre,
            hdrop,
            mask,
        },
    ))
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let shape = logits.shape().to_vec();
    let classes = *shape.last().expect("softmax needs at least 1-D");
    let mut values = logits.values().to_vec();
    for row in values.chunks_exact_mut(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(shape, values)
}

/// Mean cross-entropy of a logits tensor against class labels, with the
/// loss gradient wrt the logits.
fn xent_and_dlogits(logits: &Tensor, labels: &[usize]) -> (f64, Vec<f64>) {
    let b = logits.shape()[0];
    let classes = logits.shape()[1];
    assert_eq!(labels.len(), b, "labels/batch mismatch");
    let mut dlogits = vec![0.0; b * classes];
    let mut loss = 0.0;
    for (i, row) in logits.values().chunks_exact(classes).enumerate() {
        let label = labels[i];
        assert!(label < classes, "label {label} out of range");
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += sum.ln() + max - row[label];
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for (c, v) in row.iter().enumerate() {
            drow[c] = (v - max).exp() / sum / b as f64;
        }
        drow[label] -= 1.0 / b as f64;
    }
    (loss / b as f64, dlogits)
}

/// Mean cross-entropy loss and its exact gradient at `p`. A sampled dropout
/// mask is part of the function being differentiated (it is held fixed).
pub fn loss_and_grad(
    p: &ModelParams,
    batch: &Tensor,
    labels: &[usize],
    dropout: DropoutMode,
) -> Result<(f64, Gradients), ModelError> {
    if batch.shape()[0] == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let (logits, cache) = forward(p, batch, dropout)?;
    let (loss, dlogits) = xent_and_dlogits(&logits, labels);
    let grads = backward(p, &cache, &dlogits);
    Ok((loss, grads))
}

fn backward(p: &ModelParams, cache: &ForwardCache, dlogits: &[f64]) -> Gradients {
    let arch = p.arch;
    let b = cache.batch;
    let (cl, pl, fd) = (arch.conv_len(), arch.pool_len(), arch.flat_dim());

    // Readout layer.
    let d_out_w = matmul_tn(dlogits, &cache.hdrop, b, arch.classes, arch.hidden);
    let d_out_b = column_sums(dlogits, arch.classes);
    let mut d_h = matmul_nn(dlogits, p.out_w.values(), b, arch.classes, arch.hidden);

    // Dropout replays the scaled mask; ReLU gates on the pre-activation.
    if let Some(mask) = &cache.mask {
        for (d, &m) in d_h.iter_mut().zip(mask) {
            *d *= m;
        }
    }
    for (d, &pre) in d_h.iter_mut().zip(&cache.fc1_pre) {
        if pre <= 0.0 {
            *d = 0.0;
        }
    }

    // Hidden dense layer.
    let d_fc1_w = matmul_tn(&d_h, &cache.flat, b, arch.hidden, fd);
    let d_fc1_b = column_sums(&d_h, arch.hidden);
    let d_flat = matmul_nn(&d_h, p.fc1_w.values(), b, arch.hidden, fd);

    // Unpool: route each pooled gradient to the cached argmax row.
    let mut d_conv = vec![0.0; b * cl * arch.filters];
    for bi in 0..b {
        for tp in 0..pl {
            let base_row = bi * cl + tp * arch.pool;
            for f in 0..arch.filters {
                let arg = cache.pool_arg[(bi * pl + tp) * arch.filters + f] as usize;
                d_conv[(base_row + arg) * arch.filters + f] +=
                    d_flat[bi * fd + tp * arch.filters + f];
            }
        }
    }
    // Conv ReLU gate (post-activation is zero exactly where pre <= 0).
    for (d, &act) in d_conv.iter_mut().zip(&cache.conv_act) {
        if act <= 0.0 {
            *d = 0.0;
        }
    }

    let d_conv_w = matmul_tn(&d_conv, &cache.xcol, b * cl, arch.filters, arch.patch_dim());
    let d_conv_b = column_sums(&d_conv, arch.filters);

    Gradients {
        conv_w: Tensor::new(vec![arch.filters, arch.kernel, arch.channels], d_conv_w),
        conv_b: Tensor::new(vec![arch.filters], d_conv_b),
        fc1_w: Tensor::new(vec![arch.hidden, fd], d_fc1_w),
        fc1_b: Tensor::new(vec![arch.hidden], d_fc1_b),
        out_w: Tensor::new(vec![arch.classes, arch.hidden], d_out_w),
        out_b: Tensor::new(vec![arch.classes], d_out_b),
    }
}

fn column_sums(rows: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for row in rows.chunks_exact(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Gather dataset windows into a `[n, input_len, channels]` batch tensor plus
/// class-id labels.
pub fn assemble_batch(data: &Dataset, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let windows = data.windows();
    let row = windows
        .first()
        .map(|w| w.signal.len())
        .unwrap_or(crate::dataset::WINDOW_LEN * crate::dataset::NUM_CHANNELS);
    let mut values = Vec::with_capacity(indices.len() * row);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        values.extend_from_slice(windows[i].signal.values());
        labels.push(windows[i].label.id());
    }
    (
        Tensor::new(
            vec![
                indices.len(),
                crate::dataset::WINDOW_LEN,
                crate::dataset::NUM_CHANNELS,
            ],
            values,
        ),
        labels,
    )
}

/// SGD training: per epoch, shuffle the dataset and take one step per batch.
/// Dropout masks come from `rng.derive(1)` and epoch shuffles from
/// `rng.derive(2)`, so a caller that samples data with `rng.derive(0)` keeps
/// all three streams independent.
pub fn train(
    p: ModelParams,
    data: &Dataset,
    hp: &HyperParams,
    rng: &Rng,
) -> Result<ModelParams, ModelError> {
    train_traced(p, data, hp, rng).map(|(p, _)| p)
}

/// Like [`train`], also returning the mean training loss of each epoch.
pub fn train_traced(
    mut p: ModelParams,
    data: &Dataset,
    hp: &HyperParams,
    rng: &Rng,
) -> Result<(ModelParams, Vec<f64>), ModelError> {
    hp.validate();
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut drop_rng = rng.derive(1);
    let mut shuffle_rng = rng.derive(2);
    let n = data.len();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);
    for _ in 0..hp.epochs {
        let perm = shuffle_rng.shuffle(n);
        let mut total = 0.0;
        for chunk in perm.chunks(hp.batch_size) {
            let (batch, labels) = assemble_batch(data, chunk);
            let (loss, grads) = loss_and_grad(
                &p,
                &batch,
                &labels,
                DropoutMode::Sample {
                    rate: hp.dropout_rate,
                    rng: &mut drop_rng,
                },
            )?;
            p.sgd_step(&grads, hp.learning_rate);
            total += loss * chunk.len() as f64;
        }
        assert!(p.all_finite(), "training diverged to non-finite parameters");
        epoch_losses.push(total / n as f64);
    }
    Ok((p, epoch_losses))
}

/// Accuracy of argmax classification. Classes absent from the data report
/// NaN.
#[derive(Debug, Clone, Copy)]
pub struct EvalReport {
    pub overall: f64,
    pub per_class: [f64; NUM_CLASSES],
}

const EVAL_CHUNK: usize = 128;

pub fn evaluate(p: &ModelParams, data: &Dataset) -> Result<EvalReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    assert_eq!(p.arch.classes, NUM_CLASSES);
    let mut correct = [0usize; NUM_CLASSES];
    let mut count = [0usize; NUM_CLASSES];
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, labels) = assemble_batch(data, chunk);
        let (logits, _) = forward(p, &batch, DropoutMode::Off)?;
        for (row, &label) in logits.values().chunks_exact(NUM_CLASSES).zip(&labels) {
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            count[label] += 1;
            if pred == label {
                correct[label] += 1;
            }
        }
    }
    let mut per_class = [f64::NAN; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        if count[c] > 0 {
            per_class[c] = correct[c] as f64 / count[c] as f64;
        }
    }
    let overall = correct.iter().sum::<usize>() as f64 / data.len() as f64;
    Ok(EvalReport { overall, per_class })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureLayer {
    /// Dense-layer pre-activation, 1024-dimensional.
    Penultimate,
    /// Pre-softmax logits, 6-dimensional.
    Logits,
}

/// Evaluation-mode activations at the chosen layer, one row per window.
pub fn extract_features(
    p: &ModelParams,
    data: &Dataset,
    layer: FeatureLayer,
) -> Result<Tensor, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let width = match layer {
        FeatureLayer::Penultimate => p.arch.hidden,
        FeatureLayer::Logits => p.arch.classes,
    };
    let mut values = Vec::with_capacity(data.len() * width);
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (batch, _) = assemble_batch(data, chunk);
        let (logits, cache) = forward(p, &batch, DropoutMode::Off)?;
        match layer {
            FeatureLayer::Penultimate => values.extend_from_slice(cache.penultimate()),
            FeatureLayer::Logits => values.extend_from_slice(logits.values()),
        }
    }
    Ok(Tensor::new(vec![data.len(), width], values))
}

/// Labels of a dataset as class ids, aligned with [`extract_features`] rows.
pub fn dataset_labels(data: &Dataset) -> Vec<Activity> {
    data.windows().iter().map(|w| w.label).collect()
}
