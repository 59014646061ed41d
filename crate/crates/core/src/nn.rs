//! Small deterministic MLP engine: dense, batch-norm and ReLU layers feeding
//! a growable linear softmax classifier, with hand-written backprop and SGD
//! with momentum.
//!
//! Activations are flat row-major `[batch, width]` buffers. Dense weights are
//! stored `[out, in]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{ParameterSet, Tensor};

/// Added to the variance before normalizing.
pub const BN_EPS: f64 = 1e-8;
/// Weight of the newest batch statistic in the running-stat update.
pub const BN_MOMENTUM: f64 = 0.1;

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Dense { input: usize, output: usize },
    BatchNorm { dim: usize },
    Relu,
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BN; running statistics are updated.
    Train,
    /// Running statistics in BN; nothing is mutated.
    Eval,
}

/// Running mean/variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Linear head `logits = W·features + b`, one row per global class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub class_ids: Vec<u32>,
    pub feature_dim: usize,
    /// `[num_classes, feature_dim]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Classifier {
    pub fn empty(feature_dim: usize) -> Self {
        Classifier {
            class_ids: Vec::new(),
            feature_dim,
            weight: Vec::new(),
            bias: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weight[r * self.feature_dim..(r + 1) * self.feature_dim]
    }

    pub fn position(&self, class: u32) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    pub fn weight_tensor(&self) -> Tensor {
        Tensor::new(vec![self.num_classes(), self.feature_dim], self.weight.clone())
            .expect("classifier weight is consistent")
    }

    pub fn bias_tensor(&self) -> Tensor {
        Tensor::vector(self.bias.clone())
    }

    /// Appends rows for `new_ids`, drawn uniformly from `(-s, s)` with
    /// `s = 1/sqrt(feature_dim)`. Existing rows are untouched.
    pub fn expand(&self, new_ids: &[u32], rng: &mut StreamRng) -> Result<Classifier> {
        for (i, id) in new_ids.iter().enumerate() {
            if self.class_ids.contains(id) || new_ids[..i].contains(id) {
                return Err(Error::invalid(format!(
                    "class {id} already present in classifier"
                )));
            }
        }
        let mut out = self.clone();
        let s = 1.0 / (self.feature_dim as f64).sqrt();
        for &id in new_ids {
            out.class_ids.push(id);
            for _ in 0..self.feature_dim {
                out.weight.push(rng.random_range(-s..s));
            }
        }
        for _ in new_ids {
            out.bias.push(rng.random_range(-s..s));
        }
        Ok(out)
    }
}

/// Feature extractor plus linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    /// Extractor parameters (dense weights/biases, BN scale/shift).
    pub params: ParameterSet,
    pub classifier: Classifier,
    pub bn: Vec<BnRunning>,
    pub bn_momentum: f64,
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub features: Tensor,
    pub logits: Tensor,
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.weight")
}
pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.bias")
}
pub fn gamma_name(layer: usize) -> String {
    format!("l{layer}.gamma")
}
pub fn beta_name(layer: usize) -> String {
    format!("l{layer}.beta")
}

struct LayerCache {
    input: Vec<f64>,
    // batch-norm only
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

struct Trace {
    caches: Vec<LayerCache>,
    features: Vec<f64>,
    logits: Vec<f64>,
    batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Model {
    /// Builds an MLP `input -> [Dense, BN, ReLU] x hidden.len()` with a
    /// classifier over `class_ids`.
    pub fn mlp(input_dim: usize, hidden: &[usize], class_ids: &[u32], rng: &mut StreamRng) -> Result<Model> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::Dense {
                input: prev,
                output: h,
            });
            layers.push(Layer::BatchNorm { dim: h });
            layers.push(Layer::Relu);
            prev = h;
        }
        Model::from_layers(layers, input_dim, class_ids, rng)
    }

    /// Seeded initialization for an arbitrary layer stack. Dense layers use
    /// `uniform(-1/sqrt(in), 1/sqrt(in))`; BN starts at identity.
    pub fn from_layers(layers: Vec<Layer>, input_dim: usize, class_ids: &[u32], rng: &mut StreamRng) -> Result<Model> {
        let mut params = ParameterSet::new();
        let mut bn = Vec::new();
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                Layer::Dense { input, output } => {
                    if input != width {
                        return Err(Error::Dimension {
                            layer: i,
                            kind: layer.kind(),
                            expected: input,
                            got: width,
                        });
                    }
                    let s = 1.0 / (input as f64).sqrt();
                    let w = (0..input * output).map(|_| rng.random_range(-s..s)).collect();
                    let b = (0..output).map(|_| rng.random_range(-s..s)).collect();
                    params.push(weight_name(i), Tensor::new(vec![output, input], w)?)?;
                    params.push(bias_name(i), Tensor::vector(b))?;
                    width = output;
                }
                Layer::BatchNorm { dim } => {
                    if dim != width {
                        return Err(Error::Dimension {
                            layer: i,
                            kind: layer.kind(),
                            expected: dim,
                            got: width,
                        });
                    }
                    params.push(gamma_name(i), Tensor::filled(&[dim], 1.0))?;
                    params.push(beta_name(i), Tensor::zeros(&[dim]))?;
                    bn.push(BnRunning {
                        layer: i,
                        mean: vec![0.0; dim],
                        var: vec![1.0; dim],
                    });
                }
                Layer::Relu => {}
            }
        }
        let classifier = Classifier::empty(width).expand(class_ids, rng)?;
        Ok(Model {
            layers,
            params,
            classifier,
            bn,
            bn_momentum: BN_MOMENTUM,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self.layers.first() {
            Some(Layer::Dense { input, .. }) => *input,
            Some(Layer::BatchNorm { dim }) => *dim,
            _ => self.classifier.feature_dim,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.feature_dim
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.classifier.class_ids
    }

    pub fn has_batch_norm(&self) -> bool {
        !self.bn.is_empty()
    }

    /// Extractor parameters followed by the classifier weight and bias.
    pub fn full_params(&self) -> ParameterSet {
        let mut p = self.params.clone();
        p.push(CLASSIFIER_WEIGHT, self.classifier.weight_tensor())
            .expect("classifier names are reserved");
        p.push(CLASSIFIER_BIAS, self.classifier.bias_tensor())
            .expect("classifier names are reserved");
        p
    }

    /// Inverse of [`Model::full_params`].
    pub fn load_full_params(&mut self, full: &ParameterSet) -> Result<()> {
        self.full_params().check_compatible(full)?;
        for (name, t) in self.params.iter_mut() {
            *t = full.require(name)?.clone();
        }
        self.classifier.weight = full.require(CLASSIFIER_WEIGHT)?.data().to_vec();
        self.classifier.bias = full.require(CLASSIFIER_BIAS)?.data().to_vec();
        Ok(())
    }

    /// Replaces the extractor parameters.
    pub fn load_extractor(&mut self, theta: &ParameterSet) -> Result<()> {
        self.params.check_compatible(theta)?;
        self.params = theta.clone();
        Ok(())
    }

    fn bn_index(&self, layer: usize) -> usize {
        self.bn
            .iter()
            .position(|b| b.layer == layer)
            .expect("every batch-norm layer has running stats")
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        if batch.shape().len() != 2 {
            return Err(Error::shape(format!(
                "batch must be 2-D, got shape {:?}",
                batch.shape()
            )));
        }
        let got = batch.cols();
        let expected = self.input_dim();
        if got != expected {
            let kind = self.layers.first().map_or("classifier", Layer::kind);
            return Err(Error::Dimension {
                layer: 0,
                kind,
                expected,
                got,
            });
        }
        Ok(batch.rows())
    }

    fn trace(&self, batch: &Tensor, mode: Mode) -> Result<Trace> {
        let n = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        let mut width = self.input_dim();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut cache = LayerCache {
                input: Vec::new(),
                xhat: Vec::new(),
                inv_std: Vec::new(),
            };
            let out = match *layer {
                Layer::Dense { input, output } => {
                    if input != width {
                        return Err(Error::Dimension {
                            layer: i,
                            kind: layer.kind(),
                            expected: input,
                            got: width,
                        });
                    }
                    let w = self.params.require(&weight_name(i))?.data();
                    let b = self.params.require(&bias_name(i))?.data();
                    let mut y = vec![0.0; n * output];
                    for r in 0..n {
                        let xr = &x[r * input..(r + 1) * input];
                        for o in 0..output {
                            let wo = &w[o * input..(o + 1) * input];
                            y[r * output + o] = dot(wo, xr) + b[o];
                        }
                    }
                    width = output;
                    y
                }
                Layer::BatchNorm { dim } => {
                    if dim != width {
                        return Err(Error::Dimension {
                            layer: i,
                            kind: layer.kind(),
                            expected: dim,
                            got: width,
                        });
                    }
                    let gamma = self.params.require(&gamma_name(i))?.data();
                    let beta = self.params.require(&beta_name(i))?.data();
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let stats = column_stats(&x, n, dim);
                            batch_stats.push(stats.clone());
                            stats
                        }
                        Mode::Eval => {
                            let rs = &self.bn[self.bn_index(i)];
                            (rs.mean.clone(), rs.var.clone())
                        }
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                    let mut xhat = vec![0.0; n * dim];
                    let mut y = vec![0.0; n * dim];
                    for r in 0..n {
                        for j in 0..dim {
                            let h = (x[r * dim + j] - mean[j]) * inv_std[j];
                            xhat[r * dim + j] = h;
                            y[r * dim + j] = gamma[j] * h + beta[j];
                        }
                    }
                    cache.xhat = xhat;
                    cache.inv_std = inv_std;
                    y
                }
                Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            };
            cache.input = std::mem::replace(&mut x, out);
            caches.push(cache);
        }
        let f = self.classifier.feature_dim;
        if width != f {
            return Err(Error::Dimension {
                layer: self.layers.len(),
                kind: "classifier",
                expected: f,
                got: width,
            });
        }
        let c = self.classifier.num_classes();
        let mut logits = vec![0.0; n * c];
        for r in 0..n {
            let fr = &x[r * f..(r + 1) * f];
            for k in 0..c {
                logits[r * c + k] = dot(self.classifier.row(k), fr) + self.classifier.bias[k];
            }
        }
        Ok(Trace {
            caches,
            features: x,
            logits,
            batch_stats,
        })
    }

    fn apply_batch_stats(&mut self, stats: Vec<(Vec<f64>, Vec<f64>)>) {
        let m = self.bn_momentum;
        for (running, (mean, var)) in self.bn.iter_mut().zip(stats) {
            for j in 0..mean.len() {
                running.mean[j] = (1.0 - m) * running.mean[j] + m * mean[j];
                running.var[j] = (1.0 - m) * running.var[j] + m * var[j];
            }
        }
    }

    /// Forward pass. In [`Mode::Train`] batch-norm layers normalize with
    /// batch statistics and fold them into the running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Forward> {
        let trace = self.trace(batch, mode)?;
        if mode == Mode::Train {
            self.apply_batch_stats(trace.batch_stats.clone());
        }
        Ok(self.finish(batch.rows(), trace))
    }

    /// Eval-mode forward; a pure function of the model and the batch.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Forward> {
        let trace = self.trace(batch, Mode::Eval)?;
        Ok(self.finish(batch.rows(), trace))
    }

    /// Penultimate (eval-mode) activations.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_eval(batch)?.features)
    }

    /// Eval-mode argmax predictions as global class ids.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<u32>> {
        let out = self.forward_eval(batch)?;
        let c = self.classifier.num_classes();
        if c == 0 {
            return Err(Error::invalid("classifier has no classes"));
        }
        Ok((0..batch.rows())
            .map(|r| {
                let row = &out.logits.data()[r * c..(r + 1) * c];
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (k, &v)| if v > row[best] { k } else { best });
                self.classifier.class_ids[best]
            })
            .collect())
    }

    fn finish(&self, n: usize, trace: Trace) -> Forward {
        let f = self.classifier.feature_dim;
        let c = self.classifier.num_classes();
        Forward {
            features: Tensor::new(vec![n, f], trace.features).expect("feature buffer"),
            logits: Tensor::new(vec![n, c], trace.logits).expect("logit buffer"),
        }
    }

    fn label_rows(&self, labels: &[u32]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| {
                self.classifier.position(l).ok_or_else(|| {
                    Error::domain(format!("label {l} is not among the classifier's classes"))
                })
            })
            .collect()
    }

    /// Mean softmax cross-entropy; never mutates the model.
    pub fn loss(&self, batch: &Tensor, labels: &[u32], mode: Mode) -> Result<f64> {
        let rows = self.label_rows(labels)?;
        check_labels_len(batch, labels)?;
        let trace = self.trace(batch, mode)?;
        let (loss, _) = softmax_xent(&trace.logits, &rows, self.classifier.num_classes());
        Ok(loss)
    }

    /// Gradients of the mean cross-entropy with respect to
    /// [`Model::full_params`], without touching running statistics.
    ///
    /// In [`Mode::Train`] the gradient flows through the batch statistics; in
    /// [`Mode::Eval`] batch-norm is the fixed affine map given by the running
    /// statistics.
    pub fn gradients(&self, batch: &Tensor, labels: &[u32], mode: Mode) -> Result<(ParameterSet, f64)> {
        let (grads, loss, _) = self.gradients_traced(batch, labels, mode)?;
        Ok((grads, loss))
    }

    /// Train-mode backward pass: returns gradients and loss and updates the
    /// running batch-norm statistics exactly as a train-mode forward would.
    pub fn backward(&mut self, batch: &Tensor, labels: &[u32]) -> Result<(ParameterSet, f64)> {
        let (grads, loss, stats) = self.gradients_traced(batch, labels, Mode::Train)?;
        self.apply_batch_stats(stats);
        Ok((grads, loss))
    }

    #[allow(clippy::type_complexity)]
    fn gradients_traced(
        &self,
        batch: &Tensor,
        labels: &[u32],
        mode: Mode,
    ) -> Result<(ParameterSet, f64, Vec<(Vec<f64>, Vec<f64>)>)> {
        check_labels_len(batch, labels)?;
        let rows = self.label_rows(labels)?;
        let n = batch.rows();
        let trace = self.trace(batch, mode)?;
        let c = self.classifier.num_classes();
        let f = self.classifier.feature_dim;
        let (loss, dlogits) = softmax_xent(&trace.logits, &rows, c);

        let mut dw_cls = vec![0.0; c * f];
        let mut db_cls = vec![0.0; c];
        let mut dx = vec![0.0; n * f];
        for r in 0..n {
            let fr = &trace.features[r * f..(r + 1) * f];
            for k in 0..c {
                let g = dlogits[r * c + k];
                if g == 0.0 {
                    continue;
                }
                db_cls[k] += g;
                let wk = self.classifier.row(k);
                for j in 0..f {
                    dw_cls[k * f + j] += g * fr[j];
                    dx[r * f + j] += g * wk[j];
                }
            }
        }

        let mut grads = self.params.zeros_like();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = &trace.caches[i];
            dx = match *layer {
                Layer::Dense { input, output } => {
                    let w = self.params.require(&weight_name(i))?.data();
                    let mut dw = vec![0.0; output * input];
                    let mut db = vec![0.0; output];
                    let mut din = vec![0.0; n * input];
                    for r in 0..n {
                        let xr = &cache.input[r * input..(r + 1) * input];
                        for o in 0..output {
                            let g = dx[r * output + o];
                            db[o] += g;
                            let wo = &w[o * input..(o + 1) * input];
                            for q in 0..input {
                                dw[o * input + q] += g * xr[q];
                                din[r * input + q] += g * wo[q];
                            }
                        }
                    }
                    grads.set(&weight_name(i), Tensor::new(vec![output, input], dw)?)?;
                    grads.set(&bias_name(i), Tensor::vector(db))?;
                    din
                }
                Layer::BatchNorm { dim } => {
                    let gamma = self.params.require(&gamma_name(i))?.data();
                    let mut dgamma = vec![0.0; dim];
                    let mut dbeta = vec![0.0; dim];
                    for r in 0..n {
                        for j in 0..dim {
                            let g = dx[r * dim + j];
                            dgamma[j] += g * cache.xhat[r * dim + j];
                            dbeta[j] += g;
                        }
                    }
                    let mut din = vec![0.0; n * dim];
                    match mode {
                        Mode::Train => {
                            // dx = inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                            let nf = n as f64;
                            for j in 0..dim {
                                let mut s = 0.0;
                                let mut sx = 0.0;
                                for r in 0..n {
                                    let dh = dx[r * dim + j] * gamma[j];
                                    s += dh;
                                    sx += dh * cache.xhat[r * dim + j];
                                }
                                for r in 0..n {
                                    let dh = dx[r * dim + j] * gamma[j];
                                    din[r * dim + j] = cache.inv_std[j] / nf
                                        * (nf * dh - s - cache.xhat[r * dim + j] * sx);
                                }
                            }
                        }
                        Mode::Eval => {
                            for r in 0..n {
                                for j in 0..dim {
                                    din[r * dim + j] = dx[r * dim + j] * gamma[j] * cache.inv_std[j];
                                }
                            }
                        }
                    }
                    grads.set(&gamma_name(i), Tensor::vector(dgamma))?;
                    grads.set(&beta_name(i), Tensor::vector(dbeta))?;
                    din
                }
                Layer::Relu => dx
                    .iter()
                    .zip(&cache.input)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            };
        }
        grads.push(CLASSIFIER_WEIGHT, Tensor::new(vec![c, f], dw_cls)?)?;
        grads.push(CLASSIFIER_BIAS, Tensor::vector(db_cls))?;
        Ok((grads, loss, trace.batch_stats))
    }

    /// Copy of the model with classifier rows appended for `new_class_ids`.
    pub fn expand_classifier(&self, new_class_ids: &[u32], rng: &mut StreamRng) -> Result<Model> {
        let mut out = self.clone();
        out.classifier = self.classifier.expand(new_class_ids, rng)?;
        Ok(out)
    }

    /// Resets every running mean to 0 and variance to 1.
    pub fn reset_bn_stats(&mut self) {
        for b in &mut self.bn {
            b.mean.iter_mut().for_each(|v| *v = 0.0);
            b.var.iter_mut().for_each(|v| *v = 1.0);
        }
    }
}

fn check_labels_len(batch: &Tensor, labels: &[u32]) -> Result<()> {
    if batch.rows() != labels.len() {
        return Err(Error::shape(format!(
            "batch has {} rows but {} labels",
            batch.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-column mean and biased variance of a `[n, dim]` buffer.
fn column_stats(x: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    for r in 0..n {
        for j in 0..dim {
            mean[j] += x[r * dim + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in 0..n {
        for j in 0..dim {
            let d = x[r * dim + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var)
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn softmax_xent(logits: &[f64], rows: &[usize], c: usize) -> (f64, Vec<f64>) {
    let n = rows.len();
    let mut grad = vec![0.0; n * c];
    let mut loss = 0.0;
    for (r, &target) in rows.iter().enumerate() {
        let z = &logits[r * c..(r + 1) * c];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - z[target];
        for k in 0..c {
            let p = (z[k] - log_sum).exp();
            grad[r * c + k] = (p - if k == target { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// Momentum buffers for [`sgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub buffers: ParameterSet,
}

impl MomentumState {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        MomentumState {
            buffers: params.zeros_like(),
        }
    }
}

/// `v <- momentum*v + g; p <- p - lr*v`.
pub fn sgd_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut MomentumState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
    }
    params.check_compatible(grads)?;
    params.check_compatible(&state.buffers)?;
    for (((_, p), (_, g)), (_, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.buffers.iter_mut())
    {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}
