//! Multilayer perceptron classifier.
//!
//! Each hidden layer is `Dense -> ReLU -> BatchNorm`; the output layer is
//! `Dense -> softmax`. Batches are row-major (`samples x features`), so a
//! dense layer computes `Z = A W + b` with `W` shaped `fan_in x fan_out`.
//! Everything runs in `f64` and is deterministic for a given seed.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::EncodedMatrix;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "squared_error" => Ok(LossKind::SquaredError),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![128, 128],
            learning_rate: 0.0003,
            batch_size: 64,
            max_epochs: 300,
            early_stop_patience: 30,
            loss: LossKind::CrossEntropy,
            seed: 2022,
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || self.batch_size < 2 || self.max_epochs == 0 {
            return Err(Error::Config(
                "need learning_rate >= 0, batch_size >= 2, max_epochs >= 1".into(),
            ));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bad batch-norm settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub weights: Array2<f64>,
    /// `1 x n`
    pub bias: Array2<f64>,
    /// BN scale, `1 x n`
    pub gamma: Array2<f64>,
    /// BN shift, `1 x n`
    pub beta: Array2<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub weights: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub input_dim: usize,
    pub n_classes: usize,
    pub hidden: Vec<HiddenLayer>,
    pub output: OutputLayer,
    pub trace: TrainingTrace,
}

/// Glorot-uniform matrix, `±sqrt(6 / (fan_in + fan_out))`.
fn glorot(rng: &mut crate::rng::Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..=limit))
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(probs: ArrayView2<f64>) -> Vec<usize> {
    probs
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn one_hot_targets(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l]] = 1.0;
    }
    t
}

/// Mean over samples of the per-sample loss.
pub fn loss(pred: &Array2<f64>, target: &Array2<f64>, kind: LossKind) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let m = pred.nrows();
    if m == 0 {
        return Err(Error::Shape("loss over zero samples".into()));
    }
    let total: f64 = match kind {
        LossKind::SquaredError => Zip::from(pred)
            .and(target)
            .fold(0.0, |acc, &p, &y| acc + (y - p) * (y - p)),
        LossKind::CrossEntropy => Zip::from(pred).and(target).fold(0.0, |acc, &p, &y| {
            if y == 0.0 {
                acc
            } else {
                // f64::max would swallow a NaN probability
                let p = if p.is_nan() { p } else { p.max(1e-300) };
                acc - y * p.ln()
            }
        }),
    };
    Ok(total / m as f64)
}

struct HiddenCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

struct ForwardCache {
    hidden: Vec<HiddenCache>,
    last: Array2<f64>,
    probs: Array2<f64>,
}

/// Batch-norm transform in train mode: returns `(xhat, mean, biased var, 1/std)`.
pub fn batch_norm_train(x: &Array2<f64>, eps: f64) -> (Array2<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
    let m = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / m;
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / m;
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = centered * &inv_std;
    (xhat, mean, var, inv_std)
}

impl MlpModel {
    pub fn new(input_dim: usize, n_classes: usize, config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 || n_classes == 0 {
            return Err(Error::Shape("input width and class count must be positive".into()));
        }
        let mut rng = seeded(config.seed);
        let mut hidden = Vec::new();
        let mut fan_in = input_dim;
        for &n in &config.hidden_sizes {
            hidden.push(HiddenLayer {
                weights: glorot(&mut rng, fan_in, n),
                bias: Array2::zeros((1, n)),
                gamma: Array2::ones((1, n)),
                beta: Array2::zeros((1, n)),
                running_mean: Array1::zeros(n),
                running_var: Array1::ones(n),
            });
            fan_in = n;
        }
        let output = OutputLayer {
            weights: glorot(&mut rng, fan_in, n_classes),
            bias: Array2::zeros((1, n_classes)),
        };
        Ok(Self {
            config: config.clone(),
            input_dim,
            n_classes,
            hidden,
            output,
            trace: TrainingTrace::default(),
        })
    }

    /// Parameters in a fixed order: per hidden layer `W, b, gamma, beta`,
    /// then output `W, b`.
    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut p = Vec::new();
        for h in &self.hidden {
            p.extend([&h.weights, &h.bias, &h.gamma, &h.beta]);
        }
        p.extend([&self.output.weights, &self.output.bias]);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut p = Vec::new();
        for h in &mut self.hidden {
            p.extend([&mut h.weights, &mut h.bias, &mut h.gamma, &mut h.beta]);
        }
        p.extend([&mut self.output.weights, &mut self.output.bias]);
        p
    }

    fn check_width(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch width {} but model expects {}",
                batch.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn run(&self, batch: ArrayView2<f64>, mode: Mode) -> Result<ForwardCache> {
        self.check_width(&batch)?;
        if mode == Mode::Train && batch.nrows() < 2 {
            return Err(Error::Shape("train-mode batch needs at least 2 rows".into()));
        }
        let eps = self.config.bn_epsilon;
        let mut a = batch.to_owned();
        let mut caches = Vec::with_capacity(self.hidden.len());
        for h in &self.hidden {
            let pre = a.dot(&h.weights) + &h.bias;
            let act = pre.mapv(|v| v.max(0.0));
            let (xhat, mean, var, inv_std) = match mode {
                Mode::Train => batch_norm_train(&act, eps),
                Mode::Infer => {
                    let inv_std = h.running_var.mapv(|v| 1.0 / (v + eps).sqrt());
                    let xhat = (&act - &h.running_mean) * &inv_std;
                    (xhat, h.running_mean.clone(), h.running_var.clone(), inv_std)
                }
            };
            let out = &xhat * &h.gamma + &h.beta;
            caches.push(HiddenCache {
                input: a,
                pre,
                xhat,
                inv_std,
                mean,
                var,
            });
            a = out;
        }
        let logits = a.dot(&self.output.weights) + &self.output.bias;
        Ok(ForwardCache {
            hidden: caches,
            probs: softmax(&logits),
            last: a,
        })
    }

    /// Class probabilities for each row of `batch`.
    pub fn forward(&mut self, batch: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        let cache = self.run(batch, mode)?;
        if mode == Mode::Train {
            self.update_running_stats(&cache);
        }
        Ok(cache.probs)
    }

    /// Inference-mode probabilities.
    pub fn predict_proba(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.run(batch, Mode::Infer)?.probs)
    }

    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.predict_proba(batch)?.view()))
    }

    fn update_running_stats(&mut self, cache: &ForwardCache) {
        let mom = self.config.bn_momentum;
        for (h, c) in self.hidden.iter_mut().zip(&cache.hidden) {
            h.running_mean = &h.running_mean * mom + &c.mean * (1.0 - mom);
            h.running_var = &h.running_var * mom + &c.var * (1.0 - mom);
        }
    }

    /// Train-mode loss and its gradient for every parameter (same order as
    /// [`params`](Self::params)). Does not modify the model.
    pub fn loss_and_gradients(
        &self,
        batch: ArrayView2<f64>,
        targets: &Array2<f64>,
        kind: LossKind,
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        let (l, g, _) = self.backward(batch, targets, kind)?;
        Ok((l, g))
    }

    /// Train-mode loss only.
    pub fn train_loss(&self, batch: ArrayView2<f64>, targets: &Array2<f64>, kind: LossKind) -> Result<f64> {
        let cache = self.run(batch, Mode::Train)?;
        loss(&cache.probs, targets, kind)
    }

    fn backward(
        &self,
        batch: ArrayView2<f64>,
        targets: &Array2<f64>,
        kind: LossKind,
    ) -> Result<(f64, Vec<Array2<f64>>, ForwardCache)> {
        let cache = self.run(batch, Mode::Train)?;
        let p = &cache.probs;
        let value = loss(p, targets, kind)?;
        let m = p.nrows() as f64;

        let mut dz = match kind {
            LossKind::CrossEntropy => (p - targets) / m,
            LossKind::SquaredError => {
                // dL/dp = 2 (p - y) / m, then through the softmax Jacobian
                let g = (p - targets) * (2.0 / m);
                let dot = (&g * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                p * &(g - &dot)
            }
        };

        let mut grads_rev: Vec<Array2<f64>> = Vec::new();
        grads_rev.push(dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        grads_rev.push(cache.last.t().dot(&dz));
        let mut da = dz.dot(&self.output.weights.t());

        for (h, c) in self.hidden.iter().zip(&cache.hidden).rev() {
            let n = c.xhat.nrows() as f64;
            let dbeta = da.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dgamma = (&da * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            let dxhat = &da * &h.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let dact = (&dxhat * n - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &(&c.inv_std / n);
            dz = dact * &c.pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            grads_rev.push(dbeta);
            grads_rev.push(dgamma);
            grads_rev.push(dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
            grads_rev.push(c.input.t().dot(&dz));
            da = dz.dot(&h.weights.t());
        }
        grads_rev.reverse();
        Ok((value, grads_rev, cache))
    }

    /// One forward/backward pass on a mini-batch followed by an Adam update.
    /// Returns the batch loss.
    pub fn train_step(&mut self, batch: ArrayView2<f64>, targets: &Array2<f64>, adam: &mut Adam) -> Result<f64> {
        let (value, grads, cache) = self.backward(batch, targets, self.config.loss)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss (seed {})",
                self.config.seed
            )));
        }
        self.update_running_stats(&cache);
        adam.step(self.params_mut(), &grads)?;
        if self.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!(
                "parameters diverged to non-finite values (seed {})",
                self.config.seed
            )));
        }
        Ok(value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&SavedModel::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let saved: SavedModel = serde_json::from_str(s)?;
        saved.into_model()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(model: &MlpModel, learning_rate: f64) -> Self {
        let zeros: Vec<Array2<f64>> = model.params().iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match the model".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if p.dim() != g.dim() || m.dim() != g.dim() {
                return Err(Error::Shape("gradient shape mismatch".into()));
            }
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Records the loss of `epoch` (1-based). Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }
}

fn check_pair(train: &EncodedMatrix, val: &EncodedMatrix) -> Result<()> {
    if train.rows() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    if val.rows() == 0 {
        return Err(Error::Data("empty validation set".into()));
    }
    if train.width() != val.width() || train.class_names != val.class_names {
        return Err(Error::Shape(
            "training and validation matrices differ in width or classes".into(),
        ));
    }
    Ok(())
}

/// Trains with per-epoch shuffled mini-batches and early stopping on the
/// validation loss, restoring the best epoch's parameters at the end.
pub fn fit(config: &MlpConfig, train: &EncodedMatrix, val: &EncodedMatrix) -> Result<MlpModel> {
    check_pair(train, val)?;
    let val_targets = one_hot_targets(&val.labels, val.n_classes());
    let kind = config.loss;
    fit_with(config, train, |_, model| {
        let p = model.predict_proba(val.values.view())?;
        loss(&p, &val_targets, kind)
    })
}

/// [`fit`] with the per-epoch validation loss supplied by `val_loss`
/// (called with the 1-based epoch and the current model).
pub fn fit_with<F>(config: &MlpConfig, train: &EncodedMatrix, mut val_loss: F) -> Result<MlpModel>
where
    F: FnMut(usize, &MlpModel) -> Result<f64>,
{
    if train.rows() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let k = train.n_classes();
    let mut model = MlpModel::new(train.width(), k, config)?;
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut rng = seeded(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best = model.clone();
    let mut trace = TrainingTrace::default();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            // batch norm needs two rows
            if chunk.len() < 2 {
                continue;
            }
            let xb = train.values.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let yb = one_hot_targets(&labels, k);
            model.train_step(xb.view(), &yb, &mut adam)?;
        }
        let l = val_loss(epoch, &model)?;
        if !l.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite validation loss at epoch {epoch} (seed {})",
                config.seed
            )));
        }
        trace.val_losses.push(l);
        trace.epochs_run = epoch;
        let (improved, stop) = stopper.observe(epoch, l);
        if improved {
            best = model.clone();
        }
        if stop {
            break;
        }
    }
    trace.best_epoch = stopper.best_epoch;
    trace.best_val_loss = stopper.best_loss;
    best.trace = trace;
    Ok(best)
}

/// Fraction of rows whose predicted class matches the label.
pub fn accuracy(model: &MlpModel, m: &EncodedMatrix) -> Result<f64> {
    if m.rows() == 0 {
        return Err(Error::Data("accuracy over zero rows".into()));
    }
    let pred = model.predict(m.values.view())?;
    let correct = pred.iter().zip(&m.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / m.rows() as f64)
}

#[derive(Serialize, Deserialize)]
struct SavedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&Array2<f64>> for SavedMatrix {
    fn from(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }
}

impl SavedMatrix {
    fn into_array(self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data).map_err(|e| Error::Shape(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct SavedHidden {
    weights: SavedMatrix,
    bias: SavedMatrix,
    gamma: SavedMatrix,
    beta: SavedMatrix,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format: String,
    config: MlpConfig,
    input_dim: usize,
    n_classes: usize,
    hidden: Vec<SavedHidden>,
    output_weights: SavedMatrix,
    output_bias: SavedMatrix,
    trace: TrainingTrace,
}

const MODEL_FORMAT: &str = "igrf-mlp/1";

impl From<&MlpModel> for SavedModel {
    fn from(m: &MlpModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            config: m.config.clone(),
            input_dim: m.input_dim,
            n_classes: m.n_classes,
            hidden: m
                .hidden
                .iter()
                .map(|h| SavedHidden {
                    weights: (&h.weights).into(),
                    bias: (&h.bias).into(),
                    gamma: (&h.gamma).into(),
                    beta: (&h.beta).into(),
                    running_mean: h.running_mean.to_vec(),
                    running_var: h.running_var.to_vec(),
                })
                .collect(),
            output_weights: (&m.output.weights).into(),
            output_bias: (&m.output.bias).into(),
            trace: m.trace.clone(),
        }
    }
}

impl SavedModel {
    fn into_model(self) -> Result<MlpModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Data(format!("unsupported model format '{}'", self.format)));
        }
        let hidden = self
            .hidden
            .into_iter()
            .map(|h| {
                Ok(HiddenLayer {
                    weights: h.weights.into_array()?,
                    bias: h.bias.into_array()?,
                    gamma: h.gamma.into_array()?,
                    beta: h.beta.into_array()?,
                    running_mean: Array1::from(h.running_mean),
                    running_var: Array1::from(h.running_var),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = MlpModel {
            config: self.config,
            input_dim: self.input_dim,
            n_classes: self.n_classes,
            hidden,
            output: OutputLayer {
                weights: self.output_weights.into_array()?,
                bias: self.output_bias.into_array()?,
            },
            trace: self.trace,
        };
        let mut fan_in = model.input_dim;
        for h in &model.hidden {
            let n = h.weights.ncols();
            if h.weights.nrows() != fan_in
                || h.bias.dim() != (1, n)
                || h.gamma.dim() != (1, n)
                || h.beta.dim() != (1, n)
                || h.running_mean.len() != n
                || h.running_var.len() != n
            {
                return Err(Error::Shape("saved model layers do not chain".into()));
            }
            fan_in = n;
        }
        if model.output.weights.dim() != (fan_in, model.n_classes) || model.output.bias.dim() != (1, model.n_classes) {
            return Err(Error::Shape("saved output layer has the wrong shape".into()));
        }
        Ok(model)
    }
}

/// Central finite-difference check of [`MlpModel::loss_and_gradients`].
/// Returns the largest relative error `|a - n| / max(|a|, |n|, floor)` over
/// the visited parameter entries. `stride` > 1 visits every `stride`-th entry.
pub fn gradient_check(
    model: &MlpModel,
    batch: ArrayView2<f64>,
    targets: &Array2<f64>,
    kind: LossKind,
    h: f64,
    stride: usize,
) -> Result<f64> {
    let (_, analytic) = model.loss_and_gradients(batch, targets, kind)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut counter = 0usize;
    for (pi, grad) in analytic.iter().enumerate() {
        for idx in 0..grad.len() {
            counter += 1;
            if stride > 1 && !counter.is_multiple_of(stride) {
                continue;
            }
            let (r, c) = (idx / grad.ncols(), idx % grad.ncols());
            let original = probe.params()[pi][[r, c]];
            probe.params_mut()[pi][[r, c]] = original + h;
            let up = probe.train_loss(batch, targets, kind)?;
            probe.params_mut()[pi][[r, c]] = original - h;
            let down = probe.train_loss(batch, targets, kind)?;
            probe.params_mut()[pi][[r, c]] = original;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[[r, c]];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Below this magnitude gradients are compared in absolute terms; it sits
/// above the finite-difference round-off (`~1e-16 / h`).
pub const GRAD_CHECK_FLOOR: f64 = 1e-7;
