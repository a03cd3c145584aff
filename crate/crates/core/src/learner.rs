//! Probabilistic classifiers and the loss machinery they train under.
//!
//! Two built-in architectures share one code path: softmax regression
//! (`hidden_units = 0`) and a one-hidden-layer rectified MLP. Binary filters
//! are 2-output softmax classifiers whose positive probability is entry 1,
//! so filter, teacher, and student training all flow through
//! [`train_classifier`].
//!
//! Loss components: cross-entropy against soft or one-hot targets, an
//! entropy regularizer over batch predictions, a distillation loss blending
//! given-label and teacher targets, and mixup applied per batch. Natural
//! logarithms throughout; probabilities are clamped to `[1e-12, 1]` inside
//! every log, with exact zeros contributing zero (`0·log 0 := 0`).

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Smallest probability admitted into a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the sum of a probability vector.
const SIMPLEX_TOL: f64 = 1e-9;

const MODEL_MAGIC: [u8; 8] = *b"CSETMDL\0";
const MODEL_VERSION: u8 = 1;

/// A point on the probability simplex: non-negative entries summing to 1
/// within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    entries: Vec<f64>,
}

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for &e in &entries {
            if !e.is_finite() || e < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "probability entry {e} outside [0, 1]"
                )));
            }
            sum += e;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "probability vector sums to {sum}, expected 1"
            )));
        }
        Ok(ProbVector { entries })
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Self {
        assert!(class < num_classes, "one_hot class out of range");
        let mut entries = vec![0.0; num_classes];
        entries[class] = 1.0;
        ProbVector { entries }
    }

    pub fn uniform(num_classes: usize) -> Self {
        assert!(num_classes > 0, "uniform over zero classes");
        ProbVector {
            entries: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Index of the largest entry; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &e) in self.entries.iter().enumerate().skip(1) {
            if e > self.entries[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_entry(&self) -> f64 {
        self.entries[self.argmax()]
    }

    /// `weight·self + (1−weight)·other`, a valid point on the simplex for
    /// `weight ∈ [0, 1]`.
    pub fn blend(&self, other: &ProbVector, weight: f64) -> Result<ProbVector> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| weight * a + (1.0 - weight) * b)
            .collect();
        Ok(ProbVector { entries })
    }
}

/// One-hot targets for a slice of integer labels.
pub fn one_hot_targets(labels: &[usize], num_classes: usize) -> Vec<ProbVector> {
    labels
        .iter()
        .map(|&c| ProbVector::one_hot(c, num_classes))
        .collect()
}

/// Divide the learning rate by `divisor` from `epoch` (0-based) onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrStep {
    pub epoch: usize,
    pub divisor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub steps: Vec<LrStep>,
}

impl LrSchedule {
    pub fn constant(initial: f64) -> Self {
        LrSchedule {
            initial,
            steps: Vec::new(),
        }
    }

    pub fn with_steps(initial: f64, steps: &[(usize, f64)]) -> Self {
        LrSchedule {
            initial,
            steps: steps
                .iter()
                .map(|&(epoch, divisor)| LrStep { epoch, divisor })
                .collect(),
        }
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        let mut rate = self.initial;
        for step in &self.steps {
            if step.epoch <= epoch {
                rate /= step.divisor;
            }
        }
        rate
    }

    fn validate(&self) -> Result<()> {
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(Error::invalid_param(
                "lr_schedule.initial",
                "learning rate must be positive",
            ));
        }
        for step in &self.steps {
            if !(step.divisor.is_finite() && step.divisor > 0.0) {
                return Err(Error::invalid_param(
                    "lr_schedule.steps",
                    "divisors must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// Optimizer and regularization settings for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Beta(μ, μ) mixup coefficient; 0 disables mixup.
    pub mixup_mu: f64,
    pub entropy_weight: f64,
    /// 0 selects softmax regression, otherwise a one-hidden-layer MLP.
    pub hidden_units: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid_param("epochs", "must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid_param("batch_size", "must be at least 1"));
        }
        self.lr_schedule.validate()?;
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::invalid_param("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid_param("weight_decay", "must be non-negative"));
        }
        if !(self.mixup_mu.is_finite() && self.mixup_mu >= 0.0) {
            return Err(Error::invalid_param("mixup_mu", "must be non-negative"));
        }
        if !(self.entropy_weight.is_finite() && self.entropy_weight >= 0.0) {
            return Err(Error::invalid_param(
                "entropy_weight",
                "must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Weights {
    Linear {
        w: Array2<f64>,
        b: Array1<f64>,
    },
    Mlp {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    },
}

impl Weights {
    fn zeros_like(&self) -> Weights {
        match self {
            Weights::Linear { w, b } => Weights::Linear {
                w: Array2::zeros(w.raw_dim()),
                b: Array1::zeros(b.raw_dim()),
            },
            Weights::Mlp { w1, b1, w2, b2 } => Weights::Mlp {
                w1: Array2::zeros(w1.raw_dim()),
                b1: Array1::zeros(b1.raw_dim()),
                w2: Array2::zeros(w2.raw_dim()),
                b2: Array1::zeros(b2.raw_dim()),
            },
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Weights::Linear { w, b } => vec![
                w.as_slice_mut().expect("contiguous"),
                b.as_slice_mut().expect("contiguous"),
            ],
            Weights::Mlp { w1, b1, w2, b2 } => vec![
                w1.as_slice_mut().expect("contiguous"),
                b1.as_slice_mut().expect("contiguous"),
                w2.as_slice_mut().expect("contiguous"),
                b2.as_slice_mut().expect("contiguous"),
            ],
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Weights::Linear { w, b } => vec![
                w.as_slice().expect("contiguous"),
                b.as_slice().expect("contiguous"),
            ],
            Weights::Mlp { w1, b1, w2, b2 } => vec![
                w1.as_slice().expect("contiguous"),
                b1.as_slice().expect("contiguous"),
                w2.as_slice().expect("contiguous"),
                b2.as_slice().expect("contiguous"),
            ],
        }
    }
}

/// A trained probabilistic classifier. Immutable after training; safe to
/// share across threads for prediction.
#[derive(Debug, Clone)]
pub struct Classifier {
    weights: Weights,
    input_dim: usize,
    num_classes: usize,
    hidden_units: usize,
}

impl Classifier {
    fn init(input_dim: usize, num_classes: usize, hidden_units: usize, rng: &mut Rng) -> Self {
        // Uniform in ±1/√fan_in per layer, biases zero.
        let uniform = |rows: usize, cols: usize, fan_in: usize, rng: &mut Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| (2.0 * rng.next_f64() - 1.0) * bound)
        };
        let weights = if hidden_units == 0 {
            Weights::Linear {
                w: uniform(input_dim, num_classes, input_dim, rng),
                b: Array1::zeros(num_classes),
            }
        } else {
            Weights::Mlp {
                w1: uniform(input_dim, hidden_units, input_dim, rng),
                b1: Array1::zeros(hidden_units),
                w2: uniform(hidden_units, num_classes, hidden_units, rng),
                b2: Array1::zeros(num_classes),
            }
        };
        Classifier {
            weights,
            input_dim,
            num_classes,
            hidden_units,
        }
    }

    /// All-zero weights; softmax output is exactly uniform. Mainly useful
    /// as a neutral starting point in tests.
    pub fn zeroed(input_dim: usize, num_classes: usize, hidden_units: usize) -> Self {
        let weights = if hidden_units == 0 {
            Weights::Linear {
                w: Array2::zeros((input_dim, num_classes)),
                b: Array1::zeros(num_classes),
            }
        } else {
            Weights::Mlp {
                w1: Array2::zeros((input_dim, hidden_units)),
                b1: Array1::zeros(hidden_units),
                w2: Array2::zeros((hidden_units, num_classes)),
                b2: Array1::zeros(num_classes),
            }
        };
        Classifier {
            weights,
            input_dim,
            num_classes,
            hidden_units,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_units
    }

    fn forward(&self, x: ArrayView2<f64>) -> ForwardPass {
        assert_eq!(x.ncols(), self.input_dim, "feature dimension mismatch");
        match &self.weights {
            Weights::Linear { w, b } => ForwardPass {
                logits: x.dot(w) + b,
                hidden_pre: None,
                hidden_act: None,
            },
            Weights::Mlp { w1, b1, w2, b2 } => {
                let z1 = x.dot(w1) + b1;
                let a1 = z1.mapv(|v| v.max(0.0));
                ForwardPass {
                    logits: a1.dot(w2) + b2,
                    hidden_pre: Some(z1),
                    hidden_act: Some(a1),
                }
            }
        }
    }

    /// Row-wise class probabilities for a feature matrix.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        softmax_rows(self.forward(x).logits)
    }

    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Result<ProbVector> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let row = x.insert_axis(Axis(0));
        let probs = self.predict_batch(row);
        ProbVector::new(probs.row(0).to_vec())
    }

    /// Positive-class probability (entry 1) per row, for binary filters.
    pub fn positive_scores(&self, x: ArrayView2<f64>) -> Array1<f64> {
        assert_eq!(self.num_classes, 2, "positive_scores on non-binary model");
        self.predict_batch(x).column(1).to_owned()
    }

    pub fn num_params(&self) -> usize {
        self.weights.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameters flattened in a fixed order: each layer's weight matrix
    /// row-major, then its bias, first layer first.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.weights.tensors() {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for t in self.weights.tensors_mut() {
            t.copy_from_slice(&params[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        if self.hidden_units == 0 {
            format!("linear input={} classes={}", self.input_dim, self.num_classes)
        } else {
            format!(
                "mlp input={} hidden={} classes={}",
                self.input_dim, self.hidden_units, self.num_classes
            )
        }
    }

    /// Dump to a flat binary file: 8-byte magic, version byte, one
    /// newline-terminated architecture descriptor line, then all
    /// parameters as little-endian f64 in `params_flat` order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(Error::io(path))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(Error::io(path));
        write(&MODEL_MAGIC)?;
        write(&[MODEL_VERSION])?;
        write(self.descriptor().as_bytes())?;
        write(b"\n")?;
        for v in self.params_flat() {
            write(&v.to_le_bytes())?;
        }
        w.flush().map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Classifier> {
        let format_err = |message: String| Error::FileFormat {
            path: path.to_path_buf(),
            line: 1,
            message,
        };
        let file = std::fs::File::open(path).map_err(Error::io(path))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(Error::io(path))?;
        if magic != MODEL_MAGIC {
            return Err(format_err("bad magic, not a model file".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version).map_err(Error::io(path))?;
        if version[0] != MODEL_VERSION {
            return Err(format_err(format!(
                "unsupported model version {}",
                version[0]
            )));
        }
        let mut descriptor = Vec::new();
        r.read_until(b'\n', &mut descriptor).map_err(Error::io(path))?;
        let descriptor = String::from_utf8(descriptor)
            .map_err(|_| format_err("descriptor is not UTF-8".into()))?;
        let (input_dim, hidden_units, num_classes) = parse_descriptor(descriptor.trim_end())
            .ok_or_else(|| format_err(format!("bad descriptor `{}`", descriptor.trim_end())))?;
        let mut clf = Classifier::zeroed(input_dim, num_classes, hidden_units);
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(Error::io(path))?;
        if raw.len() != clf.num_params() * 8 {
            return Err(format_err(format!(
                "expected {} parameter bytes, found {}",
                clf.num_params() * 8,
                raw.len()
            )));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        clf.set_params_flat(&params)?;
        Ok(clf)
    }
}

fn parse_descriptor(line: &str) -> Option<(usize, usize, usize)> {
    let mut parts = line.split(' ');
    let kind = parts.next()?;
    let mut kv = std::collections::BTreeMap::new();
    for part in parts {
        let (k, v) = part.split_once('=')?;
        kv.insert(k, v.parse::<usize>().ok()?);
    }
    let input = *kv.get("input")?;
    let classes = *kv.get("classes")?;
    match kind {
        "linear" => Some((input, 0, classes)),
        "mlp" => Some((input, *kv.get("hidden")?, classes)),
        _ => None,
    }
}

struct ForwardPass {
    logits: Array2<f64>,
    hidden_pre: Option<Array2<f64>>,
    hidden_act: Option<Array2<f64>>,
}

/// Row-wise softmax with max-shift for overflow safety.
fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    logits
}

/// `−Σ t log p` with `p` clamped to `[1e-12, 1]` and zero-target terms
/// skipped.
pub fn cross_entropy(target: &ProbVector, probs: &ProbVector) -> Result<f64> {
    if target.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: probs.len(),
        });
    }
    Ok(cross_entropy_raw(target.entries(), probs.entries()))
}

fn cross_entropy_raw(target: &[f64], probs: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (&t, &p) in target.iter().zip(probs) {
        if t > 0.0 {
            loss -= t * p.clamp(PROB_FLOOR, 1.0).ln();
        }
    }
    loss
}

/// Mean prediction entropy over a batch: `−(1/n) Σ_i Σ_c p log p`, in
/// `[0, ln C]`. Entries below 1e-12 contribute exactly zero, so one-hot
/// batches score 0.
pub fn entropy_regularizer(batch_probs: &[ProbVector]) -> Result<f64> {
    if batch_probs.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let total: f64 = batch_probs
        .iter()
        .map(|pv| entropy_of_row(pv.entries()))
        .sum();
    Ok(total / batch_probs.len() as f64)
}

fn entropy_of_row(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p >= PROB_FLOOR {
            h -= p * p.min(1.0).ln();
        }
    }
    h
}

/// Distillation objective `λ·CE(t, s) + (1−λ)·CE(y, s)`, with λ weighting
/// the teacher. By linearity of cross-entropy in its target this equals
/// `CE(λt + (1−λ)y, s)`, the cross-entropy against a soft-bootstrap
/// pseudo-label, so training on pseudo-labels optimizes exactly this loss.
pub fn distillation_loss(
    y: &ProbVector,
    teacher_out: &ProbVector,
    student_out: &ProbVector,
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid_param("lambda", "must lie in [0, 1]"));
    }
    let ce_given = cross_entropy(y, student_out)?;
    let ce_teacher = cross_entropy(teacher_out, student_out)?;
    Ok(lambda * ce_teacher + (1.0 - lambda) * ce_given)
}

/// Convex combination of two samples and their targets:
/// `(β·x_i + (1−β)·x_j, β·y_i + (1−β)·y_j)`.
pub fn mixup_pair(
    x_i: ArrayView1<f64>,
    y_i: &ProbVector,
    x_j: ArrayView1<f64>,
    y_j: &ProbVector,
    beta: f64,
) -> Result<(Array1<f64>, ProbVector)> {
    if x_i.len() != x_j.len() {
        return Err(Error::DimensionMismatch {
            expected: x_i.len(),
            got: x_j.len(),
        });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid_param("beta", "must lie in [0, 1]"));
    }
    let x = &x_i.to_owned() * beta + &x_j.to_owned() * (1.0 - beta);
    let y = y_i.blend(y_j, beta)?;
    Ok((x, y))
}

/// Total batch loss: mean cross-entropy plus `entropy_weight` times the
/// entropy regularizer, evaluated at the classifier's current parameters.
pub fn batch_loss(
    clf: &Classifier,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    entropy_weight: f64,
) -> f64 {
    let probs = clf.predict_batch(x);
    let n = x.nrows() as f64;
    let mut ce = 0.0;
    let mut ent = 0.0;
    for (p_row, t_row) in probs.rows().into_iter().zip(targets.rows()) {
        ce += cross_entropy_raw(t_row.as_slice().expect("row"), p_row.as_slice().expect("row"));
        if entropy_weight > 0.0 {
            ent += entropy_of_row(p_row.as_slice().expect("row"));
        }
    }
    (ce + entropy_weight * ent) / n
}

/// Analytic gradient of [`batch_loss`], flattened in `params_flat` order.
pub fn batch_gradients(
    clf: &Classifier,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    entropy_weight: f64,
) -> Vec<f64> {
    let (_, grads) = loss_and_grads(clf, x, targets, entropy_weight);
    let mut out = Vec::new();
    for t in grads.tensors() {
        out.extend_from_slice(t);
    }
    out
}

fn loss_and_grads(
    clf: &Classifier,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    entropy_weight: f64,
) -> (f64, Weights) {
    let n = x.nrows();
    let inv_n = 1.0 / n as f64;
    let pass = clf.forward(x);
    let probs = softmax_rows(pass.logits);

    let mut loss = 0.0;
    // d(loss)/d(logits); the cross-entropy part is (p − t)/n, the entropy
    // part is −w/n · p ⊙ (log p − Σ_c p_c log p_c).
    let mut g_logits = Array2::<f64>::zeros(probs.raw_dim());
    for i in 0..n {
        let p_row = probs.row(i);
        let t_row = targets.row(i);
        loss += cross_entropy_raw(t_row.as_slice().expect("row"), p_row.as_slice().expect("row"));
        let mut s = 0.0;
        if entropy_weight > 0.0 {
            loss += entropy_weight * entropy_of_row(p_row.as_slice().expect("row"));
            for &p in p_row {
                if p >= PROB_FLOOR {
                    s += p * p.min(1.0).ln();
                }
            }
        }
        for c in 0..probs.ncols() {
            let p = p_row[c];
            let mut g = p - t_row[c];
            if entropy_weight > 0.0 && p >= PROB_FLOOR {
                g -= entropy_weight * p * (p.min(1.0).ln() - s);
            }
            g_logits[(i, c)] = g * inv_n;
        }
    }
    loss *= inv_n;

    let grads = match &clf.weights {
        Weights::Linear { .. } => Weights::Linear {
            w: x.t().dot(&g_logits),
            b: g_logits.sum_axis(Axis(0)),
        },
        Weights::Mlp { w2, .. } => {
            let a1 = pass.hidden_act.as_ref().expect("mlp forward");
            let z1 = pass.hidden_pre.as_ref().expect("mlp forward");
            let mut g_hidden = g_logits.dot(&w2.t());
            g_hidden.zip_mut_with(z1, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            Weights::Mlp {
                w1: x.t().dot(&g_hidden),
                b1: g_hidden.sum_axis(Axis(0)),
                w2: a1.t().dot(&g_logits),
                b2: g_logits.sum_axis(Axis(0)),
            }
        }
    };
    (loss, grads)
}

/// Minibatch SGD with momentum and weight decay on cross-entropy plus the
/// entropy regularizer, with per-batch mixup when `mixup_mu > 0`.
/// Deterministic under `config.seed`.
pub fn train_classifier(
    features: ArrayView2<f64>,
    targets: &[ProbVector],
    config: &TrainConfig,
) -> Result<Classifier> {
    config.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.len(),
        });
    }
    let num_classes = targets[0].len();
    if num_classes < 2 {
        return Err(Error::InvalidInput("need at least 2 classes".into()));
    }
    for t in targets {
        if t.len() != num_classes {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                got: t.len(),
            });
        }
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }

    let dim = features.ncols();
    let target_mat = {
        let mut m = Array2::<f64>::zeros((n, num_classes));
        for (i, t) in targets.iter().enumerate() {
            m.row_mut(i)
                .as_slice_mut()
                .expect("row")
                .copy_from_slice(t.entries());
        }
        m
    };

    let mut rng = Rng::new(config.seed);
    let mut clf = Classifier::init(dim, num_classes, config.hidden_units, &mut rng);
    let mut velocity = clf.weights.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr_schedule.rate_at(epoch);
        rng.shuffle(&mut order);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            let mut x_batch = Array2::<f64>::zeros((b, dim));
            let mut t_batch = Array2::<f64>::zeros((b, num_classes));
            for (row, &src) in chunk.iter().enumerate() {
                x_batch.row_mut(row).assign(&features.row(src));
                t_batch.row_mut(row).assign(&target_mat.row(src));
            }
            if config.mixup_mu > 0.0 {
                let x_orig = x_batch.clone();
                let t_orig = t_batch.clone();
                for i in 0..b {
                    let beta = rng.beta(config.mixup_mu, config.mixup_mu);
                    let j = rng.below(b);
                    for col in 0..dim {
                        x_batch[(i, col)] =
                            beta * x_orig[(i, col)] + (1.0 - beta) * x_orig[(j, col)];
                    }
                    for col in 0..num_classes {
                        t_batch[(i, col)] =
                            beta * t_orig[(i, col)] + (1.0 - beta) * t_orig[(j, col)];
                    }
                }
            }
            let (loss, grads) =
                loss_and_grads(&clf, x_batch.view(), t_batch.view(), config.entropy_weight);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            sgd_step(
                &mut clf.weights,
                &mut velocity,
                &grads,
                lr,
                config.momentum,
                config.weight_decay,
            );
        }
    }
    Ok(clf)
}

/// One SGD step: `g ← g + wd·w`, `v ← momentum·v + g`, `w ← w − lr·v`.
fn sgd_step(
    weights: &mut Weights,
    velocity: &mut Weights,
    grads: &Weights,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let mut w_tensors = weights.tensors_mut();
    let mut v_tensors = velocity.tensors_mut();
    let g_tensors = grads.tensors();
    for ((w, v), g) in w_tensors.iter_mut().zip(v_tensors.iter_mut()).zip(g_tensors) {
        for k in 0..w.len() {
            let grad = g[k] + weight_decay * w[k];
            v[k] = momentum * v[k] + grad;
            w[k] -= lr * v[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn simple_config(epochs: usize, hidden_units: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            lr_schedule: LrSchedule::constant(0.1),
            momentum: 0.9,
            weight_decay: 1e-4,
            mixup_mu: 0.0,
            entropy_weight: 0.0,
            hidden_units,
            seed,
        }
    }

    fn random_simplex(rng: &mut Rng, c: usize) -> ProbVector {
        let raw: Vec<f64> = (0..c).map(|_| rng.next_f64() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        ProbVector::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
    }

    fn two_blob_data(n_per: usize, dim: usize, gap: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let n = 2 * n_per;
        let mut x = Array2::<f64>::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i / n_per;
            for d in 0..dim {
                let center = if d == 0 && class == 1 { gap } else { 0.0 };
                x[(i, d)] = center + rng.normal();
            }
            labels.push(class);
        }
        (x, labels)
    }

    #[test]
    fn prob_vector_rejects_bad_inputs() {
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.4]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        let pv = ProbVector::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(pv.argmax(), 0);
        let pv = ProbVector::new(vec![0.1, 0.45, 0.45]).unwrap();
        assert_eq!(pv.argmax(), 1);
    }

    #[test]
    fn mixup_endpoints_and_midpoint() {
        let x_i = array![1.0, 2.0];
        let x_j = array![3.0, -4.0];
        let e0 = ProbVector::one_hot(0, 3);
        let e1 = ProbVector::one_hot(1, 3);

        let (x, y) = mixup_pair(x_i.view(), &e0, x_j.view(), &e1, 1.0).unwrap();
        assert_eq!(x, x_i);
        assert_eq!(y, e0);

        let (x, y) = mixup_pair(x_i.view(), &e0, x_j.view(), &e1, 0.5).unwrap();
        assert_eq!(x, array![2.0, -1.0]);
        assert_eq!(y.entries(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn mixup_output_stays_between_inputs() {
        let mut rng = Rng::new(40);
        for _ in 0..200 {
            let x_i = Array1::from_shape_fn(5, |_| rng.normal());
            let x_j = Array1::from_shape_fn(5, |_| rng.normal());
            let y_i = random_simplex(&mut rng, 4);
            let y_j = random_simplex(&mut rng, 4);
            let beta = rng.next_f64();
            let (x, _) = mixup_pair(x_i.view(), &y_i, x_j.view(), &y_j, beta).unwrap();
            for d in 0..5 {
                let lo = x_i[d].min(x_j[d]);
                let hi = x_i[d].max(x_j[d]);
                assert!(x[d] >= lo - 1e-12 && x[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn mixup_rejects_mismatched_dims() {
        let a = array![1.0, 2.0];
        let b = array![1.0, 2.0, 3.0];
        let y = ProbVector::one_hot(0, 2);
        assert!(mixup_pair(a.view(), &y, b.view(), &y, 0.5).is_err());
    }

    #[test]
    fn entropy_is_zero_at_one_hot_and_max_at_uniform() {
        let one_hots: Vec<ProbVector> = (0..10).map(|c| ProbVector::one_hot(c, 10)).collect();
        assert_eq!(entropy_regularizer(&one_hots).unwrap(), 0.0);

        let uniforms = vec![ProbVector::uniform(10); 4];
        let val = entropy_regularizer(&uniforms).unwrap();
        assert!((val - 10.0f64.ln()).abs() < 1e-12, "got {val}");
    }

    #[test]
    fn entropy_hand_computed_case() {
        let batch = vec![
            ProbVector::new(vec![0.5, 0.5]).unwrap(),
            ProbVector::new(vec![1.0, 0.0]).unwrap(),
        ];
        let val = entropy_regularizer(&batch).unwrap();
        assert!((val - 0.5 * 2.0f64.ln()).abs() < 1e-12, "got {val}");
    }

    #[test]
    fn entropy_rejects_empty_batch() {
        assert!(entropy_regularizer(&[]).is_err());
    }

    #[test]
    fn distillation_endpoints() {
        let y = ProbVector::one_hot(0, 3);
        let t = ProbVector::new(vec![0.2, 0.5, 0.3]).unwrap();
        let s = ProbVector::new(vec![0.6, 0.3, 0.1]).unwrap();

        // λ = 0 ignores the teacher: plain cross-entropy on the given label.
        let at_zero = distillation_loss(&y, &t, &s, 0.0).unwrap();
        assert!((at_zero - cross_entropy(&y, &s).unwrap()).abs() < 1e-15);

        // λ = 1 with teacher = student: CE(p, p) is the entropy of p.
        let at_one = distillation_loss(&y, &s, &s, 1.0).unwrap();
        let h: f64 = -s.entries().iter().map(|&p| p * p.ln()).sum::<f64>();
        assert!((at_one - h).abs() < 1e-12);

        assert!(distillation_loss(&y, &t, &s, 1.5).is_err());
        assert!(distillation_loss(&y, &t, &s, -0.1).is_err());
    }

    #[test]
    fn distillation_equals_ce_on_blended_target() {
        let mut rng = Rng::new(88);
        for _ in 0..1000 {
            let y = random_simplex(&mut rng, 5);
            let t = random_simplex(&mut rng, 5);
            let s = random_simplex(&mut rng, 5);
            let lambda = rng.next_f64();
            let direct = distillation_loss(&y, &t, &s, lambda).unwrap();
            let blended = t.blend(&y, lambda).unwrap();
            let via_blend = cross_entropy(&blended, &s).unwrap();
            assert!((direct - via_blend).abs() < 1e-9, "λ={lambda}");
        }
    }

    #[test]
    fn zero_weight_model_predicts_uniform() {
        let clf = Classifier::zeroed(4, 3, 0);
        let out = clf.predict_proba(array![1.0, -2.0, 0.5, 3.0].view()).unwrap();
        for &p in out.entries() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn predictions_are_valid_prob_vectors() {
        let mut rng = Rng::new(4);
        let clf = Classifier::init(6, 4, 8, &mut rng);
        for _ in 0..1000 {
            let x = Array1::from_shape_fn(6, |_| rng.normal() * 3.0);
            let out = clf.predict_proba(x.view()).unwrap();
            let sum: f64 = out.entries().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(out.entries().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut a = Classifier::zeroed(2, 3, 0);
        let mut b = Classifier::zeroed(2, 3, 0);
        a.set_params_flat(&[1.0, -0.5, 0.2, 0.3, 2.0, -1.0, 0.1, 0.4, -0.2])
            .unwrap();
        // Same weights with every bias shifted by a constant.
        b.set_params_flat(&[1.0, -0.5, 0.2, 0.3, 2.0, -1.0, 7.1, 7.4, 6.8])
            .unwrap();
        let x = array![0.3, -1.2];
        let pa = a.predict_proba(x.view()).unwrap();
        let pb = b.predict_proba(x.view()).unwrap();
        for (u, v) in pa.entries().iter().zip(pb.entries()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let clf = Classifier::zeroed(4, 3, 0);
        assert!(clf.predict_proba(array![1.0, 2.0].view()).is_err());
    }

    fn check_gradients(hidden_units: usize) {
        let mut rng = Rng::new(2024 + hidden_units as u64);
        let eps = 1e-5;
        for trial in 0..10 {
            let dim = 4;
            let c = 3;
            let b = 3;
            let mut clf = Classifier::init(dim, c, hidden_units, &mut rng);
            let x_raw = Array2::from_shape_fn((b, dim), |_| rng.normal());
            let t_raw: Vec<ProbVector> = (0..b).map(|_| random_simplex(&mut rng, c)).collect();

            // Mixup composition: mix the batch first, then differentiate the
            // loss at the mixed inputs.
            let mut x = Array2::<f64>::zeros((b, dim));
            let mut t = Array2::<f64>::zeros((b, c));
            for i in 0..b {
                let beta = rng.beta(2.0, 2.0);
                let j = rng.below(b);
                let (xm, tm) =
                    mixup_pair(x_raw.row(i), &t_raw[i], x_raw.row(j), &t_raw[j], beta).unwrap();
                x.row_mut(i).assign(&xm);
                t.row_mut(i)
                    .as_slice_mut()
                    .unwrap()
                    .copy_from_slice(tm.entries());
            }

            let entropy_weight = 0.3;
            let analytic = batch_gradients(&clf, x.view(), t.view(), entropy_weight);
            let params = clf.params_flat();
            let mut max_rel = 0.0f64;
            for k in 0..params.len() {
                let mut plus = params.clone();
                plus[k] += eps;
                clf.set_params_flat(&plus).unwrap();
                let lp = batch_loss(&clf, x.view(), t.view(), entropy_weight);
                let mut minus = params.clone();
                minus[k] -= eps;
                clf.set_params_flat(&minus).unwrap();
                let lm = batch_loss(&clf, x.view(), t.view(), entropy_weight);
                clf.set_params_flat(&params).unwrap();
                let fd = (lp - lm) / (2.0 * eps);
                let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-5);
                max_rel = max_rel.max(rel);
            }
            assert!(
                max_rel < 1e-4,
                "trial {trial}: max relative gradient error {max_rel}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences_linear() {
        check_gradients(0);
    }

    #[test]
    fn gradients_match_finite_differences_mlp() {
        check_gradients(5);
    }

    #[test]
    fn batch_loss_without_entropy_term_is_plain_ce() {
        let mut rng = Rng::new(9);
        let clf = Classifier::init(3, 2, 0, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.normal());
        let t = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.5, 0.5]];
        let probs = clf.predict_batch(x.view());
        let mut expected = 0.0;
        for i in 0..4 {
            for c in 0..2 {
                if t[(i, c)] > 0.0 {
                    expected -= t[(i, c)] * probs[(i, c)].ln();
                }
            }
        }
        expected /= 4.0;
        let got = batch_loss(&clf, x.view(), t.view(), 0.0);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, labels) = two_blob_data(30, 3, 4.0, 7);
        let targets = one_hot_targets(&labels, 2);
        let config = simple_config(10, 4, 123);
        let a = train_classifier(x.view(), &targets, &config).unwrap();
        let b = train_classifier(x.view(), &targets, &config).unwrap();
        let pa = a.params_flat();
        let pb = b.params_flat();
        assert_eq!(pa.len(), pb.len());
        for (u, v) in pa.iter().zip(&pb) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let (x, labels) = two_blob_data(50, 4, 8.0, 3);
        let targets = one_hot_targets(&labels, 2);
        let config = simple_config(30, 0, 5);
        let clf = train_classifier(x.view(), &targets, &config).unwrap();
        let probs = clf.predict_batch(x.view());
        let correct = probs
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(row, &label)| {
                let pred = if row[1] > row[0] { 1 } else { 0 };
                pred == label
            })
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn mixup_and_entropy_training_still_learns() {
        let (x, labels) = two_blob_data(50, 4, 8.0, 31);
        let targets = one_hot_targets(&labels, 2);
        let mut config = simple_config(40, 8, 11);
        config.mixup_mu = 2.0;
        config.entropy_weight = 0.1;
        let clf = train_classifier(x.view(), &targets, &config).unwrap();
        let probs = clf.predict_batch(x.view());
        let correct = probs
            .rows()
            .into_iter()
            .zip(&labels)
            .filter(|(row, &label)| (row[1] > row[0]) as usize == label)
            .count();
        assert!(correct >= 95, "correct {correct}/100");
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let (x, labels) = two_blob_data(20, 3, 4.0, 15);
        let targets = one_hot_targets(&labels, 2);
        let mut config = simple_config(50, 0, 1);
        config.lr_schedule = LrSchedule::constant(1e160);
        let err = train_classifier(x.view(), &targets, &config).unwrap_err();
        match err {
            Error::TrainingDiverged { .. } => {}
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn lr_schedule_applies_divisors_from_their_epoch() {
        let sched = LrSchedule::with_steps(0.05, &[(30, 10.0), (50, 10.0), (80, 10.0)]);
        assert_eq!(sched.rate_at(0), 0.05);
        assert_eq!(sched.rate_at(29), 0.05);
        assert_eq!(sched.rate_at(30), 0.005);
        assert_eq!(sched.rate_at(79), 0.0005);
        assert!((sched.rate_at(99) - 0.00005).abs() < 1e-18);
    }

    #[test]
    fn config_validation_names_offending_field() {
        let mut config = simple_config(10, 0, 1);
        config.epochs = 0;
        match config.validate().unwrap_err() {
            Error::InvalidParam { field, .. } => assert_eq!(field, "epochs"),
            other => panic!("unexpected error {other}"),
        }
        let mut config = simple_config(10, 0, 1);
        config.lr_schedule = LrSchedule::constant(0.0);
        assert!(config.validate().is_err());
    }

    #[test]
    fn model_file_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut rng = Rng::new(77);
        for hidden in [0usize, 6] {
            let clf = Classifier::init(5, 3, hidden, &mut rng);
            clf.save(&path).unwrap();
            let loaded = Classifier::load(&path).unwrap();
            assert_eq!(loaded.descriptor(), clf.descriptor());
            let pa = clf.params_flat();
            let pb = loaded.params_flat();
            for (u, v) in pa.iter().zip(&pb) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn model_load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a model file at all").unwrap();
        assert!(Classifier::load(&path).is_err());
    }
}
