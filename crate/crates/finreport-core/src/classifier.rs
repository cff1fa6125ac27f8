//! Return-rank labeling, news/factor fusion, and a 2-layer MLP softmax
//! classifier trained with mini-batch SGD. Everything is seeded and
//! deterministic: init, shuffling, and dropout masks.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const PROB_FLOOR: f64 = 1e-12;

/// 3-class return label, ordered as the softmax output: positive,
/// neutral, negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Neutral,
    Negative,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Neutral => 1,
            Label::Negative => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Positive),
            1 => Some(Label::Neutral),
            2 => Some(Label::Negative),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Neutral => "neutral",
            Label::Negative => "negative",
        }
    }
}

/// Rank one date's cross-section of returns into labels.
///
/// Descending by return, ties broken by ascending symbol. The first
/// `max(floor(0.2n), 1)` are positive, the next `floor(0.4n)` neutral,
/// the last `floor(0.2n)` negative; the 60-80% band stays unlabeled and
/// is excluded from training. Fewer than 5 symbols leaves everything
/// unlabeled.
pub fn assign_labels(returns: &BTreeMap<String, f64>) -> BTreeMap<String, Option<Label>> {
    let n = returns.len();
    if n < 5 {
        log::warn!("cross-section of {n} symbols is too small to rank; all unlabeled");
        return returns.keys().map(|s| (s.clone(), None)).collect();
    }
    let mut ranked: Vec<(&String, f64)> = returns.iter().map(|(s, r)| (s, *r)).collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(b.0))
    });
    let n_pos = ((n as f64 * 0.2).floor() as usize).max(1);
    let n_neu = (n as f64 * 0.4).floor() as usize;
    let n_neg = (n as f64 * 0.2).floor() as usize;
    ranked
        .into_iter()
        .enumerate()
        .map(|(rank, (symbol, _))| {
            let label = if rank < n_pos {
                Some(Label::Positive)
            } else if rank < n_pos + n_neu {
                Some(Label::Neutral)
            } else if rank >= n - n_neg {
                Some(Label::Negative)
            } else {
                None
            };
            (symbol.clone(), label)
        })
        .collect()
}

/// Element-wise product of the fusion weights with the stacked
/// [news; factors] column.
pub fn fuse(x_n: &[f64], x_f: &[f64], w_alpha: &[f64]) -> Result<Vec<f64>> {
    if x_n.len() + x_f.len() != w_alpha.len() {
        return Err(Error::Dimension(format!(
            "fusion weights have length {}, inputs stack to {}",
            w_alpha.len(),
            x_n.len() + x_f.len()
        )));
    }
    Ok(x_n
        .iter()
        .chain(x_f.iter())
        .zip(w_alpha)
        .map(|(x, w)| x * w)
        .collect())
}

/// MLP parameters: learnable per-coordinate fusion weights, then
/// hidden and output dense layers. Weight matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_alpha: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub dropout_rate: f64,
}

impl MlpParams {
    /// Glorot-uniform layer init, fusion weights all ones, biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, dropout_rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect::<Vec<f64>>()
        };
        MlpParams {
            input_dim,
            hidden_dim,
            w_alpha: vec![1.0; input_dim],
            w1: glorot(input_dim, hidden_dim),
            b1: vec![0.0; hidden_dim],
            w2: glorot(hidden_dim, 3),
            b2: vec![0.0; 3],
            dropout_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("w_alpha", self.w_alpha.len(), self.input_dim),
            ("w1", self.w1.len(), self.hidden_dim * self.input_dim),
            ("b1", self.b1.len(), self.hidden_dim),
            ("w2", self.w2.len(), 3 * self.hidden_dim),
            ("b2", self.b2.len(), 3),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        for v in self
            .w_alpha
            .iter()
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
        {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite parameter".into()));
            }
        }
        Ok(())
    }
}

/// Intermediate activations kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stacked: Vec<f64>,
    fused: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    mask: Option<Vec<f64>>,
    pub probs: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Forward pass on a stacked [news; factors] input. The dropout mask,
/// when given, applies after the hidden ReLU (inverted dropout, already
/// scaled); pass `None` for inference.
pub fn forward(
    params: &MlpParams,
    stacked: &[f64],
    dropout_mask: Option<&[f64]>,
) -> Result<ForwardCache> {
    if stacked.len() != params.input_dim {
        return Err(Error::Dimension(format!(
            "input has length {}, model expects {}",
            stacked.len(),
            params.input_dim
        )));
    }
    let fused: Vec<f64> = stacked
        .iter()
        .zip(&params.w_alpha)
        .map(|(x, w)| x * w)
        .collect();

    let h = params.hidden_dim;
    let mut z1 = params.b1.clone();
    for i in 0..h {
        let row = &params.w1[i * params.input_dim..(i + 1) * params.input_dim];
        z1[i] += row.iter().zip(&fused).map(|(w, x)| w * x).sum::<f64>();
    }
    let mut a1: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();
    if let Some(mask) = dropout_mask {
        for (a, m) in a1.iter_mut().zip(mask) {
            *a *= m;
        }
    }

    let mut logits = params.b2.clone();
    for k in 0..3 {
        let row = &params.w2[k * h..(k + 1) * h];
        logits[k] += row.iter().zip(&a1).map(|(w, x)| w * x).sum::<f64>();
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(
            "non-finite logits; training has likely exploded".into(),
        ));
    }
    let probs = softmax(&logits);
    Ok(ForwardCache {
        stacked: stacked.to_vec(),
        fused,
        z1,
        a1,
        mask: dropout_mask.map(|m| m.to_vec()),
        probs,
    })
}

/// Class probabilities without dropout.
pub fn predict(params: &MlpParams, stacked: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(params, stacked, None)?.probs)
}

/// Cross-entropy of one prediction: -ln y[label], clamped at 1e-12.
pub fn cross_entropy(probs: &[f64], label: Label) -> f64 {
    let p = probs[label.index()];
    if p < PROB_FLOOR {
        log::warn!("predicted probability {p} clamped at {PROB_FLOOR} in loss");
    }
    -p.max(PROB_FLOOR).ln()
}

/// Parameter gradients, same shapes as [`MlpParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w_alpha: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(params: &MlpParams) -> Self {
        Gradients {
            w_alpha: vec![0.0; params.w_alpha.len()],
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    fn scale(&mut self, s: f64) {
        for g in [
            &mut self.w_alpha,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ] {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Backprop for one sample; accumulates into `grads`.
fn backward_into(params: &MlpParams, cache: &ForwardCache, label: Label, grads: &mut Gradients) {
    let h = params.hidden_dim;
    let input = params.input_dim;

    // d loss / d logits
    let mut dz2 = cache.probs.clone();
    dz2[label.index()] -= 1.0;

    for k in 0..3 {
        grads.b2[k] += dz2[k];
        for j in 0..h {
            grads.w2[k * h + j] += dz2[k] * cache.a1[j];
        }
    }

    let mut da1 = vec![0.0; h];
    for j in 0..h {
        for k in 0..3 {
            da1[j] += params.w2[k * h + j] * dz2[k];
        }
    }
    if let Some(mask) = &cache.mask {
        for (d, m) in da1.iter_mut().zip(mask) {
            *d *= m;
        }
    }
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&cache.z1)
        .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
        .collect();

    let mut dfused = vec![0.0; input];
    for j in 0..h {
        grads.b1[j] += dz1[j];
        let row = &params.w1[j * input..(j + 1) * input];
        for i in 0..input {
            grads.w1[j * input + i] += dz1[j] * cache.fused[i];
            dfused[i] += row[i] * dz1[j];
        }
    }
    for i in 0..input {
        grads.w_alpha[i] += dfused[i] * cache.stacked[i];
    }
}

/// Mean batch loss and its analytic gradients, dropout disabled.
/// This is the function the finite-difference check targets.
pub fn batch_loss_and_grads(
    params: &MlpParams,
    inputs: &[Vec<f64>],
    labels: &[Label],
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(params);
    let mut loss = 0.0;
    for (x, label) in inputs.iter().zip(labels) {
        let cache = forward(params, x, None)?;
        loss += cross_entropy(&cache.probs, *label);
        backward_into(params, &cache, *label, &mut grads);
    }
    let n = inputs.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Learning rates and batch sizes default to the middle of the search
/// grid; all randomness flows from `rng_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 50,
            hidden_dim: 1024,
            dropout_rate: 0.1,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Stacked [news; factors] columns.
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn mean_loss(params: &MlpParams, data: &Dataset) -> Result<f64> {
    let mut loss = 0.0;
    for (x, label) in data.inputs.iter().zip(&data.labels) {
        let probs = predict(params, x)?;
        loss += cross_entropy(&probs, *label);
    }
    Ok(loss / data.len() as f64)
}

/// Mini-batch SGD with seeded shuffling and dropout. With a validation
/// set, returns the params with the lowest validation loss; otherwise
/// the final params.
pub fn train(
    data: &Dataset,
    val: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(MlpParams, Vec<EpochMetrics>)> {
    if data.is_empty() {
        return Err(Error::Validation("training dataset is empty".into()));
    }
    if data.inputs.len() != data.labels.len() {
        return Err(Error::Dimension("inputs/labels length mismatch".into()));
    }
    let mut classes = [0usize; 3];
    for l in &data.labels {
        classes[l.index()] += 1;
    }
    if classes.iter().filter(|c| **c > 0).count() == 1 {
        log::warn!("degenerate training data: only one class present");
    }

    let input_dim = data.inputs[0].len();
    let mut params = MlpParams::init(
        input_dim,
        config.hidden_dim,
        config.dropout_rate,
        config.rng_seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1));

    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut grads = Gradients::zeros(&params);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let mask: Option<Vec<f64>> = if params.dropout_rate > 0.0 {
                    let keep = 1.0 - params.dropout_rate;
                    Some(
                        (0..params.hidden_dim)
                            .map(|_| {
                                if rng.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                let cache = forward(&params, &data.inputs[idx], mask.as_deref())?;
                batch_loss += cross_entropy(&cache.probs, data.labels[idx]);
                backward_into(&params, &cache, data.labels[idx], &mut grads);
            }
            let bn = chunk.len() as f64;
            grads.scale(1.0 / bn);
            epoch_loss += batch_loss;

            let lr = config.learning_rate;
            for (p, g) in params.w_alpha.iter_mut().zip(&grads.w_alpha) {
                *p -= lr * g;
            }
            for (p, g) in params.w1.iter_mut().zip(&grads.w1) {
                *p -= lr * g;
            }
            for (p, g) in params.b1.iter_mut().zip(&grads.b1) {
                *p -= lr * g;
            }
            for (p, g) in params.w2.iter_mut().zip(&grads.w2) {
                *p -= lr * g;
            }
            for (p, g) in params.b2.iter_mut().zip(&grads.b2) {
                *p -= lr * g;
            }
        }
        params.validate()?;

        let val_loss = val.map(|v| mean_loss(&params, v)).transpose()?;
        if let Some(vl) = val_loss {
            if vl < best_val {
                best_val = vl;
                best = params.clone();
            }
        }
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / data.len() as f64,
            val_loss,
        });
    }

    let final_params = if val.is_some() && config.epochs > 0 {
        best
    } else {
        params
    };
    Ok((final_params, history))
}

/// Macro-averaged classification metrics over the three classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
}

pub fn evaluate(params: &MlpParams, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Validation("evaluation dataset is empty".into()));
    }
    let mut confusion = [[0usize; 3]; 3]; // [actual][predicted]
    for (x, label) in data.inputs.iter().zip(&data.labels) {
        let probs = predict(params, x)?;
        let pred = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        confusion[label.index()][pred] += 1;
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..3).map(|i| confusion[i][i]).sum();

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in 0..3 {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = (0..3).map(|i| confusion[i][c]).sum();
        if actual == 0 {
            log::warn!("class {c} absent from evaluation data; its terms count as 0");
        }
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let precision = if predicted > 0 {
            tp / predicted as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
    }
    Ok(Metrics {
        accuracy: correct as f64 / total as f64,
        f1: f1_sum / 3.0,
        recall: recall_sum / 3.0,
        precision: precision_sum / 3.0,
    })
}

/// Versioned model checkpoint; load rejects shape mismatches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: MlpParams,
    pub config: TrainConfig,
    /// Per-column mean/std used to standardize factor inputs.
    pub factor_standardization: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(file, checkpoint)
        .map_err(|e| Error::Numeric(format!("checkpoint serialization failed: {e}")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)?;
    let checkpoint: Checkpoint =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {}",
            checkpoint.version
        )));
    }
    checkpoint.params.validate()?;
    Ok(checkpoint)
}
