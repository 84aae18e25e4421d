//! BPTT training with Adam, plus holdout evaluation.

use rand::seq::SliceRandom;
use rand_distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, Tensor};

use super::lstm::{init_params, LstmGraph};
use super::{ModelConfig, ModelError, SequenceModel, TimeSeriesWindow, TrainingSet};

/// Per-epoch mean cross-entropy, in order.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn initial_loss(&self) -> f64 {
        *self.epoch_losses.first().unwrap_or(&f64::NAN)
    }

    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&f64::NAN)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Adam step with decoupled weight decay (decay applied directly to
    /// the parameter, not through the moment estimates).
    fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + Self::EPS) + weight_decay * params[i]);
        }
    }
}

fn validate_set(set: &TrainingSet, cfg: &ModelConfig) -> Result<(), ModelError> {
    if set.windows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut seen = vec![false; cfg.num_classes];
    for (i, w) in set.windows.iter().enumerate() {
        if w.window_len() != cfg.window_len || w.num_features() != cfg.num_features {
            return Err(ModelError::DimensionMismatch {
                expected_rows: cfg.window_len,
                expected_cols: cfg.num_features,
                actual_rows: w.window_len(),
                actual_cols: w.num_features(),
            });
        }
        let label = w.label.ok_or(ModelError::UnlabeledWindow(i))?;
        if label >= cfg.num_classes {
            return Err(ModelError::LabelOutOfRange {
                window: i,
                label,
                num_classes: cfg.num_classes,
            });
        }
        seen[label] = true;
    }
    let distinct = seen.iter().filter(|s| **s).count();
    if distinct < 2 {
        let only = seen.iter().position(|s| *s).unwrap_or(0);
        return Err(ModelError::SingleClass(only));
    }
    Ok(())
}

/// Train an LSTM classifier on labeled windows.
///
/// Deterministic given `config.rng_seed`: weight init and epoch shuffles
/// both draw from one seeded stream. Softmax and cross-entropy are fused —
/// the backward pass is seeded at the logits with `(p - onehot) / batch`,
/// and the reported loss uses a log-sum-exp so saturated logits cannot
/// produce spurious infinities. A non-finite loss aborts with diagnostics.
pub fn train(
    set: &TrainingSet,
    config: &ModelConfig,
) -> Result<(SequenceModel, TrainLog), ModelError> {
    config.validate()?;
    validate_set(set, config)?;
    if set.class_labels.len() != config.num_classes {
        return Err(ModelError::Config(format!(
            "{} class labels for {} classes",
            set.class_labels.len(),
            config.num_classes
        )));
    }
    if set.stats.mean.len() != config.num_features {
        return Err(ModelError::StatsMismatch {
            stats: set.stats.mean.len(),
            expected: config.num_features,
        });
    }

    let graph = LstmGraph::build(config)?;
    let mut params = init_params(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed.wrapping_add(1));

    // Standardize once up front.
    let standardized: Vec<Vec<f64>> = set
        .windows
        .iter()
        .map(|w| set.stats.standardize(w.values(), config.num_features))
        .collect();
    let labels: Vec<usize> = set.windows.iter().map(|w| w.label.unwrap()).collect();

    let mut opt_w_x = Adam::new(params.w_x.len());
    let mut opt_w_h = Adam::new(params.w_h.len());
    let mut opt_b = Adam::new(params.b.len());
    let mut opt_w_out = Adam::new(params.w_out.len());
    let mut opt_b_out = Adam::new(params.b_out.len());

    let mut order: Vec<usize> = (0..set.windows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut last_loss = f64::NAN;
    let jitter = rand_distr::Normal::new(0.0, 1.0).expect("valid normal");

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut g_w_x = vec![0.0; params.w_x.len()];
            let mut g_w_h = vec![0.0; params.w_h.len()];
            let mut g_b = vec![0.0; params.b.len()];
            let mut g_w_out = vec![0.0; params.w_out.len()];
            let mut g_b_out = vec![0.0; params.b_out.len()];
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;

            for &idx in batch {
                let mut input = standardized[idx].clone();
                if config.input_jitter > 0.0 {
                    for v in &mut input {
                        *v += jitter.sample(&mut rng) * config.input_jitter;
                    }
                }
                let mut bindings = Bindings::new(&graph.graph);
                bindings.set(
                    graph.input,
                    Tensor::new(vec![config.window_len, config.num_features], input)?,
                )?;
                bindings.set(graph.h0, Tensor::zeros(&[1, config.hidden_size]))?;
                bindings.set(graph.c0, Tensor::zeros(&[1, config.hidden_size]))?;
                bindings.set(graph.w_x, params.w_x.clone())?;
                bindings.set(graph.w_h, params.w_h.clone())?;
                bindings.set(graph.b, params.b.clone())?;
                bindings.set(graph.w_out, params.w_out.clone())?;
                bindings.set(graph.b_out, params.b_out.clone())?;

                let eval = graph.graph.forward(&bindings)?;
                let logits = eval.value(graph.logits).data();
                let probs = eval.value(graph.probs).data();
                let label = labels[idx];

                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                batch_loss += (lse - logits[label]) * inv;

                let seed: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(k, p)| (p - if k == label { 1.0 } else { 0.0 }) * inv)
                    .collect();
                let grads = graph.graph.backward_seeded(
                    &eval,
                    graph.logits,
                    &seed,
                    &[graph.w_x, graph.w_h, graph.b, graph.w_out, graph.b_out],
                )?;
                axpy(&mut g_w_x, grads.expect(graph.w_x).data());
                axpy(&mut g_w_h, grads.expect(graph.w_h).data());
                axpy(&mut g_b, grads.expect(graph.b).data());
                axpy(&mut g_w_out, grads.expect(graph.w_out).data());
                axpy(&mut g_b_out, grads.expect(graph.b_out).data());
            }

            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    last_loss,
                });
            }
            last_loss = batch_loss;
            epoch_loss += batch_loss * batch.len() as f64;

            let lr = config.learning_rate;
            let wd = config.weight_decay;
            apply(&mut params.w_x, &mut opt_w_x, &g_w_x, lr, wd)?;
            apply(&mut params.w_h, &mut opt_w_h, &g_w_h, lr, wd)?;
            apply(&mut params.b, &mut opt_b, &g_b, lr, 0.0)?;
            apply(&mut params.w_out, &mut opt_w_out, &g_w_out, lr, wd)?;
            apply(&mut params.b_out, &mut opt_b_out, &g_b_out, lr, 0.0)?;
            if config.max_col_norm > 0.0 {
                clip_columns(&mut params.w_x, config.max_col_norm)?;
                clip_columns(&mut params.w_h, config.max_col_norm)?;
                clip_columns(&mut params.w_out, config.max_col_norm)?;
            }
        }

        epoch_losses.push(epoch_loss / set.windows.len() as f64);
    }

    let model = SequenceModel::from_parts(
        config.clone(),
        set.class_labels.clone(),
        set.stats.clone(),
        params,
    )?;
    Ok((model, TrainLog { epoch_losses }))
}

fn axpy(acc: &mut [f64], grad: &[f64]) {
    for (a, g) in acc.iter_mut().zip(grad) {
        *a += g;
    }
}

/// Scale any column whose L2 norm exceeds `max_norm` back onto the ball.
fn clip_columns(param: &mut Tensor, max_norm: f64) -> Result<(), ModelError> {
    let (rows, cols) = (param.rows(), param.cols());
    let mut data = param.data().to_vec();
    for c in 0..cols {
        let norm = (0..rows)
            .map(|r| data[r * cols + c] * data[r * cols + c])
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let scale = max_norm / norm;
            for r in 0..rows {
                data[r * cols + c] *= scale;
            }
        }
    }
    *param = Tensor::new(vec![rows, cols], data)?;
    Ok(())
}

fn apply(
    param: &mut Tensor,
    opt: &mut Adam,
    grad: &[f64],
    lr: f64,
    weight_decay: f64,
) -> Result<(), ModelError> {
    let shape = param.shape().to_vec();
    let mut data = param.data().to_vec();
    opt.update(&mut data, grad, lr, weight_decay);
    *param = Tensor::new(shape, data)?;
    Ok(())
}

/// Accuracy and per-class confusion counts over labeled windows
/// (`confusion[truth][predicted]`).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub num_windows: usize,
}

pub fn evaluate(
    model: &SequenceModel,
    windows: &[TimeSeriesWindow],
) -> Result<EvalReport, ModelError> {
    let k = model.config().num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, w) in windows.iter().enumerate() {
        let label = w.label.ok_or(ModelError::UnlabeledWindow(i))?;
        let predicted = model.predicted_class(w)?;
        confusion[label][predicted] += 1;
        if predicted == label {
            correct += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(ModelError::EmptyDataset);
    }
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        confusion,
        num_windows: total,
    })
}
