//! LSTM sequence classifier over windows of process variables.
//!
//! A [`SequenceModel`] owns the trained parameters, the class labels and the
//! per-channel standardization statistics; the unrolled computation graph is
//! rebuilt from the config on construction and on load. Windows enter in raw
//! sensor units and are z-scored inside the model, so gradients reported by
//! [`SequenceModel::input_gradient`] are with respect to the raw values.
//!
//! Attribution targets the pre-softmax logit of a class, not the
//! probability, which keeps completeness sums interpretable away from
//! softmax saturation.

mod lstm;
mod persist;
mod train;

pub use train::{evaluate, train, EvalReport, TrainLog};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Bindings, GraphError, Tensor, TensorError};
use lstm::LstmGraph;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("window is {actual_rows}x{actual_cols}, model expects {expected_rows}x{expected_cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("class {class} out of range, model has {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("training dataset contains a single class ({0}); at least two are required")]
    SingleClass(usize),
    #[error("window {0} has no label")]
    UnlabeledWindow(usize),
    #[error("window {window} has label {label}, dataset declares {num_classes} classes")]
    LabelOutOfRange {
        window: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (last finite loss {last_loss})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        last_loss: f64,
    },
    #[error("standardization stats cover {stats} channels, config has {expected}")]
    StatsMismatch { stats: usize, expected: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model file: {0}")]
    Persist(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Number of sensor channels per timestep (`M`).
    pub num_features: usize,
    /// Timesteps per classifier input window.
    pub window_len: usize,
    pub hidden_size: usize,
    /// Normal operation plus fault classes; class 0 is reserved for normal.
    pub num_classes: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Decoupled L2 weight decay on the weight matrices (not biases).
    /// Keeps trained logits from sharpening without bound on separable
    /// data, which matters for path-integral attribution downstream.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Std of Gaussian jitter added to standardized inputs during
    /// training (drawn from the training stream, so still seed
    /// deterministic). Flattens the learned surface at the jitter scale;
    /// path-integral attributions converge at far fewer quadrature steps
    /// on jitter-trained models.
    #[serde(default = "default_input_jitter")]
    pub input_jitter: f64,
    /// Max-norm constraint: after each update, every per-unit weight
    /// column of the gate and head matrices is clipped to this L2 norm
    /// (0 disables). Bounds the network's steepness, which bounds how
    /// sharp the logit can be along an attribution path.
    #[serde(default = "default_max_col_norm")]
    pub max_col_norm: f64,
    pub rng_seed: u64,
}

pub fn default_weight_decay() -> f64 {
    1e-3
}

pub fn default_input_jitter() -> f64 {
    0.
}

pub fn default_max_col_norm() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_features < 1 {
            return Err(ModelError::Config("num_features must be >= 1".into()));
        }
        if self.window_len < 2 {
            return Err(ModelError::Config("window_len must be >= 2".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config("num_classes must be >= 2".into()));
        }
        if self.hidden_size < 1 {
            return Err(ModelError::Config("hidden_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ModelError::Config("weight_decay must be >= 0".into()));
        }
        if !(self.input_jitter >= 0.0 && self.input_jitter.is_finite()) {
            return Err(ModelError::Config("input_jitter must be >= 0".into()));
        }
        if !(self.max_col_norm >= 0.0 && self.max_col_norm.is_finite()) {
            return Err(ModelError::Config("max_col_norm must be >= 0".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(ModelError::Config(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One fixed-length slice of multivariate process measurements, the
/// classifier input. Values are raw (unstandardized) sensor units, stored
/// row-major `[window_len × num_features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesWindow {
    values: Vec<f64>,
    window_len: usize,
    num_features: usize,
    pub label: Option<usize>,
    /// Sample index within the source run where the fault was introduced.
    pub onset_index: Option<usize>,
}

impl TimeSeriesWindow {
    pub fn new(
        values: Vec<f64>,
        window_len: usize,
        num_features: usize,
    ) -> Result<Self, ModelError> {
        if values.len() != window_len * num_features {
            return Err(ModelError::DimensionMismatch {
                expected_rows: window_len,
                expected_cols: num_features,
                actual_rows: if num_features > 0 { values.len() / num_features } else { 0 },
                actual_cols: num_features,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Config(
                "window contains missing or non-finite entries".into(),
            ));
        }
        Ok(Self {
            values,
            window_len,
            num_features,
            label: None,
            onset_index: None,
        })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn at(&self, t: usize, channel: usize) -> f64 {
        self.values[t * self.num_features + channel]
    }
}

/// Per-channel z-score statistics taken from normal operation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channels with (near-)zero variance standardize against this floor
/// instead of dividing by zero.
pub const STD_FLOOR: f64 = 1e-9;

impl ChannelStats {
    pub fn identity(num_features: usize) -> Self {
        Self {
            mean: vec![0.0; num_features],
            std: vec![1.0; num_features],
        }
    }

    /// Population mean/std per channel over a set of equally-shaped windows.
    pub fn from_windows(windows: &[&TimeSeriesWindow]) -> Option<Self> {
        let first = windows.first()?;
        let m = first.num_features();
        let mut mean = vec![0.0; m];
        let mut count = 0usize;
        for w in windows {
            for t in 0..w.window_len() {
                for c in 0..m {
                    mean[c] += w.at(t, c);
                }
            }
            count += w.window_len();
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        let mut var = vec![0.0; m];
        for w in windows {
            for t in 0..w.window_len() {
                for c in 0..m {
                    let d = w.at(t, c) - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Some(Self { mean, std })
    }

    pub fn standardize(&self, raw: &[f64], num_features: usize) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i % num_features;
                (v - self.mean[c]) / self.std[c]
            })
            .collect()
    }
}

/// Labeled windows plus the metadata a classifier needs: ordered class
/// labels (index = class id, 0 = normal) and standardization statistics.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub windows: Vec<TimeSeriesWindow>,
    pub class_labels: Vec<String>,
    pub stats: ChannelStats,
}

/// Trained LSTM classifier. Immutable once built; `predict` and
/// `input_gradient` take per-call workspaces and are safe to call
/// concurrently.
#[derive(Debug)]
pub struct SequenceModel {
    config: ModelConfig,
    class_labels: Vec<String>,
    stats: ChannelStats,
    params: LstmParams,
    graph: LstmGraph,
}

/// Gate weights fused as `[i | f | g | o]` blocks of `hidden_size` columns.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmParams {
    pub w_x: Tensor,   // [num_features × 4H]
    pub w_h: Tensor,   // [H × 4H]
    pub b: Tensor,     // [4H]
    pub w_out: Tensor, // [H × num_classes]
    pub b_out: Tensor, // [num_classes]
}

impl SequenceModel {
    pub(crate) fn from_parts(
        config: ModelConfig,
        class_labels: Vec<String>,
        stats: ChannelStats,
        params: LstmParams,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if stats.mean.len() != config.num_features || stats.std.len() != config.num_features {
            return Err(ModelError::StatsMismatch {
                stats: stats.mean.len(),
                expected: config.num_features,
            });
        }
        if class_labels.len() != config.num_classes {
            return Err(ModelError::Config(format!(
                "{} class labels for {} classes",
                class_labels.len(),
                config.num_classes
            )));
        }
        let graph = LstmGraph::build(&config)?;
        graph.check_params(&params, &config)?;
        Ok(Self {
            config,
            class_labels,
            stats,
            params,
            graph,
        })
    }

    /// Freshly initialized (untrained) model; useful for smoke paths and
    /// attribution plumbing tests. `zero_output` zeroes the dense head so
    /// predictions are exactly uniform.
    pub fn initialized(
        config: ModelConfig,
        class_labels: Vec<String>,
        stats: ChannelStats,
        zero_output: bool,
    ) -> Result<Self, ModelError> {
        let mut params = lstm::init_params(&config);
        if zero_output {
            params.w_out = Tensor::zeros(&[config.hidden_size, config.num_classes]);
            params.b_out = Tensor::zeros(&[config.num_classes]);
        }
        Self::from_parts(config, class_labels, stats, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    pub(crate) fn params(&self) -> &LstmParams {
        &self.params
    }

    fn check_dims(&self, window_len: usize, num_features: usize) -> Result<(), ModelError> {
        if window_len != self.config.window_len || num_features != self.config.num_features {
            return Err(ModelError::DimensionMismatch {
                expected_rows: self.config.window_len,
                expected_cols: self.config.num_features,
                actual_rows: window_len,
                actual_cols: num_features,
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<(), ModelError> {
        if class >= self.config.num_classes {
            return Err(ModelError::InvalidClass {
                class,
                num_classes: self.config.num_classes,
            });
        }
        Ok(())
    }

    fn bind(&self, standardized: Vec<f64>) -> Result<Bindings<'_>, ModelError> {
        let mut bindings = Bindings::new(&self.graph.graph);
        let input = Tensor::new(
            vec![self.config.window_len, self.config.num_features],
            standardized,
        )?;
        bindings.set(self.graph.input, input)?;
        bindings.set(self.graph.h0, Tensor::zeros(&[1, self.config.hidden_size]))?;
        bindings.set(self.graph.c0, Tensor::zeros(&[1, self.config.hidden_size]))?;
        bindings.set(self.graph.w_x, self.params.w_x.clone())?;
        bindings.set(self.graph.w_h, self.params.w_h.clone())?;
        bindings.set(self.graph.b, self.params.b.clone())?;
        bindings.set(self.graph.w_out, self.params.w_out.clone())?;
        bindings.set(self.graph.b_out, self.params.b_out.clone())?;
        Ok(bindings)
    }

    /// Class probabilities for one window (softmax over the logits).
    pub fn predict(&self, window: &TimeSeriesWindow) -> Result<Vec<f64>, ModelError> {
        self.check_dims(window.window_len(), window.num_features())?;
        let std = self.stats.standardize(window.values(), self.config.num_features);
        let bindings = self.bind(std)?;
        let eval = self.graph.graph.forward(&bindings)?;
        Ok(eval.value(self.graph.probs).data().to_vec())
    }

    pub fn predicted_class(&self, window: &TimeSeriesWindow) -> Result<usize, ModelError> {
        let probs = self.predict(window)?;
        Ok(argmax(&probs))
    }

    /// Pre-softmax logits for raw window values laid out
    /// `[window_len × num_features]` row-major.
    pub fn logits_for_values(&self, raw: &[f64]) -> Result<Vec<f64>, ModelError> {
        if raw.len() != self.config.window_len * self.config.num_features {
            return Err(ModelError::DimensionMismatch {
                expected_rows: self.config.window_len,
                expected_cols: self.config.num_features,
                actual_rows: raw.len() / self.config.num_features.max(1),
                actual_cols: self.config.num_features,
            });
        }
        let std = self.stats.standardize(raw, self.config.num_features);
        let bindings = self.bind(std)?;
        let eval = self.graph.graph.forward(&bindings)?;
        Ok(eval.value(self.graph.logits).data().to_vec())
    }

    /// The pre-softmax logit of `class` for raw window values.
    pub fn logit_for_values(&self, raw: &[f64], class: usize) -> Result<f64, ModelError> {
        self.check_class(class)?;
        Ok(self.logits_for_values(raw)?[class])
    }

    /// Gradient of the `target_class` pre-softmax logit with respect to
    /// every raw input entry, `[window_len × num_features]` row-major.
    pub fn input_gradient(
        &self,
        window: &TimeSeriesWindow,
        target_class: usize,
    ) -> Result<Vec<f64>, ModelError> {
        self.input_gradient_for_values(window.values(), target_class)
    }

    pub fn input_gradient_for_values(
        &self,
        raw: &[f64],
        target_class: usize,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_class(target_class)?;
        if raw.len() != self.config.window_len * self.config.num_features {
            return Err(ModelError::DimensionMismatch {
                expected_rows: self.config.window_len,
                expected_cols: self.config.num_features,
                actual_rows: raw.len() / self.config.num_features.max(1),
                actual_cols: self.config.num_features,
            });
        }
        let std = self.stats.standardize(raw, self.config.num_features);
        let bindings = self.bind(std)?;
        let eval = self.graph.graph.forward(&bindings)?;
        let grads = self.graph.graph.backward(
            &eval,
            self.graph.class_logits[target_class],
            &[self.graph.input],
        )?;
        // Chain through the affine standardization: d/d_raw = d/d_std / σ.
        let m = self.config.num_features;
        let grad = grads
            .expect(self.graph.input)
            .data()
            .iter()
            .enumerate()
            .map(|(i, g)| g / self.stats.std[i % m])
            .collect();
        Ok(grad)
    }

    pub fn save_to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        persist::to_bytes(self)
    }

    pub fn load_from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        persist::from_bytes(bytes)
    }

    pub fn save_to_path(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let bytes = self.save_to_bytes()?;
        std::fs::write(path, bytes)
            .map_err(|e| ModelError::Persist(format!("write {}: {e}", path.display())))
    }

    pub fn load_from_path(path: &std::path::Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ModelError::Persist(format!("read {}: {e}", path.display())))?;
        Self::load_from_bytes(&bytes)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
