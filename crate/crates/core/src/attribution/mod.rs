//! Per-feature attribution of one model decision.
//!
//! Two methods over sensor-channel features of a time-series window:
//! integrated gradients (path integral of input gradients from a baseline
//! to the input, midpoint Riemann rule) and Shapley values (exact subset
//! enumeration for small feature counts, antithetic permutation sampling
//! otherwise). A feature is one sensor channel across all timesteps: the
//! reported score vector has one entry per channel, and coalitions
//! replace an absent channel with baseline values at every timestep.
//!
//! Both methods ship their own self-check diagnostics: the IG completeness
//! gap `|Σ attributions − (F(x) − F(x′))|` and the Shapley efficiency gap
//! `|Σφ − (f(x) − f(x′))|`.

mod ig;
mod shapley;
pub mod surrogate;

pub use ig::integrated_gradients;
pub use shapley::{shapley_exact, shapley_sampled, Coalition, EXACT_FEATURE_LIMIT};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, SequenceModel, TimeSeriesWindow};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("window is {actual_rows}x{actual_cols}, target expects {expected_rows}x{expected_cols}")]
    DimensionMismatch {
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },
    #[error("class {class} out of range for a target with {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("integrated gradients needs steps >= 1")]
    ZeroSteps,
    #[error("sampled Shapley needs num_permutations >= 1")]
    ZeroPermutations,
    #[error(
        "exact Shapley enumerates 2^M coalitions and refuses M = {m} > {limit}; \
         use shapley_sampled for wide schemas"
    )]
    TooManyFeatures { m: usize, limit: usize },
    #[error("no normal-class windows to build a normal_mean baseline from")]
    NoNormalWindows,
    #[error("non-finite {what} during attribution")]
    NonFinite { what: String },
}

/// Anything attribution can explain: a value function `f` (the pre-softmax
/// logit of a class at raw window values, `[window_len × num_features]`
/// row-major) plus, for gradient methods, `∂f/∂x`.
pub trait AttributionTarget {
    fn window_len(&self) -> usize;
    fn num_features(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn value(&self, window_values: &[f64], class: usize) -> Result<f64, AttributionError>;
    fn gradient(&self, window_values: &[f64], class: usize)
        -> Result<Vec<f64>, AttributionError>;
}

impl AttributionTarget for SequenceModel {
    fn window_len(&self) -> usize {
        self.config().window_len
    }

    fn num_features(&self) -> usize {
        self.config().num_features
    }

    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn value(&self, window_values: &[f64], class: usize) -> Result<f64, AttributionError> {
        Ok(self.logit_for_values(window_values, class)?)
    }

    fn gradient(
        &self,
        window_values: &[f64],
        class: usize,
    ) -> Result<Vec<f64>, AttributionError> {
        Ok(self.input_gradient_for_values(window_values, class)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Zeros,
    NormalMean,
    Custom,
}

/// The reference input `x′` representing feature absence: the IG path start
/// and the fill-in for absent coalition channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    values: Vec<f64>,
    window_len: usize,
    num_features: usize,
    pub provenance: BaselineKind,
}

impl Baseline {
    pub fn zeros(window_len: usize, num_features: usize) -> Self {
        Self {
            values: vec![0.0; window_len * num_features],
            window_len,
            num_features,
            provenance: BaselineKind::Zeros,
        }
    }

    /// Per-channel mean over normal-class (label 0) windows, tiled over
    /// timesteps.
    pub fn normal_mean(
        windows: &[TimeSeriesWindow],
        window_len: usize,
        num_features: usize,
    ) -> Result<Self, AttributionError> {
        let normal: Vec<&TimeSeriesWindow> = windows
            .iter()
            .filter(|w| w.label == Some(0))
            .collect();
        if normal.is_empty() {
            return Err(AttributionError::NoNormalWindows);
        }
        let mut mean = vec![0.0; num_features];
        let mut count = 0usize;
        for w in &normal {
            for t in 0..w.window_len() {
                for c in 0..num_features {
                    mean[c] += w.at(t, c);
                }
            }
            count += w.window_len();
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        let mut values = Vec::with_capacity(window_len * num_features);
        for _ in 0..window_len {
            values.extend_from_slice(&mean);
        }
        Ok(Self {
            values,
            window_len,
            num_features,
            provenance: BaselineKind::NormalMean,
        })
    }

    pub fn custom(
        values: Vec<f64>,
        window_len: usize,
        num_features: usize,
    ) -> Result<Self, AttributionError> {
        if values.len() != window_len * num_features {
            return Err(AttributionError::DimensionMismatch {
                expected_rows: window_len,
                expected_cols: num_features,
                actual_rows: if num_features > 0 { values.len() / num_features } else { 0 },
                actual_cols: num_features,
            });
        }
        Ok(Self {
            values,
            window_len,
            num_features,
            provenance: BaselineKind::Custom,
        })
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
}

/// Build a baseline of the given kind from labeled windows.
pub fn make_baseline(
    kind: BaselineKind,
    windows: &[TimeSeriesWindow],
    window_len: usize,
    num_features: usize,
    custom: Option<Vec<f64>>,
) -> Result<Baseline, AttributionError> {
    match kind {
        BaselineKind::Zeros => Ok(Baseline::zeros(window_len, num_features)),
        BaselineKind::NormalMean => Baseline::normal_mean(windows, window_len, num_features),
        BaselineKind::Custom => {
            Baseline::custom(custom.unwrap_or_default(), window_len, num_features)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    Ig,
    ShapExact,
    ShapSampled,
}

impl AttributionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttributionMethod::Ig => "ig",
            AttributionMethod::ShapExact => "shap_exact",
            AttributionMethod::ShapSampled => "shap_sampled",
        }
    }

    /// The method family for cross-method comparison (exact and sampled
    /// Shapley estimate the same quantity).
    pub fn family(&self) -> &'static str {
        match self {
            AttributionMethod::Ig => "ig",
            _ => "shap",
        }
    }
}

/// Self-check numbers carried alongside scores.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `|Σ attributions − (F(x) − F(x′))|`, IG only.
    pub completeness_gap: Option<f64>,
    /// `|Σφ − (f(x) − f(x′))|`, Shapley only.
    pub efficiency_gap: Option<f64>,
    /// Per-feature standard error of the permutation estimate.
    pub stderr: Option<Vec<f64>>,
    pub value_at_input: f64,
    pub value_at_baseline: f64,
}

/// Per-channel importance scores for one window and one target class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionMap {
    pub method: AttributionMethod,
    pub target_class: usize,
    /// One score per sensor channel (summed over timesteps for IG).
    pub scores: Vec<f64>,
    /// `[window_len × num_features]` row-major per-entry attributions
    /// (IG only).
    pub per_timestep: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
    /// Set by the pipeline when the window came from a labeled run.
    pub fault_class: Option<String>,
    /// Window start minus fault onset, when known.
    pub window_offset: Option<usize>,
    /// Timesteps in the attributed window.
    pub window_len: usize,
}

impl AttributionMap {
    /// CSV form: one row per feature with the raw score, the per-timestep
    /// sum check (equal to the score for IG, blank for Shapley) and the
    /// method diagnostics repeated on each row.
    pub fn to_csv(&self, schema: &[String]) -> String {
        let mut out = String::from(
            "feature,method,target_class,score,timestep_sum_check,completeness_gap,efficiency_gap,stderr\n",
        );
        for (i, score) in self.scores.iter().enumerate() {
            let name = schema.get(i).cloned().unwrap_or_else(|| format!("ch_{i}"));
            let ts_sum = match &self.per_timestep {
                Some(pt) => {
                    let m = self.scores.len();
                    let sum: f64 = pt.iter().skip(i).step_by(m).sum();
                    format!("{sum:?}")
                }
                None => String::new(),
            };
            let gap = |v: Option<f64>| v.map(|g| format!("{g:?}")).unwrap_or_default();
            let se = self
                .diagnostics
                .stderr
                .as_ref()
                .map(|s| format!("{:?}", s[i]))
                .unwrap_or_default();
            out.push_str(&format!(
                "{name},{},{},{score:?},{ts_sum},{},{},{se}\n",
                self.method.as_str(),
                self.target_class,
                gap(self.diagnostics.completeness_gap),
                gap(self.diagnostics.efficiency_gap),
            ));
        }
        out
    }
}

pub(crate) fn check_window_dims(
    target: &impl AttributionTarget,
    window: &TimeSeriesWindow,
    baseline: &Baseline,
) -> Result<(), AttributionError> {
    let (t_len, m) = (target.window_len(), target.num_features());
    if window.window_len() != t_len || window.num_features() != m {
        return Err(AttributionError::DimensionMismatch {
            expected_rows: t_len,
            expected_cols: m,
            actual_rows: window.window_len(),
            actual_cols: window.num_features(),
        });
    }
    if baseline.window_len() != t_len || baseline.num_features() != m {
        return Err(AttributionError::DimensionMismatch {
            expected_rows: t_len,
            expected_cols: m,
            actual_rows: baseline.window_len(),
            actual_cols: baseline.num_features(),
        });
    }
    Ok(())
}

pub(crate) fn check_class(
    target: &impl AttributionTarget,
    class: usize,
) -> Result<(), AttributionError> {
    if class >= target.num_classes() {
        return Err(AttributionError::InvalidClass {
            class,
            num_classes: target.num_classes(),
        });
    }
    Ok(())
}
