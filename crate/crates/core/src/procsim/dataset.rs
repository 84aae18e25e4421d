//! Runs, labeled windows and on-disk dataset layout.
//!
//! A dataset directory holds a `manifest.json` (schema, class labels,
//! windowing parameters, standardization stats, per-run metadata) next to
//! one header-less numeric CSV per run (`run_000.csv`, ...), one row per
//! timestep.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChannelStats, ModelError, TimeSeriesWindow};

use super::plant::{simulate, FaultScenario, ProcessSpec, RunOutput, SimError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("window_len {window_len} exceeds run length {run_len}")]
    WindowTooLong { window_len: usize, run_len: usize },
    #[error("stride {stride} is invalid for run length {run_len} (must be 1..={run_len})")]
    InvalidStride { stride: usize, run_len: usize },
    #[error("no usable windows: every candidate straddles a fault onset or runs are too short")]
    NoUsableWindows,
    #[error("dataset has no runs")]
    Empty,
    #[error("run {run} has {actual} columns, dataset schema has {expected}")]
    SchemaMismatch {
        run: usize,
        expected: usize,
        actual: usize,
    },
    #[error("run {run} references unknown class {label}; {num_classes} classes declared")]
    UnknownClass {
        run: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: row {row}, column {col}: cannot parse '{value}' as a number")]
    BadCell {
        path: String,
        row: usize,
        col: usize,
        value: String,
    },
    #[error("{path}: expected one of {expected:?} data columns (plus optional label/onset columns), found {found}")]
    ColumnCount {
        path: String,
        found: usize,
        expected: Vec<usize>,
    },
    #[error("{path}: label column mixes fault classes {first} and {second}")]
    MixedLabels {
        path: String,
        first: usize,
        second: usize,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// One recorded run: a `[num_samples × M]` matrix plus its scenario label.
#[derive(Debug, Clone)]
pub struct Run {
    pub values: Vec<f64>,
    pub num_samples: usize,
    /// Fault class id (index into `Dataset::class_labels`); `None` for a
    /// pure normal run.
    pub label: Option<usize>,
    pub onset_index: Option<usize>,
}

/// Immutable collection of runs sharing one channel schema, with the
/// windowing parameters used to derive labeled classifier windows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub class_labels: Vec<String>,
    pub runs: Vec<Run>,
    pub window_len: usize,
    pub stride: usize,
    pub stats: ChannelStats,
}

impl Dataset {
    pub fn num_features(&self) -> usize {
        self.schema.len()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.runs.is_empty() {
            return Err(DatasetError::Empty);
        }
        let m = self.schema.len();
        for (i, run) in self.runs.iter().enumerate() {
            if run.num_samples * m != run.values.len() {
                return Err(DatasetError::SchemaMismatch {
                    run: i,
                    expected: m,
                    actual: if run.num_samples > 0 {
                        run.values.len() / run.num_samples
                    } else {
                        0
                    },
                });
            }
            if let Some(label) = run.label {
                if label >= self.class_labels.len() {
                    return Err(DatasetError::UnknownClass {
                        run: i,
                        label,
                        num_classes: self.class_labels.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Derive labeled windows from every run.
    ///
    /// For a faulted run, windows entirely before the onset are labeled
    /// normal (class 0), windows entirely at-or-after the onset carry the
    /// fault class, and windows straddling the onset are discarded. Runs
    /// without an onset label every window with the run's class (or normal).
    pub fn windows(&self) -> Result<Vec<TimeSeriesWindow>, DatasetError> {
        self.windows_with_offsets()
            .map(|ws| ws.into_iter().map(|(w, _)| w).collect())
    }

    /// Same as [`Dataset::windows`], each window paired with its start
    /// offset relative to the run's onset (`None` when the run has none).
    pub fn windows_with_offsets(
        &self,
    ) -> Result<Vec<(TimeSeriesWindow, Option<usize>)>, DatasetError> {
        self.validate()?;
        let m = self.schema.len();
        let w = self.window_len;
        let mut out = Vec::new();
        for run in &self.runs {
            if w > run.num_samples {
                return Err(DatasetError::WindowTooLong {
                    window_len: w,
                    run_len: run.num_samples,
                });
            }
            if self.stride == 0 || self.stride > run.num_samples {
                return Err(DatasetError::InvalidStride {
                    stride: self.stride,
                    run_len: run.num_samples,
                });
            }
            let mut start = 0;
            while start + w <= run.num_samples {
                let (label, offset) = match run.onset_index {
                    Some(onset) => {
                        if start + w <= onset {
                            (Some(0), None)
                        } else if start >= onset {
                            (run.label.or(Some(0)), Some(start - onset))
                        } else {
                            (None, None) // straddles the onset: discard
                        }
                    }
                    None => (run.label.or(Some(0)), None),
                };
                if let Some(label) = label {
                    let values = run.values[start * m..(start + w) * m].to_vec();
                    let mut window = TimeSeriesWindow::new(values, w, m)?.with_label(label);
                    window.onset_index = run.onset_index;
                    out.push((window, offset));
                }
                start += self.stride;
            }
        }
        if out.is_empty() {
            return Err(DatasetError::NoUsableWindows);
        }
        Ok(out)
    }

    /// Per-channel mean/std over normal-class windows, the standardization
    /// basis for training and attribution. Falls back to all windows when
    /// no normal windows exist (logged).
    pub fn compute_stats(&mut self) -> Result<(), DatasetError> {
        let windows = self.windows()?;
        let normal: Vec<&TimeSeriesWindow> =
            windows.iter().filter(|w| w.label == Some(0)).collect();
        let basis = if normal.is_empty() {
            log::warn!("dataset has no normal windows; standardizing over all windows");
            windows.iter().collect()
        } else {
            normal
        };
        self.stats = ChannelStats::from_windows(&basis).ok_or(DatasetError::NoUsableWindows)?;
        Ok(())
    }

    pub fn training_set(&self) -> Result<crate::model::TrainingSet, DatasetError> {
        Ok(crate::model::TrainingSet {
            windows: self.windows()?,
            class_labels: self.class_labels.clone(),
            stats: self.stats.clone(),
        })
    }

    /// Deterministic stratified split: every `holdout_every`-th window of
    /// each class goes to the holdout set.
    pub fn split_windows(
        windows: Vec<TimeSeriesWindow>,
        holdout_every: usize,
    ) -> (Vec<TimeSeriesWindow>, Vec<TimeSeriesWindow>) {
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        let mut per_class_count: std::collections::BTreeMap<usize, usize> = Default::default();
        for w in windows {
            let class = w.label.unwrap_or(0);
            let seen = per_class_count.entry(class).or_insert(0);
            if holdout_every > 0 && *seen % holdout_every == holdout_every - 1 {
                holdout.push(w);
            } else {
                train.push(w);
            }
            *seen += 1;
        }
        (train, holdout)
    }

    pub fn save_to_dir(&self, dir: &Path) -> Result<(), DatasetError> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
            path: dir.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut run_entries = Vec::with_capacity(self.runs.len());
        for (i, run) in self.runs.iter().enumerate() {
            let file = format!("run_{i:03}.csv");
            let path = dir.join(&file);
            let m = self.schema.len();
            let mut text = String::new();
            for row in run.values.chunks(m) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| DatasetError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            run_entries.push(RunMeta {
                file,
                num_samples: run.num_samples,
                label: run.label,
                onset_index: run.onset_index,
            });
        }
        let manifest = DatasetManifest {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            schema: self.schema.clone(),
            class_labels: self.class_labels.clone(),
            window_len: self.window_len,
            stride: self.stride,
            stats: self.stats.clone(),
            runs: run_entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;
        fs::write(&path, text).map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load_from_dir(dir: &Path) -> Result<Self, DatasetError> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| DatasetError::Io {
            path: manifest_path.display().to_string(),
            reason: e.to_string(),
        })?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!(
                "unsupported manifest {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut runs = Vec::with_capacity(manifest.runs.len());
        for meta in &manifest.runs {
            let path = dir.join(&meta.file);
            let values =
                read_numeric_csv(&path, manifest.schema.len(), meta.num_samples)?;
            runs.push(Run {
                values,
                num_samples: meta.num_samples,
                label: meta.label,
                onset_index: meta.onset_index,
            });
        }
        let dataset = Dataset {
            schema: manifest.schema,
            class_labels: manifest.class_labels,
            runs,
            window_len: manifest.window_len,
            stride: manifest.stride,
            stats: manifest.stats,
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

const MANIFEST_FORMAT: &str = "faultlens-dataset";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RunMeta {
    file: String,
    num_samples: usize,
    label: Option<usize>,
    onset_index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    version: u32,
    schema: Vec<String>,
    class_labels: Vec<String>,
    window_len: usize,
    stride: usize,
    stats: ChannelStats,
    runs: Vec<RunMeta>,
}

fn read_numeric_csv(
    path: &Path,
    expected_cols: usize,
    expected_rows: usize,
) -> Result<Vec<f64>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut values = Vec::with_capacity(expected_rows * expected_cols);
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut cols = 0;
        for (c, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DatasetError::BadCell {
                path: path.display().to_string(),
                row: r + 1,
                col: c + 1,
                value: cell.trim().to_string(),
            })?;
            values.push(v);
            cols += 1;
        }
        if cols != expected_cols {
            return Err(DatasetError::ColumnCount {
                path: path.display().to_string(),
                found: cols,
                expected: vec![expected_cols],
            });
        }
        rows += 1;
    }
    if rows != expected_rows {
        return Err(DatasetError::Manifest(format!(
            "{}: manifest declares {expected_rows} samples, file has {rows}",
            path.display()
        )));
    }
    Ok(values)
}

/// Simulate `runs_per_scenario` runs per fault scenario and window them.
///
/// Class 0 is normal operation; scenario classes follow in the given order.
/// Normal windows come from pre-onset segments of the faulted runs. The
/// run seed is derived from `base_seed`, the scenario index and the run
/// index, so datasets are reproducible end to end.
pub fn generate_dataset(
    spec: &ProcessSpec,
    scenarios: &[FaultScenario],
    runs_per_scenario: usize,
    window_len: usize,
    stride: usize,
    base_seed: u64,
) -> Result<Dataset, DatasetError> {
    if window_len > spec.duration {
        return Err(DatasetError::WindowTooLong {
            window_len,
            run_len: spec.duration,
        });
    }
    if stride == 0 || stride > spec.duration {
        return Err(DatasetError::InvalidStride {
            stride,
            run_len: spec.duration,
        });
    }

    let mut class_labels = vec!["normal".to_string()];
    class_labels.extend(scenarios.iter().map(|s| s.id.clone()));

    let mut runs = Vec::new();
    for (si, scenario) in scenarios.iter().enumerate() {
        for r in 0..runs_per_scenario {
            let run_seed = derive_run_seed(base_seed, si, r);
            let mut sc = scenario.clone();
            sc.rng_seed = scenario.rng_seed.wrapping_add(r as u64);
            let out: RunOutput = simulate(spec, Some(&sc), run_seed)?;
            runs.push(Run {
                num_samples: out.num_samples(),
                values: out.measured,
                label: Some(si + 1),
                onset_index: out.onset_index,
            });
        }
    }

    let mut dataset = Dataset {
        schema: super::plant::sim_schema(),
        class_labels,
        runs,
        window_len,
        stride,
        stats: ChannelStats::identity(super::plant::sim_schema().len()),
    };
    dataset.compute_stats()?;
    Ok(dataset)
}

fn derive_run_seed(base: u64, scenario_idx: usize, run_idx: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((scenario_idx as u64) << 32)
        .wrapping_add(run_idx as u64)
}
