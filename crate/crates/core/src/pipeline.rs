//! The experiment pipeline behind the CLI: a declarative TOML config plus
//! one function per stage (simulate/ingest → train → attribute → analyze →
//! report → repro), with persisted intermediate artifacts and a content
//! hash manifest per stage.
//!
//! Every stage is deterministic: all randomness flows from the single root
//! `seed`, split per stage (and per window, for sampled attribution) by
//! hashing the stage name into the seed. Re-running a stage with identical
//! inputs rewrites identical bytes.
//!
//! Artifact layout under the output directory:
//!
//! ```text
//! out/
//!   dataset/            manifest.json + run_###.csv
//!   model.json          trained classifier container
//!   train_metrics.json  epoch losses, holdout accuracy, confusion
//!   attributions/       maps.json + one CSV per (class, method, window)
//!   analysis/           results.json + normalized_scores.csv
//!   report/             heatmap.svg, table_<class>.csv, trace_*.svg
//!   manifest.json       stage → file → sha256
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    self, AggregatedScores, AgreementResult, AnalysisError, LocalizationResult, NormalizedScores,
    SubsystemMap,
};
use crate::attribution::{
    integrated_gradients, shapley_exact, shapley_sampled, AttributionError, AttributionMap,
    Baseline, BaselineKind, EXACT_FEATURE_LIMIT,
};
use crate::model::{
    evaluate, train, EvalReport, ModelConfig, SequenceModel, TimeSeriesWindow, TrainLog,
};
use crate::procsim::{
    generate_dataset, ingest_tep_csv, merge_datasets, simulate, Dataset, DatasetError,
    FaultArchetype, FaultScenario, ProcessSpec, SimError, TepSchema,
};
use crate::report::{
    emit_heatmap, emit_score_table, emit_variable_plot, HeatmapData, ReportError, ScoreTable,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing artifact {path}: run `{produced_by}` first")]
    MissingArtifact { path: PathBuf, produced_by: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

// ── Experiment config ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub attribution: AttributionSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Simulator,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    #[serde(default = "defaults::duration")]
    pub duration: usize,
    #[serde(default = "defaults::onset")]
    pub onset: usize,
    #[serde(default = "defaults::runs_per_scenario")]
    pub runs_per_scenario: usize,
    #[serde(default = "defaults::window_len")]
    pub window_len: usize,
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    /// Simulator fault set; defaults to the built-in four-archetype set.
    #[serde(default)]
    pub scenarios: Option<Vec<ScenarioSection>>,
    /// CSV source: one file per run.
    #[serde(default)]
    pub csv_paths: Vec<PathBuf>,
    #[serde(default = "defaults::csv_schema")]
    pub csv_schema: TepSchema,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: String,
    pub archetype: FaultArchetype,
    pub target: String,
    pub magnitude: f64,
    #[serde(default)]
    pub onset: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub input_jitter: f64,
    pub max_col_norm: f64,
    /// Every n-th window of each class is held out for evaluation.
    pub holdout_every: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            epochs: 15,
            learning_rate: 0.02,
            batch_size: 16,
            weight_decay: crate::model::default_weight_decay(),
            input_jitter: crate::model::default_input_jitter(),
            max_col_norm: crate::model::default_max_col_norm(),
            holdout_every: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionSection {
    /// Any of "ig", "shap".
    pub methods: Vec<String>,
    pub baseline: BaselineKind,
    pub ig_steps: usize,
    /// Permutations for sampled Shapley (used when the schema is wider
    /// than the exact-enumeration limit).
    pub permutations: usize,
    /// Post-onset windows attributed per fault class.
    pub max_windows_per_class: usize,
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self {
            methods: vec!["ig".into(), "shap".into()],
            baseline: BaselineKind::NormalMean,
            ig_steps: 64,
            permutations: 1000,
            max_windows_per_class: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Post-onset samples considered (the evaluation horizon).
    pub horizon: usize,
    pub top_k: usize,
    /// "simulator", "tep", or a path to a subsystem-map TOML.
    pub subsystem_map: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            horizon: 100,
            top_k: 3,
            subsystem_map: "simulator".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Features whose max normalized score stays below this are omitted
    /// from the heatmap.
    pub heatmap_threshold: f64,
    pub table_decimals: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            heatmap_threshold: 0.5,
            table_decimals: 2,
        }
    }
}

mod defaults {
    use crate::procsim::TepSchema;

    pub fn duration() -> usize {
        500
    }
    pub fn onset() -> usize {
        200
    }
    pub fn runs_per_scenario() -> usize {
        8
    }
    pub fn window_len() -> usize {
        20
    }
    pub fn stride() -> usize {
        10
    }
    pub fn csv_schema() -> TepSchema {
        TepSchema::Xmv11
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        // CSV paths resolve relative to the config file.
        if let Some(dir) = path.parent() {
            for p in &mut cfg.dataset.csv_paths {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.dataset.source == DatasetSource::Csv {
            if self.dataset.csv_paths.is_empty() {
                return Err(PipelineError::Config(
                    "csv source needs at least one entry in dataset.csv_paths".into(),
                ));
            }
            for p in &self.dataset.csv_paths {
                if !p.exists() {
                    return Err(PipelineError::Config(format!(
                        "referenced file does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        if self.attribution.methods.is_empty() {
            return Err(PipelineError::Config("attribution.methods is empty".into()));
        }
        for m in &self.attribution.methods {
            if m != "ig" && m != "shap" {
                return Err(PipelineError::Config(format!(
                    "unknown attribution method '{m}' (expected 'ig' or 'shap')"
                )));
            }
        }
        Ok(())
    }

    /// The default experiment shipped with the CLI: built-in simulator,
    /// four fault classes plus normal.
    pub fn default_simulator(seed: u64) -> Self {
        Self {
            seed,
            dataset: DatasetSection {
                source: DatasetSource::Simulator,
                duration: defaults::duration(),
                onset: defaults::onset(),
                runs_per_scenario: defaults::runs_per_scenario(),
                window_len: defaults::window_len(),
                stride: defaults::stride(),
                scenarios: None,
                csv_paths: vec![],
                csv_schema: defaults::csv_schema(),
            },
            model: ModelSection::default(),
            attribution: AttributionSection::default(),
            analysis: AnalysisSection::default(),
            report: ReportSection::default(),
        }
    }

    pub fn scenarios(&self) -> Vec<FaultScenario> {
        match &self.dataset.scenarios {
            None => crate::procsim::default_scenarios(self.dataset.onset),
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| FaultScenario {
                    id: s.id.clone(),
                    archetype: s.archetype,
                    target: s.target.clone(),
                    magnitude: s.magnitude,
                    onset_index: s.onset.unwrap_or(self.dataset.onset),
                    rng_seed: s
                        .seed
                        .unwrap_or_else(|| stage_seed(self.seed, &format!("scenario-{i}"))),
                })
                .collect(),
        }
    }

    fn subsystem_map(&self) -> Result<SubsystemMap, PipelineError> {
        Ok(match self.analysis.subsystem_map.as_str() {
            "simulator" => SubsystemMap::builtin_simulator(),
            "tep" => SubsystemMap::builtin_tep(),
            path => SubsystemMap::from_path(Path::new(path))?,
        })
    }
}

/// Derive a per-stage seed from the root seed by hashing the stage name.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(stage.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

// ── Stage manifest ───────────────────────────────────────────────────────

/// Stage name → relative path → SHA-256 of the file contents.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PipelineManifest {
    pub stages: BTreeMap<String, BTreeMap<String, String>>,
}

impl PipelineManifest {
    pub fn load(out_dir: &Path) -> Self {
        let path = out_dir.join("manifest.json");
        std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    fn record_stage(
        &mut self,
        out_dir: &Path,
        stage: &str,
        files: &[PathBuf],
    ) -> Result<(), PipelineError> {
        let mut entries = BTreeMap::new();
        for f in files {
            let bytes = std::fs::read(f).map_err(io_err(f))?;
            let rel = f
                .strip_prefix(out_dir)
                .unwrap_or(f)
                .to_string_lossy()
                .replace('\\', "/");
            entries.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
        self.stages.insert(stage.to_string(), entries);
        let path = out_dir.join("manifest.json");
        let text =
            serde_json::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

fn record_stage(out_dir: &Path, stage: &str, files: &[PathBuf]) -> Result<(), PipelineError> {
    let mut manifest = PipelineManifest::load(out_dir);
    manifest.record_stage(out_dir, stage, files)
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.path().is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

// ── Stages ───────────────────────────────────────────────────────────────

pub fn dataset_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("dataset")
}

pub fn model_path(out_dir: &Path) -> PathBuf {
    out_dir.join("model.json")
}

/// Simulate the configured fault scenarios into a dataset directory.
pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf, PipelineError> {
    if cfg.dataset.source != DatasetSource::Simulator {
        return Err(PipelineError::Config(
            "dataset.source is not 'simulator'; use the ingest command for CSV data".into(),
        ));
    }
    let spec = ProcessSpec {
        duration: cfg.dataset.duration,
        ..ProcessSpec::default()
    };
    let dataset = generate_dataset(
        &spec,
        &cfg.scenarios(),
        cfg.dataset.runs_per_scenario,
        cfg.dataset.window_len,
        cfg.dataset.stride,
        stage_seed(cfg.seed, "simulate"),
    )?;
    let dir = dataset_dir(out_dir);
    dataset.save_to_dir(&dir)?;
    record_stage(out_dir, "dataset", &files_under(&dir)?)?;
    Ok(dir)
}

/// Ingest the configured TEP CSV files into a dataset directory.
pub fn cmd_ingest(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf, PipelineError> {
    if cfg.dataset.source != DatasetSource::Csv {
        return Err(PipelineError::Config(
            "dataset.source is not 'csv'; use the simulate command for the built-in process"
                .into(),
        ));
    }
    let mut parts = Vec::new();
    for path in &cfg.dataset.csv_paths {
        parts.push(ingest_tep_csv(path, cfg.dataset.csv_schema)?);
    }
    let mut dataset = merge_datasets(parts)?;
    dataset.window_len = cfg.dataset.window_len;
    dataset.stride = cfg.dataset.stride;
    dataset.compute_stats()?;
    let dir = dataset_dir(out_dir);
    dataset.save_to_dir(&dir)?;
    record_stage(out_dir, "dataset", &files_under(&dir)?)?;
    Ok(dir)
}

fn load_dataset(out_dir: &Path) -> Result<Dataset, PipelineError> {
    let dir = dataset_dir(out_dir);
    if !dir.join("manifest.json").exists() {
        return Err(PipelineError::MissingArtifact {
            path: dir,
            produced_by: "simulate (or ingest)".into(),
        });
    }
    Ok(Dataset::load_from_dir(&dir)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub class_labels: Vec<String>,
    pub epoch_losses: Vec<f64>,
    pub num_train_windows: usize,
    pub num_holdout_windows: usize,
}

/// Train the classifier on the persisted dataset; writes `model.json` and
/// `train_metrics.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainSummary, PipelineError> {
    let dataset = load_dataset(out_dir)?;
    let windows = dataset.windows()?;
    let (train_windows, holdout) = Dataset::split_windows(windows, cfg.model.holdout_every);

    let model_cfg = ModelConfig {
        num_features: dataset.num_features(),
        window_len: dataset.window_len,
        hidden_size: cfg.model.hidden_size,
        num_classes: dataset.class_labels.len(),
        learning_rate: cfg.model.learning_rate,
        epochs: cfg.model.epochs,
        batch_size: cfg.model.batch_size,
        weight_decay: cfg.model.weight_decay,
        input_jitter: cfg.model.input_jitter,
        max_col_norm: cfg.model.max_col_norm,
        rng_seed: stage_seed(cfg.seed, "train"),
    };
    let set = crate::model::TrainingSet {
        windows: train_windows.clone(),
        class_labels: dataset.class_labels.clone(),
        stats: dataset.stats.clone(),
    };
    let (model, log): (SequenceModel, TrainLog) = train(&set, &model_cfg)?;
    let eval: EvalReport =
        evaluate(&model, if holdout.is_empty() { &train_windows } else { &holdout })?;

    model.save_to_path(&model_path(out_dir))?;
    let summary = TrainSummary {
        accuracy: eval.accuracy,
        confusion: eval.confusion,
        class_labels: dataset.class_labels.clone(),
        epoch_losses: log.epoch_losses,
        num_train_windows: train_windows.len(),
        num_holdout_windows: holdout.len(),
    };
    let metrics_path = out_dir.join("train_metrics.json");
    let text =
        serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(&metrics_path, text).map_err(io_err(&metrics_path))?;
    record_stage(out_dir, "model", &[model_path(out_dir), metrics_path])?;
    Ok(summary)
}

fn load_model(out_dir: &Path) -> Result<SequenceModel, PipelineError> {
    let path = model_path(out_dir);
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            path,
            produced_by: "train".into(),
        });
    }
    Ok(SequenceModel::load_from_path(&path)?)
}

/// Escalate IG to 4× the steps when the completeness gap exceeds the
/// self-check tolerance `1e-3·|F(x) − F(x′)| + 1e-6`.
fn ig_with_escalation(
    model: &SequenceModel,
    window: &TimeSeriesWindow,
    baseline: &Baseline,
    class: usize,
    steps: usize,
) -> Result<AttributionMap, AttributionError> {
    let map = integrated_gradients(model, window, baseline, class, steps)?;
    let d = &map.diagnostics;
    let tol = 1e-3 * (d.value_at_input - d.value_at_baseline).abs() + 1e-6;
    if d.completeness_gap.unwrap_or(0.0) > tol {
        return integrated_gradients(model, window, baseline, class, steps * 4);
    }
    Ok(map)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub num_maps: usize,
    pub classes: Vec<String>,
    pub methods: Vec<String>,
}

/// Attribute post-onset windows of every fault class with the configured
/// methods. Windows are taken inside the analysis horizon, earliest first,
/// capped at `max_windows_per_class`. Shapley uses exact enumeration up to
/// 16 channels and the antithetic permutation sampler beyond. The
/// attribution target is the window's fault class logit.
pub fn cmd_attribute(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AttributeSummary, PipelineError> {
    let dataset = load_dataset(out_dir)?;
    let model = load_model(out_dir)?;
    let windows = dataset.windows_with_offsets()?;

    let baseline = crate::attribution::make_baseline(
        cfg.attribution.baseline,
        &windows.iter().map(|(w, _)| w.clone()).collect::<Vec<_>>(),
        dataset.window_len,
        dataset.num_features(),
        None,
    )?;

    let horizon = cfg.analysis.horizon;
    let mut maps: Vec<AttributionMap> = Vec::new();
    for class in 1..dataset.class_labels.len() {
        let mut candidates: Vec<&(TimeSeriesWindow, Option<usize>)> = windows
            .iter()
            .filter(|(w, offset)| {
                w.label == Some(class)
                    && offset.is_some_and(|o| o + dataset.window_len <= horizon)
            })
            .collect();
        candidates.sort_by_key(|(_, offset)| offset.unwrap_or(usize::MAX));
        candidates.truncate(cfg.attribution.max_windows_per_class);
        if candidates.is_empty() {
            return Err(PipelineError::Analysis(AnalysisError::NoWindowsInHorizon {
                horizon,
            }));
        }

        for (wi, (window, offset)) in candidates.iter().enumerate() {
            for method in &cfg.attribution.methods {
                let mut map = match method.as_str() {
                    "ig" => ig_with_escalation(
                        &model,
                        window,
                        &baseline,
                        class,
                        cfg.attribution.ig_steps,
                    )?,
                    _ => {
                        if dataset.num_features() <= EXACT_FEATURE_LIMIT {
                            shapley_exact(&model, window, &baseline, class)?
                        } else {
                            let seed = stage_seed(
                                cfg.seed,
                                &format!("attribute-{}-{wi}", dataset.class_labels[class]),
                            );
                            shapley_sampled(
                                &model,
                                window,
                                &baseline,
                                class,
                                cfg.attribution.permutations,
                                seed,
                            )?
                        }
                    }
                };
                map.fault_class = Some(dataset.class_labels[class].clone());
                map.window_offset = *offset;
                maps.push(map);
            }
        }
    }

    let dir = out_dir.join("attributions");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for map in &maps {
        let name = format!(
            "{}_{}_w{:03}.csv",
            map.fault_class.as_deref().unwrap_or("unknown"),
            map.method.as_str(),
            map.window_offset.unwrap_or(0),
        );
        let path = dir.join(name);
        std::fs::write(&path, map.to_csv(&dataset.schema)).map_err(io_err(&path))?;
    }
    let maps_path = dir.join("maps.json");
    let text =
        serde_json::to_string_pretty(&maps).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(&maps_path, text).map_err(io_err(&maps_path))?;
    record_stage(out_dir, "attributions", &files_under(&dir)?)?;

    Ok(AttributeSummary {
        num_maps: maps.len(),
        classes: dataset.class_labels[1..].to_vec(),
        methods: cfg.attribution.methods.clone(),
    })
}

fn load_maps(out_dir: &Path) -> Result<Vec<AttributionMap>, PipelineError> {
    let path = out_dir.join("attributions").join("maps.json");
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            path,
            produced_by: "attribute".into(),
        });
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Everything the analyze stage produces for one fault class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAnalysis {
    pub fault_class: String,
    pub aggregated: Vec<AggregatedScores>,
    pub normalized: Vec<NormalizedScores>,
    /// IG vs SHAP, when both methods ran.
    pub agreement: Option<AgreementResult>,
    /// One per method, in `normalized` order.
    pub localization: Vec<LocalizationResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisResults {
    pub schema: Vec<String>,
    pub top_k: usize,
    pub horizon: usize,
    pub classes: Vec<ClassAnalysis>,
}

/// Aggregate, normalize, compare and localize the persisted attributions.
pub fn cmd_analyze(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<AnalysisResults, PipelineError> {
    let dataset = load_dataset(out_dir)?;
    let maps = load_maps(out_dir)?;
    let subsystem_map = cfg.subsystem_map()?;
    subsystem_map.validate_against_schema(&dataset.schema)?;

    let mut class_names: Vec<String> = maps.iter().filter_map(|m| m.fault_class.clone()).collect();
    class_names.sort();
    class_names.dedup();
    // Keep dataset class order for readable reports.
    class_names.sort_by_key(|n| dataset.class_labels.iter().position(|l| l == n));

    let mut classes = Vec::new();
    for class_name in &class_names {
        let mut aggregated = Vec::new();
        let mut normalized = Vec::new();
        for family in ["ig", "shap"] {
            let family_maps: Vec<AttributionMap> = maps
                .iter()
                .filter(|m| {
                    m.fault_class.as_deref() == Some(class_name.as_str())
                        && m.method.family() == family
                })
                .cloned()
                .collect();
            if family_maps.is_empty() {
                continue;
            }
            let agg = analysis::aggregate(&family_maps, cfg.analysis.horizon)?;
            let norm = analysis::normalize(&agg)?;
            aggregated.push(agg);
            normalized.push(norm);
        }

        let agreement = if normalized.len() == 2 {
            Some(analysis::agreement(
                &normalized[0].values,
                &normalized[1].values,
                cfg.analysis.top_k,
            )?)
        } else {
            None
        };

        let mut localization = Vec::new();
        for norm in &normalized {
            match analysis::localization_score(
                &norm.values,
                &subsystem_map,
                class_name,
                cfg.analysis.top_k,
                &dataset.schema,
            ) {
                Ok(loc) => localization.push(loc),
                Err(AnalysisError::UnknownFault(_)) => {
                    log::warn!("fault '{class_name}' is not in the subsystem map; skipping");
                }
                Err(e) => return Err(e.into()),
            }
        }

        classes.push(ClassAnalysis {
            fault_class: class_name.clone(),
            aggregated,
            normalized,
            agreement,
            localization,
        });
    }

    let results = AnalysisResults {
        schema: dataset.schema.clone(),
        top_k: cfg.analysis.top_k,
        horizon: cfg.analysis.horizon,
        classes,
    };

    let dir = out_dir.join("analysis");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let results_path = dir.join("results.json");
    let text =
        serde_json::to_string_pretty(&results).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(&results_path, text).map_err(io_err(&results_path))?;

    // Long-format CSV of normalized scores for external tooling.
    let mut csv = String::from("fault_class,method,feature,normalized_score\n");
    for class in &results.classes {
        for norm in &class.normalized {
            for (i, v) in norm.values.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{v:?}",
                    class.fault_class,
                    norm.method.as_str(),
                    results.schema[i]
                );
            }
        }
    }
    let csv_path = dir.join("normalized_scores.csv");
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;

    record_stage(out_dir, "analysis", &files_under(&dir)?)?;
    Ok(results)
}

fn load_analysis(out_dir: &Path) -> Result<AnalysisResults, PipelineError> {
    let path = out_dir.join("analysis").join("results.json");
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            path,
            produced_by: "analyze".into(),
        });
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<String>,
}

/// Emit the report bundle: heatmap, per-class score tables and trace plots
/// for the most and least attributed channels of each fault.
pub fn cmd_report(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReportSummary, PipelineError> {
    let dataset = load_dataset(out_dir)?;
    let results = load_analysis(out_dir)?;
    let dir = out_dir.join("report");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let methods: Vec<String> = results
        .classes
        .first()
        .map(|c| {
            c.normalized
                .iter()
                .map(|n| n.method.family().to_string())
                .collect()
        })
        .unwrap_or_default();
    let faults: Vec<String> = results.classes.iter().map(|c| c.fault_class.clone()).collect();

    // scores[method][fault][feature]
    let mut scores = vec![vec![]; methods.len()];
    for class in &results.classes {
        for (mi, norm) in class.normalized.iter().enumerate() {
            scores[mi].push(norm.values.clone());
        }
    }
    let heatmap = HeatmapData {
        features: results.schema.clone(),
        faults,
        methods: methods.clone(),
        scores,
    };
    let heatmap_path = dir.join("heatmap.svg");
    emit_heatmap(&heatmap, cfg.report.heatmap_threshold, &heatmap_path)?;

    for class in &results.classes {
        let top_k: Vec<Vec<usize>> = class
            .normalized
            .iter()
            .map(|n| {
                analysis::top_k(&n.values, results.top_k.min(n.values.len()))
                    .unwrap_or_default()
            })
            .collect();
        let table = ScoreTable {
            methods: methods.clone(),
            rows: results
                .schema
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    (
                        f.clone(),
                        class.normalized.iter().map(|n| n.values[i]).collect(),
                    )
                })
                .collect(),
            top_k,
        };
        let path = dir.join(format!("table_{}.csv", class.fault_class));
        emit_score_table(&table, cfg.report.table_decimals, &path)?;
    }

    // Trace plots: each fault's most and least attributed channel on the
    // first run of that class, against a normal reference trace.
    for class in &results.classes {
        let Some(norm) = class.normalized.first() else {
            continue;
        };
        let class_id = dataset
            .class_labels
            .iter()
            .position(|l| l == &class.fault_class);
        let Some(run) = dataset
            .runs
            .iter()
            .find(|r| r.label.is_some() && r.label == class_id)
        else {
            continue;
        };

        let normal_reference = normal_reference_trace(cfg, &dataset, run.num_samples)?;
        let order = analysis::top_k(&norm.values, norm.values.len())?;
        let channels = [order[0], *order.last().expect("nonempty")];
        for idx in channels {
            let faulty: Vec<f64> = run
                .values
                .iter()
                .skip(idx)
                .step_by(dataset.schema.len())
                .copied()
                .collect();
            let normal: Vec<f64> = match &normal_reference {
                Some(reference) => reference
                    .iter()
                    .skip(idx)
                    .step_by(dataset.schema.len())
                    .copied()
                    .take(faulty.len())
                    .collect(),
                // No normal run available: flat line at the channel's
                // normal-operation mean.
                None => vec![dataset.stats.mean[idx]; faulty.len()],
            };
            let path = dir.join(format!(
                "trace_{}_{}.svg",
                class.fault_class, results.schema[idx]
            ));
            emit_variable_plot(&results.schema[idx], &faulty, &normal, run.onset_index, &path)?;
        }
    }

    let files = files_under(&dir)?;
    record_stage(out_dir, "report", &files)?;
    Ok(ReportSummary {
        files: files
            .iter()
            .map(|f| f.strip_prefix(out_dir).unwrap_or(f).display().to_string())
            .collect(),
    })
}

/// A no-fault trace for overlay plots: re-simulated for simulator datasets,
/// a normal-labeled run when the dataset carries one, `None` otherwise.
fn normal_reference_trace(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    num_samples: usize,
) -> Result<Option<Vec<f64>>, PipelineError> {
    if cfg.dataset.source == DatasetSource::Simulator {
        let spec = ProcessSpec {
            duration: num_samples,
            ..ProcessSpec::default()
        };
        let run = simulate(&spec, None, stage_seed(cfg.seed, "report-reference"))?;
        return Ok(Some(run.measured));
    }
    Ok(dataset
        .runs
        .iter()
        .find(|r| r.label.is_none() || r.label == Some(0))
        .map(|r| r.values.clone()))
}

// ── Repro ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproRow {
    pub fault_class: String,
    pub recall: f64,
    pub ig_top: Vec<String>,
    pub shap_top: Vec<String>,
    pub overlap: Option<f64>,
    pub localization_hit: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproSummary {
    pub accuracy: f64,
    pub rows: Vec<ReproRow>,
}

impl ReproSummary {
    /// Plain-text summary table, one row per fault class.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "holdout accuracy: {:.3}", self.accuracy);
        let _ = writeln!(
            out,
            "{:<22} {:>7}  {:<40} {:<40} {:>7}  {:>5}",
            "fault", "recall", "ig top-k", "shap top-k", "overlap", "hit"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<22} {:>7.3}  {:<40} {:<40} {:>7}  {:>5}",
                r.fault_class,
                r.recall,
                r.ig_top.join(","),
                r.shap_top.join(","),
                r.overlap.map(|o| format!("{o:.2}")).unwrap_or_else(|| "-".into()),
                r.localization_hit
                    .map(|h| if h { "yes" } else { "no" }.to_string())
                    .unwrap_or_else(|| "-".into()),
            );
        }
        out
    }
}

/// Run the full chain: simulate/ingest → train → attribute → analyze →
/// report, returning the per-fault summary.
pub fn cmd_repro(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReproSummary, PipelineError> {
    match cfg.dataset.source {
        DatasetSource::Simulator => cmd_simulate(cfg, out_dir)?,
        DatasetSource::Csv => cmd_ingest(cfg, out_dir)?,
    };
    let train_summary = cmd_train(cfg, out_dir)?;
    cmd_attribute(cfg, out_dir)?;
    let results = cmd_analyze(cfg, out_dir)?;
    cmd_report(cfg, out_dir)?;

    let mut rows = Vec::new();
    for class in &results.classes {
        let class_id = train_summary
            .class_labels
            .iter()
            .position(|l| l == &class.fault_class);
        let recall = class_id
            .map(|id| {
                let row = &train_summary.confusion[id];
                let total: usize = row.iter().sum();
                if total == 0 {
                    0.0
                } else {
                    row[id] as f64 / total as f64
                }
            })
            .unwrap_or(0.0);

        let names_of = |family: &str| -> Vec<String> {
            class
                .normalized
                .iter()
                .find(|n| n.method.family() == family)
                .map(|n| {
                    analysis::top_k(&n.values, results.top_k)
                        .unwrap_or_default()
                        .iter()
                        .map(|&i| results.schema[i].clone())
                        .collect()
                })
                .unwrap_or_default()
        };

        rows.push(ReproRow {
            fault_class: class.fault_class.clone(),
            recall,
            ig_top: names_of("ig"),
            shap_top: names_of("shap"),
            overlap: class.agreement.as_ref().map(|a| a.top_k_overlap),
            localization_hit: class.localization.first().map(|l| l.hit),
        });
    }

    Ok(ReproSummary {
        accuracy: train_summary.accuracy,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let toml = r#"
seed = 1
[dataset]
source = "simulator"
windowlen = 20
"#;
        let err = ExperimentConfig::from_toml(toml).unwrap_err();
        assert!(err.to_string().contains("windowlen"));
    }

    #[test]
    fn config_requires_seed() {
        let toml = r#"
[dataset]
source = "simulator"
"#;
        assert!(ExperimentConfig::from_toml(toml).is_err());
    }

    #[test]
    fn csv_source_requires_existing_paths() {
        let toml = r#"
seed = 3
[dataset]
source = "csv"
csv_paths = ["/definitely/not/here.csv"]
"#;
        let err = ExperimentConfig::from_toml(toml).unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }

    #[test]
    fn unknown_method_is_rejected() {
        let toml = r#"
seed = 3
[dataset]
source = "simulator"
[attribution]
methods = ["lime"]
"#;
        let err = ExperimentConfig::from_toml(toml).unwrap_err();
        assert!(err.to_string().contains("lime"));
    }

    #[test]
    fn stage_seeds_differ_by_stage_and_root() {
        let a = stage_seed(1, "train");
        let b = stage_seed(1, "simulate");
        let c = stage_seed(2, "train");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, stage_seed(1, "train"));
    }

    #[test]
    fn train_without_dataset_names_prerequisite() {
        let cfg = ExperimentConfig::default_simulator(1);
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_train(&cfg, dir.path()).unwrap_err();
        match err {
            PipelineError::MissingArtifact { produced_by, .. } => {
                assert!(produced_by.contains("simulate"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn attribute_without_model_names_train() {
        let mut cfg = ExperimentConfig::default_simulator(1);
        cfg.dataset.runs_per_scenario = 1;
        let dir = tempfile::tempdir().unwrap();
        cmd_simulate(&cfg, dir.path()).unwrap();
        let err = cmd_attribute(&cfg, dir.path()).unwrap_err();
        match err {
            PipelineError::MissingArtifact { produced_by, .. } => {
                assert_eq!(produced_by, "train");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
