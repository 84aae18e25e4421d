//! Static report artifacts: a faults × features heatmap (paired method
//! columns per fault), normalized score tables, per-variable trace plots,
//! and a manifest of every emitted file with its content hash.
//!
//! All SVG is generated directly (SVG 1.1, no fonts beyond `sans-serif`),
//! CSV uses RFC-4180-style quoting, numbers are formatted with fixed
//! precision, and files are written atomically (temp + rename) — identical
//! inputs produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("empty heatmap: {0}")]
    EmptyHeatmap(String),
    #[error("heatmap dimensions inconsistent: {0}")]
    BadHeatmap(String),
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
    #[error("score table rows have inconsistent lengths")]
    BadTable,
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io_err = |e: std::io::Error| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grayscale fill, monotone in the clipped score: scores at or below zero
/// render lightest, the column maximum renders darkest.
fn gray_fill(value: f64, max: f64) -> String {
    let norm = if max > 0.0 {
        (value.clamp(0.0, max)) / max
    } else {
        0.0
    };
    let level = (245.0 - norm * 205.0).round() as u8;
    format!("#{level:02x}{level:02x}{level:02x}")
}

/// Source data for the heatmap: `scores[method][fault][feature]`,
/// method columns rendered side by side per fault (A, B, ... per the
/// method order given).
#[derive(Debug, Clone)]
pub struct HeatmapData {
    pub features: Vec<String>,
    pub faults: Vec<String>,
    pub methods: Vec<String>,
    pub scores: Vec<Vec<Vec<f64>>>,
}

impl HeatmapData {
    fn validate(&self) -> Result<(), ReportError> {
        if self.features.is_empty() || self.faults.is_empty() || self.methods.is_empty() {
            return Err(ReportError::EmptyHeatmap(
                "needs at least one feature, fault and method".into(),
            ));
        }
        if self.scores.len() != self.methods.len() {
            return Err(ReportError::BadHeatmap(format!(
                "{} score blocks for {} methods",
                self.scores.len(),
                self.methods.len()
            )));
        }
        for block in &self.scores {
            if block.len() != self.faults.len() {
                return Err(ReportError::BadHeatmap(format!(
                    "{} fault columns, expected {}",
                    block.len(),
                    self.faults.len()
                )));
            }
            for col in block {
                if col.len() != self.features.len() {
                    return Err(ReportError::BadHeatmap(format!(
                        "{} feature rows, expected {}",
                        col.len(),
                        self.features.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Render the heatmap to `path`.
///
/// Features whose maximum score across every fault and method is below
/// `display_threshold` are omitted (unimportant features clutter the
/// picture); set the threshold to `f64::NEG_INFINITY` to keep all rows.
/// Negative scores clip to the lightest shade.
pub fn emit_heatmap(
    data: &HeatmapData,
    display_threshold: f64,
    path: &Path,
) -> Result<(), ReportError> {
    data.validate()?;

    let keep: Vec<usize> = (0..data.features.len())
        .filter(|&f| {
            let max = data
                .scores
                .iter()
                .flat_map(|block| block.iter().map(move |col| col[f]))
                .fold(f64::NEG_INFINITY, f64::max);
            max >= display_threshold
        })
        .collect();
    if keep.is_empty() {
        return Err(ReportError::EmptyHeatmap(format!(
            "no feature reaches the display threshold {display_threshold}"
        )));
    }

    let global_max = keep
        .iter()
        .flat_map(|&f| {
            data.scores
                .iter()
                .flat_map(move |block| block.iter().map(move |col| col[f]))
        })
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);

    let cell = 18.0;
    let label_w = 110.0;
    let header_h = 42.0;
    let n_cols = data.faults.len() * data.methods.len();
    let width = label_w + n_cols as f64 * cell + 20.0;
    let height = header_h + keep.len() as f64 * cell + 16.0;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    );
    let _ = write!(svg, "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n");

    // Fault headers spanning their method pair, then method letters.
    for (fi, fault) in data.faults.iter().enumerate() {
        let x = label_w + (fi * data.methods.len()) as f64 * cell
            + data.methods.len() as f64 * cell / 2.0;
        let _ = write!(
            svg,
            "<text x=\"{x:.1}\" y=\"14\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            xml_escape(fault)
        );
        for (mi, _) in data.methods.iter().enumerate() {
            let letter = (b'A' + (mi % 26) as u8) as char;
            let mx = label_w + (fi * data.methods.len() + mi) as f64 * cell + cell / 2.0;
            let _ = write!(
                svg,
                "<text x=\"{mx:.1}\" y=\"30\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{letter}</text>\n"
            );
        }
    }

    for (row, &f) in keep.iter().enumerate() {
        let y = header_h + row as f64 * cell;
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"end\">{}</text>\n",
            label_w - 6.0,
            y + cell * 0.7,
            xml_escape(&data.features[f])
        );
        for (fi, _) in data.faults.iter().enumerate() {
            for (mi, _) in data.methods.iter().enumerate() {
                let x = label_w + (fi * data.methods.len() + mi) as f64 * cell;
                let v = data.scores[mi][fi][f];
                let _ = write!(
                    svg,
                    "<rect class=\"cell\" x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{}\" stroke=\"#cccccc\" stroke-width=\"0.5\"/>\n",
                    gray_fill(v, global_max)
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())
}

/// One score-table row: a feature with its per-method normalized scores.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub methods: Vec<String>,
    /// (feature, one score per method)
    pub rows: Vec<(String, Vec<f64>)>,
    /// Per method: indices of the rows marked as top-k.
    pub top_k: Vec<Vec<usize>>,
}

/// Emit the normalized-score table as CSV: one row per feature, one column
/// per method at `decimals` precision, and a marker column naming the
/// methods that rank the feature in their top-k (the bold-equivalent).
pub fn emit_score_table(
    table: &ScoreTable,
    decimals: usize,
    path: &Path,
) -> Result<(), ReportError> {
    let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["feature".to_string()];
    header.extend(table.methods.iter().cloned());
    header.push("top_k".to_string());
    writer.write_record(&header).map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;

    for (ri, (feature, scores)) in table.rows.iter().enumerate() {
        if scores.len() != table.methods.len() {
            return Err(ReportError::BadTable);
        }
        let mut record = vec![feature.clone()];
        record.extend(scores.iter().map(|s| format!("{s:.decimals$}")));
        let marks: Vec<&str> = table
            .methods
            .iter()
            .enumerate()
            .filter(|(mi, _)| table.top_k.get(*mi).is_some_and(|t| t.contains(&ri)))
            .map(|(_, m)| m.as_str())
            .collect();
        record.push(marks.join("+"));
        writer.write_record(&record).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    }
    let bytes = writer.into_inner().map_err(|e| ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}

/// Overlay of a faulty channel trace on the matching normal trace, with a
/// vertical onset marker and a |faulty − normal| deviation panel under it.
pub fn emit_variable_plot(
    channel_name: &str,
    faulty: &[f64],
    normal: &[f64],
    onset: Option<usize>,
    path: &Path,
) -> Result<(), ReportError> {
    if faulty.is_empty() || faulty.len() != normal.len() {
        return Err(ReportError::BadTable);
    }
    let width = 640.0;
    let trace_h = 200.0;
    let dev_h = 90.0;
    let margin = 40.0;
    let height = trace_h + dev_h + 3.0 * margin;

    let n = faulty.len();
    let all_min = faulty
        .iter()
        .chain(normal)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let all_max = faulty
        .iter()
        .chain(normal)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (all_max - all_min).max(1e-9);

    let x_of = |i: usize| margin + (i as f64) / (n.saturating_sub(1).max(1) as f64) * (width - 2.0 * margin);
    let y_of = |v: f64| margin + (1.0 - (v - all_min) / span) * trace_h;

    let polyline = |values: &[f64], to_y: &dyn Fn(f64) -> f64| {
        let mut pts = String::new();
        for (i, v) in values.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x_of(i), to_y(*v));
        }
        pts.trim_end().to_string()
    };

    let dev: Vec<f64> = faulty.iter().zip(normal).map(|(f, c)| (f - c).abs()).collect();
    let dev_max = dev.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(1e-9);
    let dev_top = 2.0 * margin + trace_h;
    let dev_y = |v: f64| dev_top + (1.0 - v / dev_max) * dev_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    );
    let _ = write!(svg, "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{margin}\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        xml_escape(channel_name)
    );
    let _ = write!(
        svg,
        "<polyline class=\"normal\" points=\"{}\" fill=\"none\" stroke=\"#888888\" stroke-width=\"1\"/>\n",
        polyline(normal, &y_of)
    );
    let _ = write!(
        svg,
        "<polyline class=\"faulty\" points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1\"/>\n",
        polyline(faulty, &y_of)
    );
    let _ = write!(
        svg,
        "<text x=\"{margin}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">deviation |faulty - normal|</text>\n",
        dev_top - 6.0
    );
    let _ = write!(
        svg,
        "<polyline class=\"deviation\" points=\"{}\" fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"1\"/>\n",
        polyline(&dev, &dev_y)
    );
    if let Some(onset) = onset {
        if onset < n {
            let x = x_of(onset);
            let _ = write!(
                svg,
                "<line class=\"onset\" x1=\"{x:.2}\" y1=\"{margin}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#2980b9\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>\n",
                dev_top + dev_h
            );
        }
    }
    svg.push_str("</svg>\n");
    write_atomic(path, svg.as_bytes())
}

/// Relative path → SHA-256 content hash for every emitted artifact.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub entries: BTreeMap<String, String>,
}

impl ArtifactManifest {
    pub fn record_file(&mut self, root: &Path, path: &Path) -> Result<(), ReportError> {
        let bytes = std::fs::read(path).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rel = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.entries.insert(rel, hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ReportError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}
