//! Tennessee-Eastman-style CSV ingestion.
//!
//! A file holds one run: one row per timestep, comma separated, optional
//! header row (detected when no cell of the first row parses as a number).
//! Data columns are mapped by position to the canonical channel names
//! `xmeas_1..41` then `xmv_1..11` (or `..12` under [`TepSchema::Xmv12`]).
//! Values are taken as-is; standardization happens downstream.
//!
//! Beyond the data columns a file may carry one trailing integer label
//! column (0 = normal, k = fault class; the fault may switch on mid-run)
//! and, after that, a constant onset-index column.

use std::path::Path;

use crate::model::ChannelStats;

use super::dataset::{Dataset, DatasetError, Run};

/// Which xmv count the file carries. Classic TEP dumps use 11 effective
/// manipulated variables; the full listing includes `xmv_12` (agitator).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TepSchema {
    Xmv11,
    Xmv12,
}

impl TepSchema {
    pub fn data_columns(self) -> usize {
        match self {
            TepSchema::Xmv11 => 52,
            TepSchema::Xmv12 => 53,
        }
    }
}

/// Canonical channel names for a TEP layout.
pub fn tep_schema(schema: TepSchema) -> Vec<String> {
    let mut names: Vec<String> = (1..=41).map(|i| format!("xmeas_{i}")).collect();
    let xmv = match schema {
        TepSchema::Xmv11 => 11,
        TepSchema::Xmv12 => 12,
    };
    names.extend((1..=xmv).map(|i| format!("xmv_{i}")));
    names
}

/// Ingest one TEP CSV file as a single-run [`Dataset`].
///
/// Windowing parameters default to (50, 50); adjust the returned dataset's
/// `window_len`/`stride` and call [`Dataset::compute_stats`] before
/// training.
pub fn ingest_tep_csv(path: &Path, schema: TepSchema) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let display = path.display().to_string();
    let data_cols = schema.data_columns();
    let accepted = [data_cols, data_cols + 1, data_cols + 2];

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut onset_col: Option<usize> = None;

    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if rows.is_empty() && r == 0 && cells.iter().all(|c| c.parse::<f64>().is_err()) {
            continue; // header row
        }
        if !accepted.contains(&cells.len()) {
            return Err(DatasetError::ColumnCount {
                path: display,
                found: cells.len(),
                expected: accepted.to_vec(),
            });
        }
        let mut parsed = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DatasetError::BadCell {
                path: display.clone(),
                row: r + 1,
                col: c + 1,
                value: cell.to_string(),
            })?;
            parsed.push(v);
        }
        if cells.len() >= data_cols + 1 {
            labels.push(parsed[data_cols] as i64);
        }
        if cells.len() == data_cols + 2 {
            onset_col = Some(parsed[data_cols + 1] as usize);
        }
        parsed.truncate(data_cols);
        rows.push(parsed);
    }

    if rows.is_empty() {
        return Err(DatasetError::Empty);
    }

    // Resolve the run label and onset from the label column, when present:
    // leading zeros are normal operation, the first nonzero value is the
    // fault class and marks the onset. Mixed nonzero classes are rejected.
    let (fault_label, onset_from_labels) = if labels.is_empty() {
        (None, None)
    } else {
        let mut fault: Option<(i64, usize)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                match fault {
                    None => fault = Some((l, i)),
                    Some((first, _)) if first != l => {
                        return Err(DatasetError::MixedLabels {
                            path: display,
                            first: first as usize,
                            second: l as usize,
                        })
                    }
                    _ => {}
                }
            }
        }
        match fault {
            Some((class, first_idx)) => (
                Some(class as usize),
                if first_idx > 0 { Some(first_idx) } else { None },
            ),
            None => (None, None),
        }
    };

    let num_samples = rows.len();
    let values: Vec<f64> = rows.into_iter().flatten().collect();

    let mut class_labels = vec!["normal".to_string()];
    let label = fault_label.map(|raw| {
        class_labels.push(format!("idv_{raw}"));
        1usize
    });

    let names = tep_schema(schema);
    let dataset = Dataset {
        stats: ChannelStats::identity(names.len()),
        schema: names,
        class_labels,
        runs: vec![Run {
            values,
            num_samples,
            label,
            onset_index: onset_from_labels.or(onset_col),
        }],
        window_len: 50,
        stride: 50,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Merge single-run datasets sharing a schema into one multi-class dataset,
/// re-mapping class labels by name.
pub fn merge_datasets(parts: Vec<Dataset>) -> Result<Dataset, DatasetError> {
    let mut iter = parts.into_iter();
    let mut merged = iter.next().ok_or(DatasetError::Empty)?;
    for (i, part) in iter.enumerate() {
        if part.schema != merged.schema {
            return Err(DatasetError::SchemaMismatch {
                run: i + 1,
                expected: merged.schema.len(),
                actual: part.schema.len(),
            });
        }
        for run in part.runs {
            let label = match run.label {
                None => None,
                Some(local) => {
                    let name = &part.class_labels[local];
                    let id = match merged.class_labels.iter().position(|l| l == name) {
                        Some(id) => id,
                        None => {
                            merged.class_labels.push(name.clone());
                            merged.class_labels.len() - 1
                        }
                    };
                    Some(id)
                }
            };
            merged.runs.push(Run { label, ..run });
        }
    }
    merged.validate()?;
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(rows: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for row in rows {
            writeln!(f, "{row}").unwrap();
        }
        f
    }

    fn numeric_row(cols: usize, seed: usize) -> String {
        (0..cols)
            .map(|c| format!("{:.3}", (seed * 31 + c * 7) as f64 * 0.01))
            .collect::<Vec<_>>()
            .join(",")
    }

    #[test]
    fn ingests_headerless_52_column_file() {
        let rows: Vec<String> = (0..960).map(|r| numeric_row(52, r)).collect();
        let f = write_csv(&rows);
        let ds = ingest_tep_csv(f.path(), TepSchema::Xmv11).unwrap();
        assert_eq!(ds.runs.len(), 1);
        assert_eq!(ds.runs[0].num_samples, 960);
        assert_eq!(ds.schema.len(), 52);
        assert_eq!(ds.schema[0], "xmeas_1");
        assert_eq!(ds.schema[41], "xmv_1");
        assert_eq!(ds.schema[51], "xmv_11");
        assert_eq!(ds.runs[0].label, None);
    }

    #[test]
    fn header_row_is_skipped() {
        let mut rows = vec![tep_schema(TepSchema::Xmv12).join(",")];
        rows.extend((0..10).map(|r| numeric_row(53, r)));
        let f = write_csv(&rows);
        let ds = ingest_tep_csv(f.path(), TepSchema::Xmv12).unwrap();
        assert_eq!(ds.runs[0].num_samples, 10);
        assert_eq!(ds.schema[52], "xmv_12");
    }

    #[test]
    fn wrong_column_count_lists_expected_schemas() {
        let rows: Vec<String> = (0..5).map(|r| numeric_row(10, r)).collect();
        let f = write_csv(&rows);
        let err = ingest_tep_csv(f.path(), TepSchema::Xmv11).unwrap_err();
        match err {
            DatasetError::ColumnCount { found, expected, .. } => {
                assert_eq!(found, 10);
                assert_eq!(expected, vec![52, 53, 54]);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn na_cell_is_located_precisely() {
        let mut rows: Vec<String> = (0..5).map(|r| numeric_row(52, r)).collect();
        let mut cells: Vec<String> = rows[2].split(',').map(String::from).collect();
        cells[7] = "NA".to_string();
        rows[2] = cells.join(",");
        let f = write_csv(&rows);
        let err = ingest_tep_csv(f.path(), TepSchema::Xmv11).unwrap_err();
        match err {
            DatasetError::BadCell { row, col, value, .. } => {
                assert_eq!((row, col), (3, 8));
                assert_eq!(value, "NA");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn label_column_sets_class_and_onset() {
        let rows: Vec<String> = (0..20)
            .map(|r| {
                let label = if r < 8 { 0 } else { 11 };
                format!("{},{label}", numeric_row(52, r))
            })
            .collect();
        let f = write_csv(&rows);
        let ds = ingest_tep_csv(f.path(), TepSchema::Xmv11).unwrap();
        assert_eq!(ds.runs[0].label, Some(1));
        assert_eq!(ds.class_labels, vec!["normal", "idv_11"]);
        assert_eq!(ds.runs[0].onset_index, Some(8));
    }

    #[test]
    fn mixed_fault_labels_are_rejected() {
        let rows: Vec<String> = (0..6)
            .map(|r| format!("{},{}", numeric_row(52, r), if r < 3 { 4 } else { 5 }))
            .collect();
        let f = write_csv(&rows);
        assert!(matches!(
            ingest_tep_csv(f.path(), TepSchema::Xmv11),
            Err(DatasetError::MixedLabels { .. })
        ));
    }

    #[test]
    fn merge_remaps_labels_by_name() {
        let make = |idv: u32| {
            let rows: Vec<String> = (0..30)
                .map(|r| format!("{},{}", numeric_row(52, r + idv as usize), idv))
                .collect();
            let f = write_csv(&rows);
            ingest_tep_csv(f.path(), TepSchema::Xmv11).unwrap()
        };
        let merged = merge_datasets(vec![make(8), make(11)]).unwrap();
        assert_eq!(merged.class_labels, vec!["normal", "idv_8", "idv_11"]);
        assert_eq!(merged.runs[0].label, Some(1));
        assert_eq!(merged.runs[1].label, Some(2));
    }
}
