//! Ingestion of externally computed score tables.
//!
//! Schema: `sample_id,true_label,score_0,...,score_{K-1}`, UTF-8, decimal
//! scores, one row per sample. A candidate class is a directory with one
//! `<candidate_id>.csv` per candidate over a shared label vector.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Candidate, Targets, TaskData, TaskKind};
use crate::error::{Error, Result};

/// A candidate backed by an externally computed per-sample score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedModel {
    candidate: Candidate,
    table: Arc<Vec<Vec<f64>>>,
    class_count: usize,
}

impl PrecomputedModel {
    pub(super) fn new(candidate: Candidate, table: Arc<Vec<Vec<f64>>>, class_count: usize) -> Self {
        PrecomputedModel {
            candidate,
            table,
            class_count,
        }
    }

    pub fn candidate(&self) -> &Candidate {
        &self.candidate
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.table[row]
    }

    pub fn score(&self, row: usize, label: usize) -> f64 {
        self.table[row][label]
    }
}

/// Load one score CSV, returning the score table and the true labels.
pub fn load_score_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "true_label" {
        return Err(Error::Schema(format!(
            "{}: header must start with sample_id,true_label,score_0,...",
            path.display()
        )));
    }
    let class_count = header.len() - 2;
    for (k, field) in header.iter().skip(2).enumerate() {
        if field != format!("score_{k}") {
            return Err(Error::Schema(format!(
                "{}: expected column score_{k}, found {field:?}",
                path.display()
            )));
        }
    }
    let mut table = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::Schema(format!(
                "{}: row {row_idx} has {} fields, expected {}",
                path.display(),
                record.len(),
                header.len()
            )));
        }
        let cell = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| {
                Error::Schema(format!(
                    "{}: non-numeric cell {:?} at row {row_idx}",
                    path.display(),
                    &record[i]
                ))
            })
        };
        let label: usize = record[1].trim().parse().map_err(|_| {
            Error::Schema(format!(
                "{}: non-numeric true_label {:?} at row {row_idx}",
                path.display(),
                &record[1]
            ))
        })?;
        if label >= class_count {
            return Err(Error::Schema(format!(
                "{}: true_label {label} out of range 0..{class_count} at row {row_idx}",
                path.display()
            )));
        }
        let mut scores = Vec::with_capacity(class_count);
        for i in 2..header.len() {
            let v = cell(i)?;
            if !v.is_finite() {
                return Err(Error::Schema(format!(
                    "{}: non-finite score at row {row_idx}",
                    path.display()
                )));
            }
            scores.push(v);
        }
        table.push(scores);
        labels.push(label);
    }
    if table.is_empty() {
        return Err(Error::Schema(format!("{}: no data rows", path.display())));
    }
    Ok((table, labels))
}

/// Write a score table in the schema `load_score_csv` reads.
///
/// Scores are written with Rust's shortest round-trip decimal formatting, so
/// a write/read cycle reproduces the table bit for bit.
pub fn write_score_csv(path: &Path, table: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if table.len() != labels.len() {
        return Err(Error::Schema("table and label lengths differ".into()));
    }
    if table.is_empty() {
        return Err(Error::Schema(
            "refusing to write an empty score table".into(),
        ));
    }
    let class_count = table[0].len();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_owned(), "true_label".to_owned()];
    header.extend((0..class_count).map(|k| format!("score_{k}")));
    writer.write_record(&header)?;
    for (i, (row, label)) in table.iter().zip(labels).enumerate() {
        if row.len() != class_count {
            return Err(Error::Schema(format!("row {i} has ragged width")));
        }
        let mut record = vec![i.to_string(), label.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load a directory of `<candidate_id>.csv` files as a precomputed task.
///
/// All files must agree on the label vector and class count.
pub fn load_precomputed_dir(dir: &Path) -> Result<(TaskData, Vec<Candidate>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension().and_then(|e| e.to_str()) == Some("csv")).then_some(path)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no candidate csv files",
            dir.display()
        )));
    }
    let mut tables = BTreeMap::new();
    let mut candidates = Vec::new();
    let mut shared_labels: Option<Vec<usize>> = None;
    let mut class_count = 0;
    for path in &files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Schema(format!("{}: bad file name", path.display())))?
            .to_owned();
        let (table, labels) = load_score_csv(path)?;
        match &shared_labels {
            None => {
                class_count = table[0].len();
                shared_labels = Some(labels);
            }
            Some(existing) => {
                if *existing != labels || table[0].len() != class_count {
                    return Err(Error::Schema(format!(
                        "{}: labels or class count disagree with other candidates",
                        path.display()
                    )));
                }
            }
        }
        candidates.push(Candidate::new(id.clone(), TaskKind::Precomputed));
        tables.insert(id, Arc::new(table));
    }
    let labels = shared_labels.expect("at least one file");
    let data = TaskData {
        kind: TaskKind::Precomputed,
        features: Vec::new(),
        targets: Targets::Labels(labels),
        class_count,
        noise_scale: None,
        origin_seed: 0,
        tables,
    };
    Ok((data, candidates))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cand_a.csv");
        let table = vec![
            vec![0.1, 2.5000000000000004],
            vec![1.0 / 3.0, f64::MIN_POSITIVE],
            vec![-4.25, 17.0],
        ];
        let labels = vec![0, 1, 1];
        write_score_csv(&path, &table, &labels).unwrap();
        let (read_table, read_labels) = load_score_csv(&path).unwrap();
        assert_eq!(read_table, table);
        assert_eq!(read_labels, labels);
        // Re-exporting reproduces the same bytes.
        let second = dir.path().join("again.csv");
        write_score_csv(&second, &read_table, &read_labels).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&second).unwrap()
        );
    }

    #[test]
    fn header_schema_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "sample_id,label,score_0\n0,0,1.0\n").unwrap();
        assert!(matches!(load_score_csv(&path), Err(Error::Schema(_))));
        std::fs::write(&path, "sample_id,true_label,score_1\n0,0,1.0\n").unwrap();
        assert!(matches!(load_score_csv(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn bad_cells_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "sample_id,true_label,score_0,score_1\n0,0,oops,1.0\n",
        )
        .unwrap();
        assert!(matches!(load_score_csv(&path), Err(Error::Schema(_))));
        std::fs::write(&path, "sample_id,true_label,score_0,score_1\n0,5,0.5,1.0\n").unwrap();
        assert!(matches!(load_score_csv(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn directory_load_builds_task() {
        let dir = tempfile::tempdir().unwrap();
        let labels = vec![0, 1, 0];
        write_score_csv(
            &dir.path().join("a.csv"),
            [vec![0.1, 0.9], vec![0.8, 0.2], vec![0.4, 0.6]].as_ref(),
            &labels,
        )
        .unwrap();
        write_score_csv(
            &dir.path().join("b.csv"),
            [vec![0.3, 0.7], vec![0.6, 0.4], vec![0.5, 0.5]].as_ref(),
            &labels,
        )
        .unwrap();
        let (data, candidates) = load_precomputed_dir(dir.path()).unwrap();
        assert_eq!(data.class_count, 2);
        assert_eq!(data.len(), 3);
        assert_eq!(candidates.len(), 2);
        assert_eq!(candidates[0].id, "a");
        assert_eq!(candidates[1].id, "b");
    }
}
