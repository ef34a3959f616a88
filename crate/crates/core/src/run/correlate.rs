//! Correlation matrices over a labelled score table (one row per model,
//! one column per metric).

use std::path::Path;

use serde::Serialize;

use super::RunError;
use crate::metrics::{pearson, spearman, MetricsError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub labels: Vec<String>,
    pub metrics: Vec<String>,
    /// `columns[j][i]`: metric `j` for row `i`.
    pub columns: Vec<Vec<f64>>,
}

/// CSV with a header row; the first column holds row labels, every other
/// column must be numeric.
pub fn read_score_table(path: &Path) -> Result<ScoreTable, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::schema(path, e.to_string()))?;
    let headers = r
        .headers()
        .map_err(|e| RunError::schema(path, e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(RunError::schema(
            path,
            "need a label column and at least one metric column",
        ));
    }
    let metrics: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    let mut labels = Vec::new();
    let mut columns = vec![Vec::new(); metrics.len()];
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| RunError::schema(path, e.to_string()))?;
        labels.push(row.get(0).unwrap_or_default().trim().to_string());
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = row.get(j + 1).unwrap_or_default().trim();
            let v: f64 = cell.parse().map_err(|_| {
                RunError::schema(
                    path,
                    format!(
                        "row {}, column {:?}: {cell:?} is not a number",
                        i + 2,
                        metrics[j]
                    ),
                )
            })?;
            col.push(v);
        }
    }
    Ok(ScoreTable {
        labels,
        metrics,
        columns,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub metrics: Vec<String>,
    pub n: usize,
    pub pearson: Vec<Vec<f64>>,
    pub spearman: Vec<Vec<f64>>,
}

pub fn correlate_table(table: &ScoreTable) -> Result<CorrelationMatrix, RunError> {
    let k = table.metrics.len();
    let n = table.labels.len();
    if k < 2 || n < 2 {
        return Err(MetricsError::DegenerateInput(format!(
            "need at least 2 metrics and 2 rows, got {k} and {n}"
        ))
        .into());
    }
    for (name, col) in table.metrics.iter().zip(&table.columns) {
        if col.iter().all(|v| *v == col[0]) {
            return Err(
                MetricsError::DegenerateInput(format!("column {name:?} is constant")).into(),
            );
        }
    }
    let mut p = vec![vec![1.0; k]; k];
    let mut s = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&table.columns[i], &table.columns[j]);
            p[i][j] = pearson(a, b)?;
            p[j][i] = p[i][j];
            s[i][j] = spearman(a, b)?;
            s[j][i] = s[i][j];
        }
    }
    Ok(CorrelationMatrix {
        metrics: table.metrics.clone(),
        n,
        pearson: p,
        spearman: s,
    })
}

impl CorrelationMatrix {
    /// `method,metric,<metrics...>` rows for both matrices.
    pub fn to_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| RunError::Config(e.to_string());
        let header: Vec<&str> = ["method", "metric"]
            .into_iter()
            .chain(self.metrics.iter().map(String::as_str))
            .collect();
        w.write_record(&header).map_err(err)?;
        for (method, m) in [("pearson", &self.pearson), ("spearman", &self.spearman)] {
            for (name, row) in self.metrics.iter().zip(m) {
                let mut rec = vec![method.to_string(), name.clone()];
                rec.extend(row.iter().map(|v| format!("{v:.6}")));
                w.write_record(&rec).map_err(err)?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| RunError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
