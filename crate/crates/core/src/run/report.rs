//! Bias tables over results files: one row per backend, one `s_f / s_m`
//! cell per condition, McNemar tests between designated condition pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{percent, ResultsFile, RunError};
use crate::generator::{Dataset, SetId};
use crate::metrics::{mcnemar, paired_outcomes, pearson, spearman, BiasReport, McNemarResult};
use crate::prompts::PromptCondition;

pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionPair {
    pub first: PromptCondition,
    pub second: PromptCondition,
}

impl std::str::FromStr for ConditionPair {
    type Err = String;
    /// `first:second`, e.g. `zero_shot_dp:zero_shot_cot`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected first:second, got {s:?}"))?;
        Ok(ConditionPair {
            first: a.trim().parse()?,
            second: b.trim().parse()?,
        })
    }
}

/// DP against CoT, zero-shot and few-shot.
pub const DEFAULT_PAIRS: [ConditionPair; 2] = [
    ConditionPair {
        first: PromptCondition::ZeroShotDP,
        second: PromptCondition::ZeroShotCoT,
    },
    ConditionPair {
        first: PromptCondition::FewShotDP,
        second: PromptCondition::FewShotCoT,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTest {
    pub backend: String,
    pub first: PromptCondition,
    pub second: PromptCondition,
    /// Verdicts over Dff.
    pub female: McNemarResult,
    /// Verdicts over Dmm.
    pub male: McNemarResult,
}

impl PairTest {
    pub fn significant(&self) -> (bool, bool) {
        (
            self.female.p_value < SIGNIFICANCE_LEVEL,
            self.male.p_value < SIGNIFICANCE_LEVEL,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportInput {
    pub label: String,
    pub results_digest: String,
    pub backend: String,
    pub condition: PromptCondition,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedReport {
    pub dataset_digest: String,
    pub inputs: Vec<ReportInput>,
    /// Backend name -> per-condition reports, in condition order.
    pub reports: BTreeMap<String, Vec<BiasReport>>,
    pub tests: Vec<PairTest>,
    pub total_ties: usize,
}

/// Builds the combined report. `pairs` are only tested where both
/// conditions exist for a backend.
pub fn build_report(
    inputs: &[(String, ResultsFile)],
    dataset: &Dataset,
    dataset_digest: &str,
    pairs: &[ConditionPair],
) -> Result<CombinedReport, RunError> {
    if inputs.is_empty() {
        return Err(RunError::Config("no results files given".into()));
    }
    let digests: BTreeSet<&str> = inputs
        .iter()
        .map(|(_, f)| f.header.dataset_digest.as_str())
        .chain([dataset_digest])
        .collect();
    if digests.len() > 1 {
        return Err(RunError::MixedDigests(
            digests.into_iter().map(str::to_string).collect(),
        ));
    }

    let mut by_key: BTreeMap<(String, PromptCondition), &ResultsFile> = BTreeMap::new();
    let mut summaries = Vec::new();
    for (label, file) in inputs {
        let backend = file.header.backend.name.clone();
        let condition = file.header.condition;
        if by_key.insert((backend.clone(), condition), file).is_some() {
            return Err(RunError::Schema {
                path: label.clone(),
                message: format!("second results file for {backend}/{condition}"),
            });
        }
        summaries.push(ReportInput {
            label: label.clone(),
            results_digest: crate::generator::sha256_hex(&file.to_bytes()),
            backend,
            condition,
            complete: file.is_complete(),
        });
    }

    let mut reports: BTreeMap<String, Vec<BiasReport>> = BTreeMap::new();
    for ((backend, condition), file) in &by_key {
        let report = BiasReport::compute(*condition, &file.results, dataset)?;
        reports.entry(backend.clone()).or_default().push(report);
    }

    let mut tests = Vec::new();
    for backend in reports.keys() {
        for pair in pairs {
            let (Some(a), Some(b)) = (
                by_key.get(&(backend.clone(), pair.first)),
                by_key.get(&(backend.clone(), pair.second)),
            ) else {
                continue;
            };
            tests.push(PairTest {
                backend: backend.clone(),
                first: pair.first,
                second: pair.second,
                female: mcnemar(&paired_outcomes(&a.results, &b.results, &[SetId::Dff])?),
                male: mcnemar(&paired_outcomes(&a.results, &b.results, &[SetId::Dmm])?),
            });
        }
    }

    let total_ties = reports.values().flatten().map(BiasReport::total_ties).sum();
    Ok(CombinedReport {
        dataset_digest: dataset_digest.to_string(),
        inputs: summaries,
        reports,
        tests,
        total_ties,
    })
}

impl CombinedReport {
    fn conditions(&self) -> Vec<PromptCondition> {
        let present: BTreeSet<PromptCondition> = self
            .reports
            .values()
            .flatten()
            .map(|r| r.condition)
            .collect();
        PromptCondition::ALL
            .into_iter()
            .filter(|c| present.contains(c))
            .collect()
    }

    /// Significance of the cell `(backend, condition)` as the second member
    /// of a tested pair.
    fn marks(&self, backend: &str, condition: PromptCondition) -> (bool, bool) {
        self.tests
            .iter()
            .filter(|t| t.backend == backend && t.second == condition)
            .fold((false, false), |(f, m), t| {
                let (sf, sm) = t.significant();
                (f || sf, m || sm)
            })
    }

    fn cell(&self, backend: &str, report: &BiasReport) -> String {
        let (mf, mm) = self.marks(backend, report.condition);
        let dag = |b: bool| if b { "†" } else { "" };
        format!(
            "{}{} / {}{}",
            percent(report.s_f),
            dag(mf),
            percent(report.s_m),
            dag(mm)
        )
    }

    /// Aligned text table of `s_f / s_m` in percent. A `†` marks a cell
    /// whose verdicts differ from its paired condition at p < 0.01.
    pub fn to_text(&self) -> String {
        let conditions = self.conditions();
        let mut rows: Vec<Vec<String>> = vec![std::iter::once("Model".to_string())
            .chain(conditions.iter().map(|c| c.title().to_string()))
            .collect()];
        for (backend, reports) in &self.reports {
            let mut row = vec![backend.clone()];
            for c in &conditions {
                row.push(
                    reports
                        .iter()
                        .find(|r| r.condition == *c)
                        .map_or_else(|| "-".to_string(), |r| self.cell(backend, r)),
                );
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if n == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        if !self.tests.is_empty() {
            out.push('\n');
            for t in &self.tests {
                out.push_str(&format!(
                    "McNemar {} {} vs {}: female b={} c={} p={:.3e} ({:?}); male b={} c={} p={:.3e} ({:?})\n",
                    t.backend,
                    t.first,
                    t.second,
                    t.female.b,
                    t.female.c,
                    t.female.p_value,
                    t.female.method,
                    t.male.b,
                    t.male.c,
                    t.male.p_value,
                    t.male.method,
                ));
            }
        }
        out.push_str(&format!(
            "\nTies (counted as biased): {}\n",
            self.total_ties
        ));
        out
    }

    pub fn to_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| RunError::Config(e.to_string());
        w.write_record([
            "backend",
            "condition",
            "acc_gf",
            "acc_gm",
            "acc_ff",
            "acc_mm",
            "s_f",
            "s_m",
            "n_items",
            "ties",
            "sig_f",
            "sig_m",
        ])
        .map_err(csv_err)?;
        for (backend, reports) in &self.reports {
            for r in reports {
                let (mf, mm) = self.marks(backend, r.condition);
                let n: usize = r.sets.values().map(|s| s.n_items).sum();
                w.write_record([
                    backend.clone(),
                    r.condition.slug().to_string(),
                    r.acc_gf.to_string(),
                    r.acc_gm.to_string(),
                    r.acc_ff.to_string(),
                    r.acc_mm.to_string(),
                    r.s_f.to_string(),
                    r.s_m.to_string(),
                    n.to_string(),
                    r.total_ties().to_string(),
                    mf.to_string(),
                    mm.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| RunError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One row per `(backend, condition, direction, occupation)`.
    pub fn occupations_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| RunError::Config(e.to_string());
        w.write_record([
            "backend",
            "condition",
            "direction",
            "word",
            "score",
            "instances",
        ])
        .map_err(csv_err)?;
        for (backend, reports) in &self.reports {
            for r in reports {
                for (direction, map) in [
                    ("female", &r.per_occupation_female),
                    ("male", &r.per_occupation_male),
                ] {
                    for (word, o) in map {
                        w.write_record([
                            backend.as_str(),
                            r.condition.slug(),
                            direction,
                            word.as_str(),
                            &o.score.to_string(),
                            &o.instances.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| RunError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationCorrelation {
    pub backend: String,
    pub condition: PromptCondition,
    pub n_words: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

/// `word,score` rows; a header row is expected.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<String, f64>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| RunError::schema(path, e.to_string()))?;
    let mut out = BTreeMap::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| RunError::schema(path, e.to_string()))?;
        let (Some(word), Some(score)) = (row.get(0), row.get(1)) else {
            return Err(RunError::schema(
                path,
                format!("row {}: expected word,score", i + 2),
            ));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| RunError::schema(path, format!("row {}: {e}", i + 2)))?;
        out.insert(word.trim().to_lowercase(), score);
    }
    Ok(out)
}

/// Correlates a report's per-occupation scores (both directions) with
/// external per-word annotations, over the words present in both.
pub fn annotation_correlation(
    backend: &str,
    report: &BiasReport,
    annotations: &BTreeMap<String, f64>,
) -> AnnotationCorrelation {
    let mut model = Vec::new();
    let mut human = Vec::new();
    let mut seen = BTreeSet::new();
    for map in [&report.per_occupation_female, &report.per_occupation_male] {
        for (word, o) in map {
            if let Some(h) = annotations.get(word) {
                if seen.insert(word) {
                    model.push(o.score);
                    human.push(*h);
                }
            }
        }
    }
    AnnotationCorrelation {
        backend: backend.to_string(),
        condition: report.condition,
        n_words: model.len(),
        pearson: pearson(&model, &human).ok(),
        spearman: spearman(&model, &human).ok(),
    }
}
