//! Orchestration used by the command-line tool: configuration, resumable
//! evaluation, reports, correlation tables, tagging F-scores and manifests.

mod config;
mod correlate;
mod eval;
mod fscore;
mod manifest;
mod report;

use std::path::Path;

use thiserror::Error;

pub use config::{BackendSpec, ConfigMap, RunConfig, CONFIG_SECTIONS};
pub use correlate::{correlate_table, read_score_table, CorrelationMatrix, ScoreTable};
pub use eval::{
    eval_condition, exemplar_pool, results_file_name, EvalContext, EvalOptions, EvalSummary,
    FailedItem, ResultsFile, ResultsHeader,
};
pub use fscore::{run_fscore, FscoreReport, LabelScore};
pub use manifest::{ArtifactDigest, RunManifest, TOOL_VERSION};
pub use report::{
    annotation_correlation, build_report, read_annotations, AnnotationCorrelation, CombinedReport,
    ConditionPair, PairTest, ReportInput, DEFAULT_PAIRS, SIGNIFICANCE_LEVEL,
};

use crate::cot_debias::DownstreamError;
use crate::generator::DatasetError;
use crate::lexicon::LexiconError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::prompts::{PromptError, RenderedItem};

/// How a failure should be reported to a calling script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, config, lexicon or templates.
    Usage,
    /// A backend could not be reached or misbehaved.
    Backend,
    /// An input artifact is unreadable or inconsistent.
    Data,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Downstream(#[from] DownstreamError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("inputs come from different datasets: {}", .0.join(", "))]
    MixedDigests(Vec<String>),
    #[error("all {count} item(s) failed; first error: {first}")]
    AllFailed { count: usize, first: String },
}

fn dataset_class(e: &DatasetError) -> ErrorClass {
    match e {
        DatasetError::Io { .. } | DatasetError::Schema { .. } => ErrorClass::Data,
        _ => ErrorClass::Usage,
    }
}

fn prompt_class(e: &PromptError) -> ErrorClass {
    match e {
        PromptError::Template(_) | PromptError::Io { .. } => ErrorClass::Usage,
        _ => ErrorClass::Data,
    }
}

fn model_class(e: &ModelError) -> ErrorClass {
    match e {
        ModelError::Config(_) => ErrorClass::Usage,
        _ => ErrorClass::Backend,
    }
}

fn downstream_class(e: &DownstreamError) -> ErrorClass {
    match e {
        DownstreamError::Model(m) => model_class(m),
        _ => ErrorClass::Data,
    }
}

/// Class of the first error in `err`'s source chain that belongs to this
/// crate.
pub fn classify(err: &(dyn std::error::Error + 'static)) -> Option<ErrorClass> {
    let mut cur = Some(err);
    while let Some(e) = cur {
        if let Some(x) = e.downcast_ref::<RunError>() {
            return Some(x.class());
        }
        if let Some(x) = e.downcast_ref::<DatasetError>() {
            return Some(dataset_class(x));
        }
        if let Some(x) = e.downcast_ref::<PromptError>() {
            return Some(prompt_class(x));
        }
        if let Some(x) = e.downcast_ref::<ModelError>() {
            return Some(model_class(x));
        }
        if let Some(x) = e.downcast_ref::<DownstreamError>() {
            return Some(downstream_class(x));
        }
        if e.downcast_ref::<LexiconError>().is_some() {
            return Some(ErrorClass::Usage);
        }
        if e.downcast_ref::<MetricsError>().is_some() {
            return Some(ErrorClass::Data);
        }
        cur = e.source();
    }
    None
}

impl RunError {
    pub fn class(&self) -> ErrorClass {
        match self {
            RunError::Config(_) | RunError::Lexicon(_) => ErrorClass::Usage,
            RunError::Dataset(e) => dataset_class(e),
            RunError::Prompt(e) => prompt_class(e),
            RunError::Model(e) => model_class(e),
            RunError::Downstream(e) => downstream_class(e),
            RunError::AllFailed { .. } => ErrorClass::Backend,
            RunError::Metrics(_)
            | RunError::Io { .. }
            | RunError::Schema { .. }
            | RunError::MixedDigests(_) => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn schema(path: &Path, message: impl Into<String>) -> Self {
        RunError::Schema {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// Both completed prompts of an item, in the layout of the golden files.
pub fn render_pair_text(item: &RenderedItem) -> String {
    format!(
        "=== anti ===\n{p}{a}\n=== pro ===\n{p}{b}\n",
        p = item.prefix,
        a = item.anti_answer,
        b = item.pro_answer
    )
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| RunError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

/// Formats a rate as a percentage with one decimal; negative zero prints as `0.0`.
pub fn percent(x: f64) -> String {
    let s = format!("{:.1}", x * 100.0);
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}
