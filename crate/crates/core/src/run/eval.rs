//! Resumable scoring of one `(backend, condition)` over a dataset.
//!
//! Results file: a header line, then one [`ItemResult`] per line. Items are
//! keyed by `(instance_id, set_id)`; a rerun reads what is already on disk,
//! scores only the missing keys and appends them. A torn final line (from a
//! killed process) is discarded. Once every key is present the file is
//! rewritten in key order, so an interrupted-and-resumed run ends with the
//! same bytes as an uninterrupted one.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{write_atomic, RunError};
use crate::generator::{build_dataset, sha256_hex, Dataset, SetId};
use crate::lexicon::Lexicon;
use crate::metrics::ItemResult;
use crate::model::{score_pair, Backend, BackendDescriptor, GenerateRequest, ModelError};
use crate::prompts::{render_item, CotMode, FewShotConfig, PromptCondition, PromptTemplateSet};
use crate::rng::mix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub dataset_digest: String,
    pub backend: BackendDescriptor,
    pub condition: PromptCondition,
    pub cot_mode: CotMode,
    pub normalize: bool,
    /// Present for few-shot conditions only.
    pub fewshot: Option<FewShotConfig>,
    pub templates_digest: String,
    /// Number of keys a complete file holds.
    pub n_items: usize,
}

impl ResultsHeader {
    /// Fields that must agree before a file can be resumed.
    fn mismatch(&self, other: &ResultsHeader) -> Option<String> {
        let checks = [
            (
                "dataset digest",
                self.dataset_digest != other.dataset_digest,
            ),
            ("backend", self.backend != other.backend),
            ("condition", self.condition != other.condition),
            ("cot mode", self.cot_mode != other.cot_mode),
            ("normalization", self.normalize != other.normalize),
            ("few-shot config", self.fewshot != other.fewshot),
            ("templates", self.templates_digest != other.templates_digest),
            ("item count", self.n_items != other.n_items),
        ];
        checks
            .iter()
            .find(|(_, differs)| *differs)
            .map(|(what, _)| what.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub header: ResultsHeader,
    pub results: Vec<ItemResult>,
}

impl ResultsFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        let (file, _) = Self::parse(path, &bytes)?;
        Ok(file)
    }

    /// Parses file bytes, returning the number of bytes holding complete
    /// lines (a torn trailing line is not counted).
    fn parse(path: &Path, bytes: &[u8]) -> Result<(Self, usize), RunError> {
        let text = std::str::from_utf8(bytes).map_err(|e| RunError::schema(path, e.to_string()))?;
        let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
        if complete_len < text.len() {
            warn!(path = %path.display(), "discarding torn final line");
        }
        let mut lines = text[..complete_len].lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| RunError::schema(path, "missing header line"))?;
        let header: ResultsHeader = serde_json::from_str(first)
            .map_err(|e| RunError::schema(path, format!("line 1: {e}")))?;
        let mut seen = BTreeSet::new();
        let mut results = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let r: ItemResult = serde_json::from_str(line)
                .map_err(|e| RunError::schema(path, format!("line {}: {e}", i + 1)))?;
            if r.condition != header.condition {
                return Err(RunError::schema(
                    path,
                    format!(
                        "line {}: condition {} differs from header",
                        i + 1,
                        r.condition
                    ),
                ));
            }
            if !seen.insert(r.key()) {
                return Err(RunError::schema(
                    path,
                    format!(
                        "line {}: duplicate item {}/{}",
                        i + 1,
                        r.instance_id,
                        r.set_id
                    ),
                ));
            }
            results.push(r);
        }
        Ok((ResultsFile { header, results }, complete_len))
    }

    pub fn is_complete(&self) -> bool {
        self.results.len() == self.header.n_items
    }

    /// Canonical bytes: header, then results sorted by key.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sorted: Vec<&ItemResult> = self.results.iter().collect();
        sorted.sort_by_key(|r| r.key());
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for r in sorted {
            serde_json::to_writer(&mut out, r).expect("result serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RunError> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    /// Copy with every log-likelihood shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        ResultsFile {
            header: self.header.clone(),
            results: self.results.iter().map(|r| r.shifted(delta)).collect(),
        }
    }
}

/// `results_<backend>_<condition>.jsonl`, with unsafe characters replaced.
pub fn results_file_name(backend: &str, condition: PromptCondition) -> String {
    let safe: String = backend
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("results_{safe}_{}.jsonl", condition.slug())
}

/// The few-shot exemplar pool: a separate dataset drawn with the dataset's
/// bounds under a seed derived from the dataset seed and the exemplar seed.
pub fn exemplar_pool(
    lexicon: &Lexicon,
    dataset: &Dataset,
    config: &FewShotConfig,
    pool_size: usize,
) -> Result<Dataset, RunError> {
    Ok(build_dataset(
        lexicon,
        pool_size,
        mix(dataset.seed ^ mix(config.exemplar_seed)),
        dataset.bounds,
        dataset.append_order,
    )?)
}

pub struct EvalContext<'a> {
    pub dataset: &'a Dataset,
    pub dataset_digest: &'a str,
    pub lexicon: &'a Lexicon,
    pub templates: &'a PromptTemplateSet,
    /// Required for few-shot conditions.
    pub pool: Option<&'a Dataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub cot_mode: CotMode,
    pub normalize: bool,
    pub fewshot: FewShotConfig,
    pub chunk_size: usize,
    pub max_items: Option<usize>,
    pub max_generation_units: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            cot_mode: CotMode::default(),
            normalize: false,
            fewshot: FewShotConfig::default(),
            chunk_size: 256,
            max_items: None,
            max_generation_units: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedItem {
    pub instance_id: u64,
    pub set_id: SetId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub path: PathBuf,
    pub total: usize,
    pub already_scored: usize,
    pub scored: usize,
    pub failed: Vec<FailedItem>,
    pub complete: bool,
    /// Set when a backend became unreachable and the run stopped early.
    pub aborted: Option<String>,
}

fn score_one(
    backend: &dyn Backend,
    ctx: &EvalContext<'_>,
    condition: PromptCondition,
    options: &EvalOptions,
    key: (u64, SetId),
) -> Result<ItemResult, String> {
    let (id, set) = key;
    let instance = ctx
        .dataset
        .get(id)
        .ok_or_else(|| format!("instance {id} missing from dataset"))?;
    let fewshot = if condition.is_few_shot() {
        let pool = ctx
            .pool
            .ok_or("few-shot condition without an exemplar pool")?;
        Some((&options.fewshot, pool))
    } else {
        None
    };
    let rendered = render_item(
        instance,
        set,
        condition,
        ctx.templates,
        ctx.lexicon,
        fewshot,
        options.cot_mode,
    )
    .map_err(|e| e.to_string())?;
    let prefix = if rendered.awaiting_cot {
        let generated = backend
            .generate(&GenerateRequest {
                instance_id: Some(id),
                prefix: &rendered.prefix,
                stop: ctx.templates.answer_prefix.trim(),
                max_units: options.max_generation_units,
            })
            .map_err(|e| e.to_string())?;
        rendered.with_generated_cot(&generated, ctx.templates)
    } else {
        rendered.prefix.clone()
    };
    let scored = score_pair(
        backend,
        Some(id),
        &prefix,
        &rendered.anti_answer,
        &rendered.pro_answer,
        options.normalize,
    )
    .map_err(|e| match e {
        ModelError::BackendUnavailable { .. } => format!("unavailable: {e}"),
        other => other.to_string(),
    })?;
    Ok(ItemResult::new(id, set, condition, scored))
}

/// Scores every missing key of `(backend, condition)` into `path`.
pub fn eval_condition(
    backend: &dyn Backend,
    ctx: &EvalContext<'_>,
    condition: PromptCondition,
    options: &EvalOptions,
    path: &Path,
) -> Result<EvalSummary, RunError> {
    let keys: Vec<(u64, SetId)> = ctx
        .dataset
        .instances
        .iter()
        .flat_map(|i| SetId::ALL.into_iter().map(move |s| (i.id(), s)))
        .collect();
    let header = ResultsHeader {
        dataset_digest: ctx.dataset_digest.to_string(),
        backend: backend.descriptor().clone(),
        condition,
        cot_mode: options.cot_mode,
        normalize: options.normalize,
        fewshot: condition.is_few_shot().then_some(options.fewshot),
        templates_digest: sha256_hex(ctx.templates.to_text().as_bytes()),
        n_items: keys.len(),
    };
    if condition.is_few_shot() && ctx.pool.is_none() {
        return Err(RunError::Config(format!(
            "{condition} needs an exemplar pool"
        )));
    }

    let mut file = if path.exists() {
        let bytes = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
        let (existing, valid_len) = ResultsFile::parse(path, &bytes)?;
        if let Some(what) = existing.header.mismatch(&header) {
            return Err(RunError::schema(
                path,
                format!(
                    "existing results were produced with a different {what}; refusing to resume"
                ),
            ));
        }
        if valid_len < bytes.len() {
            let f = std::fs::OpenOptions::new()
                .write(true)
                .open(path)
                .map_err(|e| RunError::io(path, e))?;
            f.set_len(valid_len as u64)
                .map_err(|e| RunError::io(path, e))?;
        }
        existing
    } else {
        let mut bytes = serde_json::to_vec(&header).expect("header serializes");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| RunError::io(path, e))?;
        ResultsFile {
            header: header.clone(),
            results: Vec::new(),
        }
    };

    let done: BTreeSet<(u64, SetId)> = file.results.iter().map(|r| r.key()).collect();
    let already_scored = done.len();
    let mut pending: Vec<(u64, SetId)> = keys.into_iter().filter(|k| !done.contains(k)).collect();
    if let Some(budget) = options.max_items {
        pending.truncate(budget);
    }

    let mut out = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| RunError::io(path, e))?;
    let mut failed = Vec::new();
    let mut scored = 0usize;
    let mut aborted = None;
    for chunk in pending.chunks(options.chunk_size.max(1)) {
        let outcomes: Vec<Result<ItemResult, String>> = chunk
            .par_iter()
            .map(|&key| score_one(backend, ctx, condition, options, key))
            .collect();
        let mut buf = Vec::new();
        for (key, outcome) in chunk.iter().zip(outcomes) {
            match outcome {
                Ok(r) => {
                    serde_json::to_writer(&mut buf, &r).expect("result serializes");
                    buf.push(b'\n');
                    file.results.push(r);
                    scored += 1;
                }
                Err(error) => {
                    if aborted.is_none() && error.starts_with("unavailable: ") {
                        aborted = Some(error.clone());
                    }
                    failed.push(FailedItem {
                        instance_id: key.0,
                        set_id: key.1,
                        error,
                    });
                }
            }
        }
        out.write_all(&buf).map_err(|e| RunError::io(path, e))?;
        out.flush().map_err(|e| RunError::io(path, e))?;
        if aborted.is_some() {
            break;
        }
    }
    drop(out);

    let complete = file.is_complete();
    if complete {
        file.write(path)?;
    }
    info!(
        backend = %backend.descriptor().name,
        %condition,
        scored,
        failed = failed.len(),
        complete,
        "evaluation pass finished"
    );
    Ok(EvalSummary {
        path: path.to_path_buf(),
        total: file.header.n_items,
        already_scored,
        scored,
        failed,
        complete,
        aborted,
    })
}
