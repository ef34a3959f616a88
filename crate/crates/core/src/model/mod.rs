//! Backends that turn prompts into continuation log-likelihoods (natural
//! log) or generated text.

mod remote;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteConfig, ENV_API_BASE, ENV_API_KEY};
pub use synthetic::{SyntheticBackend, SyntheticConfig};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend {0} does not support generation")]
    GenerationUnsupported(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("empty continuation")]
    EmptyContinuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub name: String,
    pub parameters: BTreeMap<String, String>,
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

/// Log-likelihood of a continuation and the number of units (tokens for
/// remote backends, characters for synthetic ones) it was summed over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationScore {
    pub logprob: f64,
    pub units: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub ll_anti: f64,
    pub ll_pro: f64,
}

impl ScoredPair {
    pub fn margin(&self) -> f64 {
        self.ll_anti - self.ll_pro
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    /// Item identity used by synthetic backends to seed their draws.
    pub instance_id: Option<u64>,
    pub prefix: &'a str,
    pub continuation: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct GenerateRequest<'a> {
    pub instance_id: Option<u64>,
    pub prefix: &'a str,
    pub stop: &'a str,
    pub max_units: usize,
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// `log P(continuation | prefix)`.
    fn score(&self, req: &ScoreRequest<'_>) -> Result<ContinuationScore, ModelError>;

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ModelError>;
}

/// Scores both answers of a pair under one shared prefix. With `normalize`,
/// each log-likelihood is divided by its unit count.
pub fn score_pair(
    backend: &dyn Backend,
    instance_id: Option<u64>,
    prefix: &str,
    anti: &str,
    pro: &str,
    normalize: bool,
) -> Result<ScoredPair, ModelError> {
    let one = |continuation: &str| -> Result<f64, ModelError> {
        if continuation.is_empty() {
            return Err(ModelError::EmptyContinuation);
        }
        let s = backend.score(&ScoreRequest {
            instance_id,
            prefix,
            continuation,
        })?;
        if !s.logprob.is_finite() {
            return Err(ModelError::Protocol(format!(
                "non-finite log-likelihood {} for {continuation:?}",
                s.logprob
            )));
        }
        Ok(if normalize && s.units > 0 {
            s.logprob / s.units as f64
        } else {
            s.logprob
        })
    };
    Ok(ScoredPair {
        ll_anti: one(anti)?,
        ll_pro: one(pro)?,
    })
}

/// Cuts `text` at the first `stop` occurrence and at `max_units` characters.
pub fn truncate_generation(text: &str, stop: &str, max_units: usize) -> String {
    let cut = if stop.is_empty() {
        text
    } else {
        text.find(stop).map_or(text, |i| &text[..i])
    };
    cut.chars().take(max_units).collect()
}

/// Index of the highest-scoring candidate; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= *s => {}
            _ => best = Some(i),
        }
    }
    best
}
