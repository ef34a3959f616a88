//! Word-gender tagging preambles for downstream task text, and the gold
//! word/label pairs used to score a model's own tagging.

use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{GenderLabel, Lexicon};
use crate::metrics::{GenderPairPrediction, PairLabel};
use crate::model::{argmax, Backend, GenerateRequest, ModelError, ScoreRequest};
use crate::prompts::PromptTemplateSet;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("item {item_id}: {message}")]
    Invalid { item_id: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownstreamItem {
    pub item_id: String,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub gold_index: Option<usize>,
}

impl DownstreamItem {
    pub fn validate(&self) -> Result<(), DownstreamError> {
        let bad = |message: String| DownstreamError::Invalid {
            item_id: self.item_id.clone(),
            message,
        };
        if let Some(g) = self.gold_index {
            if self.candidates.len() < 2 {
                return Err(bad(format!(
                    "gold_index needs at least 2 candidates, found {}",
                    self.candidates.len()
                )));
            }
            if g >= self.candidates.len() {
                return Err(bad(format!(
                    "gold_index {g} out of range for {} candidates",
                    self.candidates.len()
                )));
            }
        }
        Ok(())
    }

    /// Segment texts joined by newlines, without their names.
    pub fn text(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Reads a line-delimited item file; blank lines are skipped.
pub fn read_items(path: impl AsRef<Path>) -> Result<Vec<DownstreamItem>, DownstreamError> {
    let file = std::fs::File::open(path)?;
    read_items_from(std::io::BufReader::new(file))
}

pub fn read_items_from(r: impl BufRead) -> Result<Vec<DownstreamItem>, DownstreamError> {
    let mut items = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: DownstreamItem =
            serde_json::from_str(&line).map_err(|e| DownstreamError::Schema {
                line: i + 1,
                message: e.to_string(),
            })?;
        item.validate()?;
        items.push(item);
    }
    Ok(items)
}

fn pair_label(label: GenderLabel) -> Option<PairLabel> {
    match label {
        GenderLabel::Feminine => Some(PairLabel::Feminine),
        GenderLabel::Masculine => Some(PairLabel::Masculine),
        GenderLabel::NeutralOccupation => Some(PairLabel::Neutral),
        GenderLabel::Unknown => None,
    }
}

/// Lexicon words in `text`, lowercased, first occurrence first. Occupations
/// are labelled neutral.
pub fn extract_gendered_words(text: &str, lexicon: &Lexicon) -> Vec<GenderPairPrediction> {
    let mut seen = std::collections::HashSet::new();
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .filter_map(|t| {
            let w = t.to_lowercase();
            let label = pair_label(lexicon.gender_of(&w))?;
            seen.insert(w.clone())
                .then_some(GenderPairPrediction { word: w, label })
        })
        .collect()
}

pub fn tagging_line(word: &str, label: PairLabel) -> String {
    format!("{word} is a {label} word.")
}

/// Inverse of [`tagging_line`]. Surrounding whitespace and a trailing
/// period are tolerated.
pub fn parse_tagging_line(line: &str) -> Option<GenderPairPrediction> {
    let line = line.trim();
    let body = line.strip_suffix('.').unwrap_or(line);
    let (word, rest) = body.split_once(" is a ")?;
    let label = rest.strip_suffix(" word")?.parse::<PairLabel>().ok()?;
    let word = word.trim();
    if word.is_empty() || word.contains(char::is_whitespace) {
        return None;
    }
    Some(GenderPairPrediction::new(word, label))
}

/// Parsed pairs plus the number of non-blank lines that did not parse.
pub fn parse_tagging_lines(text: &str) -> (Vec<GenderPairPrediction>, usize) {
    let mut pairs = Vec::new();
    let mut failures = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match parse_tagging_line(line) {
            Some(p) => pairs.push(p),
            None => failures += 1,
        }
    }
    (pairs, failures)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggingPreamble {
    pub lines: Vec<String>,
    pub pairs: Vec<GenderPairPrediction>,
}

pub fn build_tagging_preamble(item: &DownstreamItem, lexicon: &Lexicon) -> TaggingPreamble {
    let pairs = extract_gendered_words(&item.text(), lexicon);
    TaggingPreamble {
        lines: pairs
            .iter()
            .map(|p| tagging_line(&p.word, p.label))
            .collect(),
        pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrapMode {
    Plain,
    Dp,
    Cot,
}

impl WrapMode {
    pub const ALL: [WrapMode; 3] = [WrapMode::Plain, WrapMode::Dp, WrapMode::Cot];

    pub fn as_str(self) -> &'static str {
        match self {
            WrapMode::Plain => "plain",
            WrapMode::Dp => "dp",
            WrapMode::Cot => "cot",
        }
    }
}

impl fmt::Display for WrapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WrapMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WrapMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown wrap mode {s:?} (expected plain, dp or cot)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedItem {
    pub prefix: String,
    pub candidates: Vec<String>,
}

/// `Name: text` per segment, then the answer prefix. `Dp` appends the DP
/// sentence to the last segment line; `Cot` inserts the tagging lines before
/// the answer prefix.
pub fn wrap_item(
    item: &DownstreamItem,
    mode: WrapMode,
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
) -> WrappedItem {
    let mut lines: Vec<String> = item
        .segments
        .iter()
        .map(|s| format!("{}: {}", s.name, s.text))
        .collect();
    if mode == WrapMode::Dp {
        match lines.last_mut() {
            Some(last) => {
                last.push(' ');
                last.push_str(&templates.dp_suffix);
            }
            None => lines.push(templates.dp_suffix.clone()),
        }
    }
    if mode == WrapMode::Cot {
        lines.extend(build_tagging_preamble(item, lexicon).lines);
    }
    let mut prefix = lines.join("\n");
    if !prefix.is_empty() {
        prefix.push('\n');
    }
    prefix.push_str(&templates.answer_prefix);
    WrappedItem {
        prefix,
        candidates: item.candidates.clone(),
    }
}

/// Scores every candidate after the wrapped prefix and returns the argmax
/// index (lowest index on ties) with the per-candidate log-likelihoods.
pub fn select_answer(
    backend: &dyn Backend,
    wrapped: &WrappedItem,
) -> Result<Option<(usize, Vec<f64>)>, ModelError> {
    let scores = wrapped
        .candidates
        .iter()
        .map(|c| {
            backend
                .score(&ScoreRequest {
                    instance_id: None,
                    prefix: &wrapped.prefix,
                    continuation: c,
                })
                .map(|s| s.logprob)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(argmax(&scores).map(|i| (i, scores)))
}

/// Prompt asking a model to tag the gendered words of the item text.
pub fn tagging_prompt(item: &DownstreamItem, templates: &PromptTemplateSet) -> String {
    let mut out = String::new();
    for s in &item.segments {
        out.push_str(&format!("{}: {}\n", s.name, s.text));
    }
    out.push_str(&templates.tagging_instruction);
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggingOutcome {
    pub item_id: String,
    pub predicted: Vec<GenderPairPrediction>,
    pub gold: Vec<GenderPairPrediction>,
    pub parse_failures: usize,
}

/// Upper bound on generated characters for one tagging block.
pub const TAGGING_MAX_UNITS: usize = 4096;

pub fn evaluate_tagging(
    backend: &dyn Backend,
    item: &DownstreamItem,
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
) -> Result<TaggingOutcome, ModelError> {
    let prompt = tagging_prompt(item, templates);
    let generated = backend.generate(&GenerateRequest {
        instance_id: None,
        prefix: &prompt,
        stop: templates.answer_prefix.trim(),
        max_units: TAGGING_MAX_UNITS,
    })?;
    let (predicted, parse_failures) = parse_tagging_lines(&generated);
    Ok(TaggingOutcome {
        item_id: item.item_id.clone(),
        predicted,
        gold: extract_gendered_words(&item.text(), lexicon),
        parse_failures,
    })
}
