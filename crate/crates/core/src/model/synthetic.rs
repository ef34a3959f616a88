//! A deterministic stand-in for a language model with a tunable occupation
//! bias.
//!
//! The backend reads the final question of the prompt (instruction line,
//! word list, optional explanation lines) and forms an internal count: the
//! number of target-gender lexicon words, plus one for every target-
//! stereotyped occupation whose Bernoulli(beta) draw fires. The draw for a
//! word is keyed by `(seed, instance_id, word)`, so it is stable across
//! conditions and test sets. With `follow_cot`, explanation lines present
//! in the prompt override the count (number of positive lines). A count
//! answer `k` then scores `-sharpness * |k - count|`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    truncate_generation, Backend, BackendDescriptor, BackendKind, ContinuationScore,
    GenerateRequest, ModelError, ScoreRequest,
};
use crate::cot_debias::{extract_gendered_words, tagging_line};
use crate::lexicon::{GenderLabel, Lexicon, TargetGender};
use crate::metrics::PairLabel;
use crate::prompts::PromptTemplateSet;
use crate::rng::{fnv1a, mix, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Probability that a stereotyped occupation is counted as gendered.
    pub beta: f64,
    /// Per-word overrides of `beta`.
    #[serde(default)]
    pub word_beta: BTreeMap<String, f64>,
    pub follow_cot: bool,
    pub sharpness: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            beta: 0.0,
            word_beta: BTreeMap::new(),
            follow_cot: true,
            sharpness: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let in_unit = |b: f64| (0.0..=1.0).contains(&b);
        if !in_unit(self.beta) {
            return Err(ModelError::Config(format!(
                "beta {} outside [0, 1]",
                self.beta
            )));
        }
        if let Some((w, b)) = self.word_beta.iter().find(|(_, b)| !in_unit(**b)) {
            return Err(ModelError::Config(format!(
                "beta for {w:?} is {b}, outside [0, 1]"
            )));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(ModelError::Config(format!(
                "sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        Ok(())
    }
}

/// The last counting question found in a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Question {
    target: TargetGender,
    words: Vec<String>,
    cot_lines: Vec<String>,
}

pub struct SyntheticBackend {
    descriptor: BackendDescriptor,
    config: SyntheticConfig,
    lexicon: Arc<Lexicon>,
    templates: Arc<PromptTemplateSet>,
    score_calls: AtomicU64,
    generate_calls: AtomicU64,
}

impl SyntheticBackend {
    pub fn new(
        name: impl Into<String>,
        config: SyntheticConfig,
        lexicon: Arc<Lexicon>,
        templates: Arc<PromptTemplateSet>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut parameters = BTreeMap::from([
            ("beta".to_string(), config.beta.to_string()),
            ("follow_cot".to_string(), config.follow_cot.to_string()),
            ("sharpness".to_string(), config.sharpness.to_string()),
            ("seed".to_string(), config.seed.to_string()),
        ]);
        for (w, b) in &config.word_beta {
            parameters.insert(format!("beta.{w}"), b.to_string());
        }
        Ok(SyntheticBackend {
            descriptor: BackendDescriptor {
                kind: BackendKind::Synthetic,
                name: name.into(),
                parameters,
            },
            config,
            lexicon,
            templates,
            score_calls: AtomicU64::new(0),
            generate_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn score_calls(&self) -> u64 {
        self.score_calls.load(Ordering::Relaxed)
    }

    pub fn generate_calls(&self) -> u64 {
        self.generate_calls.load(Ordering::Relaxed)
    }

    fn beta_for(&self, word: &str) -> f64 {
        self.config
            .word_beta
            .get(word)
            .copied()
            .unwrap_or(self.config.beta)
    }

    /// Whether this backend treats occupation `word` as gendered for `instance_id`.
    pub fn occupation_fires(&self, instance_id: u64, word: &str) -> bool {
        let key = mix(self.config.seed ^ fnv1a(word.as_bytes()));
        SplitMix64::keyed(key, instance_id).bernoulli(self.beta_for(word))
    }

    fn labels_as_target(&self, instance_id: u64, word: &str, target: TargetGender) -> bool {
        match self.lexicon.gender_of(word) {
            label if label == target.label() => true,
            GenderLabel::NeutralOccupation => {
                self.lexicon.is_stereotyped_for(word, target)
                    && self.occupation_fires(instance_id, word)
            }
            _ => false,
        }
    }

    fn parse_question(&self, prompt: &str) -> Option<Question> {
        let lines: Vec<&str> = prompt.lines().collect();
        let mut instructions = [
            (
                TargetGender::Female,
                self.templates.instruction_female.as_str(),
            ),
            (TargetGender::Male, self.templates.instruction_male.as_str()),
        ];
        // longer instruction first, in case one is a prefix of the other
        instructions.sort_by_key(|(_, s)| std::cmp::Reverse(s.len()));
        let (idx, target) = lines.iter().enumerate().rev().find_map(|(i, line)| {
            instructions
                .iter()
                .find(|(_, ins)| line.starts_with(ins))
                .map(|(t, _)| (i, *t))
        })?;
        let words = lines
            .get(idx + 1)?
            .split(',')
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        let answer = self.templates.answer_prefix.trim();
        let cot_lines = lines[idx + 2..]
            .iter()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with(answer))
            .map(str::to_string)
            .collect();
        Some(Question {
            target,
            words,
            cot_lines,
        })
    }

    fn internal_count(&self, instance_id: u64, q: &Question) -> usize {
        if self.config.follow_cot && !q.cot_lines.is_empty() {
            return q
                .cot_lines
                .iter()
                .filter_map(|l| self.templates.parse_cot_line(l, q.target))
                .filter(|(_, positive)| *positive)
                .count();
        }
        q.words
            .iter()
            .filter(|w| self.labels_as_target(instance_id, w, q.target))
            .count()
    }

    fn tag(&self, instance_id: u64, text: &str) -> String {
        let mut out = String::new();
        for pair in extract_gendered_words(text, &self.lexicon) {
            let label = match pair.label {
                PairLabel::Neutral => {
                    if self
                        .lexicon
                        .is_stereotyped_for(&pair.word, TargetGender::Female)
                        && self.occupation_fires(instance_id, &pair.word)
                    {
                        PairLabel::Feminine
                    } else if self
                        .lexicon
                        .is_stereotyped_for(&pair.word, TargetGender::Male)
                        && self.occupation_fires(instance_id, &pair.word)
                    {
                        PairLabel::Masculine
                    } else {
                        PairLabel::Neutral
                    }
                }
                other => other,
            };
            out.push_str(&tagging_line(&pair.word, label));
            out.push('\n');
        }
        out
    }
}

impl Backend for SyntheticBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<ContinuationScore, ModelError> {
        self.score_calls.fetch_add(1, Ordering::Relaxed);
        if req.continuation.is_empty() {
            return Err(ModelError::EmptyContinuation);
        }
        let units = req.continuation.chars().count();
        let instance_id = req
            .instance_id
            .unwrap_or_else(|| fnv1a(req.prefix.as_bytes()));
        let answer: Option<usize> = req.continuation.trim().parse().ok();
        let logprob = match (answer, self.parse_question(req.prefix)) {
            (Some(k), Some(q)) => {
                let count = self.internal_count(instance_id, &q);
                -self.config.sharpness * (k as f64 - count as f64).abs()
            }
            _ => -self.config.sharpness * units as f64,
        };
        Ok(ContinuationScore { logprob, units })
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<String, ModelError> {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        let instance_id = req
            .instance_id
            .unwrap_or_else(|| fnv1a(req.prefix.as_bytes()));
        let tagging = self.templates.tagging_instruction.trim();
        let lines: Vec<&str> = req.prefix.lines().collect();
        let text = if let Some(pos) = lines.iter().rposition(|l| l.trim() == tagging) {
            let start = lines[..pos]
                .iter()
                .rposition(|l| l.trim().is_empty())
                .map_or(0, |i| i + 1);
            self.tag(instance_id, &lines[start..pos].join("\n"))
        } else if let Some(q) = self.parse_question(req.prefix) {
            let mut out = String::new();
            for w in &q.words {
                let positive = self.labels_as_target(instance_id, w, q.target);
                out.push_str(&self.templates.cot_line(w, q.target, positive));
                out.push('\n');
            }
            out
        } else {
            String::new()
        };
        Ok(truncate_generation(&text, req.stop, req.max_units))
    }
}
