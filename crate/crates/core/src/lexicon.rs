//! The four word sets that drive generation, chain-of-thought lines, and
//! gold tagging: feminine words, masculine words, and occupations carrying a
//! female or male stereotype.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sectioned::{self, SectionedError};

/// Lexicon shipped with the crate, derived from the Bolukbasi et al. word lists.
pub const DEFAULT_LEXICON: &str = include_str!("../data/default_lexicon.txt");

pub const SECTION_FEMININE: &str = "feminine";
pub const SECTION_MASCULINE: &str = "masculine";
pub const SECTION_OCC_FEMALE: &str = "occupations_female";
pub const SECTION_OCC_MALE: &str = "occupations_male";
pub const SECTION_SOURCE: &str = "source";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon parse error: {0}")]
    Parse(String),
    #[error("lexicon failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Violation>),
}

impl From<SectionedError> for LexiconError {
    fn from(e: SectionedError) -> Self {
        LexiconError::Parse(e.to_string())
    }
}

/// One broken lexicon invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptySet(&'static str),
    GenderOverlap(String),
    OccupationIsGendered(String),
    BadWord { set: &'static str, word: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySet(s) => write!(f, "[{s}] is empty"),
            Violation::GenderOverlap(w) => {
                write!(f, "{w:?} is in both feminine and masculine")
            }
            Violation::OccupationIsGendered(w) => {
                write!(f, "occupation {w:?} is also a feminine/masculine word")
            }
            Violation::BadWord { set, word } => {
                write!(f, "[{set}] word {word:?} contains whitespace or ','")
            }
        }
    }
}

/// Gender of a word as seen by the lexicon. Occupations are gender-neutral
/// ground truth regardless of the stereotype they carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenderLabel {
    Feminine,
    Masculine,
    NeutralOccupation,
    Unknown,
}

/// Which gender an instruction asks the model to count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetGender {
    Female,
    Male,
}

impl TargetGender {
    pub fn label(self) -> GenderLabel {
        match self {
            TargetGender::Female => GenderLabel::Feminine,
            TargetGender::Male => GenderLabel::Masculine,
        }
    }

    /// Adjective used in explanation lines ("feminine" / "masculine").
    pub fn adjective(self) -> &'static str {
        match self {
            TargetGender::Female => "feminine",
            TargetGender::Male => "masculine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub feminine: BTreeSet<String>,
    pub masculine: BTreeSet<String>,
    pub occupations_female: BTreeSet<String>,
    pub occupations_male: BTreeSet<String>,
    pub source_id: String,
}

fn normalize<'a>(words: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
    words.into_iter().map(|w| w.trim().to_lowercase()).collect()
}

impl Lexicon {
    /// Builds and validates a lexicon from raw word lists. Words are
    /// lowercased and deduplicated.
    pub fn new<'a>(
        feminine: impl IntoIterator<Item = &'a str>,
        masculine: impl IntoIterator<Item = &'a str>,
        occupations_female: impl IntoIterator<Item = &'a str>,
        occupations_male: impl IntoIterator<Item = &'a str>,
        source_id: impl Into<String>,
    ) -> Result<Self, LexiconError> {
        let lex = Lexicon {
            feminine: normalize(feminine),
            masculine: normalize(masculine),
            occupations_female: normalize(occupations_female),
            occupations_male: normalize(occupations_male),
            source_id: source_id.into(),
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn default_lexicon() -> Self {
        Self::parse(DEFAULT_LEXICON, "default").expect("shipped lexicon is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let fallback = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::parse(&text, &fallback)
    }

    /// Parses the sectioned lexicon format. `fallback_source` becomes the
    /// `source_id` unless the file has a `[source]` section.
    pub fn parse(text: &str, fallback_source: &str) -> Result<Self, LexiconError> {
        let sections = sectioned::parse(text)?;
        let mut sets: [Option<Vec<&str>>; 4] = Default::default();
        let mut source_id = fallback_source.to_string();
        for section in &sections {
            let slot = match section.name.as_str() {
                SECTION_FEMININE => 0,
                SECTION_MASCULINE => 1,
                SECTION_OCC_FEMALE => 2,
                SECTION_OCC_MALE => 3,
                SECTION_SOURCE => {
                    source_id = section
                        .lines
                        .iter()
                        .map(|(_, l)| l.as_str())
                        .collect::<Vec<_>>()
                        .join(" ");
                    continue;
                }
                other => {
                    return Err(LexiconError::Parse(format!(
                        "line {}: unknown section [{other}]",
                        section.header_line
                    )))
                }
            };
            sets[slot] = Some(section.lines.iter().map(|(_, l)| l.as_str()).collect());
        }
        let names = [
            SECTION_FEMININE,
            SECTION_MASCULINE,
            SECTION_OCC_FEMALE,
            SECTION_OCC_MALE,
        ];
        if let Some(i) = sets.iter().position(Option::is_none) {
            return Err(LexiconError::Parse(format!(
                "missing section [{}]",
                names[i]
            )));
        }
        let [f, m, of, om] = sets.map(Option::unwrap_or_default);
        Lexicon::new(f, m, of, om, source_id)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), LexiconError> {
        let mut violations = Vec::new();
        let named = [
            (SECTION_FEMININE, &self.feminine),
            (SECTION_MASCULINE, &self.masculine),
            (SECTION_OCC_FEMALE, &self.occupations_female),
            (SECTION_OCC_MALE, &self.occupations_male),
        ];
        for (name, set) in named {
            if set.is_empty() {
                violations.push(Violation::EmptySet(name));
            }
            for word in set {
                if word.is_empty() || word.contains(|c: char| c.is_whitespace() || c == ',') {
                    violations.push(Violation::BadWord {
                        set: name,
                        word: word.clone(),
                    });
                }
            }
        }
        for w in self.feminine.intersection(&self.masculine) {
            violations.push(Violation::GenderOverlap(w.clone()));
        }
        let occupations: BTreeSet<&String> = self
            .occupations_female
            .iter()
            .chain(&self.occupations_male)
            .collect();
        for w in occupations {
            if self.feminine.contains(w) || self.masculine.contains(w) {
                violations.push(Violation::OccupationIsGendered(w.clone()));
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(LexiconError::Validation(violations))
        }
    }

    /// Case-insensitive exact lookup; no stemming.
    pub fn gender_of(&self, word: &str) -> GenderLabel {
        let w = word.to_lowercase();
        if self.feminine.contains(&w) {
            GenderLabel::Feminine
        } else if self.masculine.contains(&w) {
            GenderLabel::Masculine
        } else if self.occupations_female.contains(&w) || self.occupations_male.contains(&w) {
            GenderLabel::NeutralOccupation
        } else {
            GenderLabel::Unknown
        }
    }

    /// Whether `word` is an occupation stereotyped toward `target`.
    pub fn is_stereotyped_for(&self, word: &str, target: TargetGender) -> bool {
        let w = word.to_lowercase();
        match target {
            TargetGender::Female => self.occupations_female.contains(&w),
            TargetGender::Male => self.occupations_male.contains(&w),
        }
    }

    /// Serializes back to the sectioned format accepted by [`Lexicon::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("[{SECTION_SOURCE}]\n{}\n", self.source_id));
        for (name, set) in [
            (SECTION_FEMININE, &self.feminine),
            (SECTION_MASCULINE, &self.masculine),
            (SECTION_OCC_FEMALE, &self.occupations_female),
            (SECTION_OCC_MALE, &self.occupations_male),
        ] {
            out.push_str(&format!("\n[{name}]\n"));
            for w in set {
                out.push_str(w);
                out.push('\n');
            }
        }
        out
    }
}
