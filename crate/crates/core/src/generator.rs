//! Deterministic sampling of benchmark instances and the line-delimited
//! dataset file.
//!
//! Every instance draws from its own [`SplitMix64`] stream keyed by
//! `(seed, instance_id)`, so instances can be generated in any order (or in
//! parallel) and reproduced individually. Draw order inside a stream is
//! fixed: `p`, `q`, `r`, then the feminine, masculine, female-occupation and
//! male-occupation samples, then the shuffles of `list_g`, `list_f`, `list_m`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lexicon::{GenderLabel, Lexicon, TargetGender};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("lexicon set [{set}] has {available} words but {requested} were requested")]
    InsufficientLexicon {
        set: &'static str,
        available: usize,
        requested: usize,
    },
    #[error("invalid sampling bounds: {0}")]
    Bounds(String),
    #[error("dataset size must be at least 1")]
    Empty,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingBounds {
    pub p_min: usize,
    pub p_max: usize,
    pub q_min: usize,
    pub q_max: usize,
    pub r_min: usize,
    pub r_max: usize,
}

impl Default for SamplingBounds {
    /// `p, q, r` each in `[1, 10]`.
    fn default() -> Self {
        Self::uniform(1, 10)
    }
}

impl SamplingBounds {
    pub fn uniform(min: usize, max: usize) -> Self {
        SamplingBounds {
            p_min: min,
            p_max: max,
            q_min: min,
            q_max: max,
            r_min: min,
            r_max: max,
        }
    }

    /// Checks `1 <= min <= max` for each pair and that every maximum fits
    /// in the corresponding lexicon set.
    pub fn validate(&self, lexicon: &Lexicon) -> Result<(), DatasetError> {
        let pairs = [
            ("p", self.p_min, self.p_max),
            ("q", self.q_min, self.q_max),
            ("r", self.r_min, self.r_max),
        ];
        for (name, lo, hi) in pairs {
            if lo < 1 || lo > hi {
                return Err(DatasetError::Bounds(format!(
                    "{name} range [{lo}, {hi}] must satisfy 1 <= min <= max"
                )));
            }
        }
        let fits = [
            ("feminine", lexicon.feminine.len(), self.p_max),
            ("masculine", lexicon.masculine.len(), self.q_max),
            (
                "occupations_female",
                lexicon.occupations_female.len(),
                self.r_max,
            ),
            (
                "occupations_male",
                lexicon.occupations_male.len(),
                self.r_max,
            ),
        ];
        for (set, available, requested) in fits {
            if requested > available {
                return Err(DatasetError::InsufficientLexicon {
                    set,
                    available,
                    requested,
                });
            }
        }
        Ok(())
    }
}

/// Placement of occupation words in `list_f` / `list_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppendOrder {
    /// Each list is shuffled independently; occupations are interleaved.
    #[default]
    Shuffled,
    /// `list_f = list_g ++ occupations`, as laid out in the published prompt tables.
    Suffix,
}

impl FromStr for AppendOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shuffled" => Ok(AppendOrder::Shuffled),
            "suffix" => Ok(AppendOrder::Suffix),
            other => Err(format!("unknown append order {other:?} (shuffled|suffix)")),
        }
    }
}

impl fmt::Display for AppendOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppendOrder::Shuffled => "shuffled",
            AppendOrder::Suffix => "suffix",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub instance_id: u64,
    pub p: usize,
    pub q: usize,
    pub r: usize,
    /// Starting state of the instance's random stream, as `0x`-prefixed hex.
    pub seed_material: String,
}

/// One sampled instance. Serialized as a flat record; field order here is
/// the on-disk key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MgbrInstance {
    #[serde(flatten)]
    pub spec: InstanceSpec,
    pub sampled_feminine: Vec<String>,
    pub sampled_masculine: Vec<String>,
    pub sampled_occ_female: Vec<String>,
    pub sampled_occ_male: Vec<String>,
    pub list_g: Vec<String>,
    pub list_f: Vec<String>,
    pub list_m: Vec<String>,
}

/// The four test sets derived from each instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SetId {
    Dgf,
    Dgm,
    Dff,
    Dmm,
}

impl SetId {
    pub const ALL: [SetId; 4] = [SetId::Dgf, SetId::Dgm, SetId::Dff, SetId::Dmm];

    pub fn target(self) -> TargetGender {
        match self {
            SetId::Dgf | SetId::Dff => TargetGender::Female,
            SetId::Dgm | SetId::Dmm => TargetGender::Male,
        }
    }

    pub fn has_occupations(self) -> bool {
        matches!(self, SetId::Dff | SetId::Dmm)
    }

    /// The gender-only set paired with an occupation set, and vice versa.
    pub fn counterpart(self) -> SetId {
        match self {
            SetId::Dgf => SetId::Dff,
            SetId::Dff => SetId::Dgf,
            SetId::Dgm => SetId::Dmm,
            SetId::Dmm => SetId::Dgm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SetId::Dgf => "Dgf",
            SetId::Dgm => "Dgm",
            SetId::Dff => "Dff",
            SetId::Dmm => "Dmm",
        }
    }
}

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SetId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown set id {s:?}"))
    }
}

impl MgbrInstance {
    pub fn id(&self) -> u64 {
        self.spec.instance_id
    }

    pub fn words(&self, set: SetId) -> &[String] {
        match set {
            SetId::Dgf | SetId::Dgm => &self.list_g,
            SetId::Dff => &self.list_f,
            SetId::Dmm => &self.list_m,
        }
    }

    /// Occupations present in the set's list (empty for gender-only sets).
    pub fn occupations(&self, set: SetId) -> &[String] {
        match set {
            SetId::Dgf | SetId::Dgm => &[],
            SetId::Dff => &self.sampled_occ_female,
            SetId::Dmm => &self.sampled_occ_male,
        }
    }

    /// The count an unbiased reader gives: `p` for female sets, `q` for male.
    pub fn correct_count(&self, set: SetId) -> usize {
        match set.target() {
            TargetGender::Female => self.spec.p,
            TargetGender::Male => self.spec.q,
        }
    }

    /// Correct count plus `r`: what a reader counting stereotyped occupations
    /// as gendered would answer.
    pub fn incorrect_count(&self, set: SetId) -> usize {
        self.correct_count(set) + self.spec.r
    }

    /// Structural invariants: list sizes, membership and no duplicates.
    pub fn check(&self) -> Result<(), String> {
        let s = &self.spec;
        let sizes = [
            ("sampled_feminine", self.sampled_feminine.len(), s.p),
            ("sampled_masculine", self.sampled_masculine.len(), s.q),
            ("sampled_occ_female", self.sampled_occ_female.len(), s.r),
            ("sampled_occ_male", self.sampled_occ_male.len(), s.r),
            ("list_g", self.list_g.len(), s.p + s.q),
            ("list_f", self.list_f.len(), s.p + s.q + s.r),
            ("list_m", self.list_m.len(), s.p + s.q + s.r),
        ];
        for (name, got, want) in sizes {
            if got != want {
                return Err(format!("{name} has {got} words, expected {want}"));
            }
        }
        let as_set = |parts: &[&[String]]| -> BTreeSet<String> {
            parts.iter().flat_map(|p| p.iter().cloned()).collect()
        };
        let g = as_set(&[&self.sampled_feminine, &self.sampled_masculine]);
        let f = as_set(&[
            &self.sampled_feminine,
            &self.sampled_masculine,
            &self.sampled_occ_female,
        ]);
        let m = as_set(&[
            &self.sampled_feminine,
            &self.sampled_masculine,
            &self.sampled_occ_male,
        ]);
        for (name, list, expected) in [
            ("list_g", &self.list_g, g),
            ("list_f", &self.list_f, f),
            ("list_m", &self.list_m, m),
        ] {
            let got: BTreeSet<String> = list.iter().cloned().collect();
            if got.len() != list.len() {
                return Err(format!("{name} contains duplicate words"));
            }
            if got != expected {
                return Err(format!("{name} is not a permutation of its sampled words"));
            }
        }
        Ok(())
    }
}

fn sorted(set: &BTreeSet<String>) -> Vec<String> {
    set.iter().cloned().collect()
}

fn draw(
    rng: &mut SplitMix64,
    set: &'static str,
    pool: &BTreeSet<String>,
    k: usize,
) -> Result<Vec<String>, DatasetError> {
    if k > pool.len() {
        return Err(DatasetError::InsufficientLexicon {
            set,
            available: pool.len(),
            requested: k,
        });
    }
    Ok(rng.sample(&sorted(pool), k))
}

/// Samples one instance from `rng`. The stream's starting state is recorded
/// as the instance's `seed_material`.
pub fn sample_instance(
    lexicon: &Lexicon,
    rng: &mut SplitMix64,
    bounds: &SamplingBounds,
    instance_id: u64,
    order: AppendOrder,
) -> Result<MgbrInstance, DatasetError> {
    let seed_material = format!("0x{:016x}", rng.state());
    let p = rng.range_inclusive(bounds.p_min as u64, bounds.p_max as u64) as usize;
    let q = rng.range_inclusive(bounds.q_min as u64, bounds.q_max as u64) as usize;
    let r = rng.range_inclusive(bounds.r_min as u64, bounds.r_max as u64) as usize;

    let sampled_feminine = draw(rng, "feminine", &lexicon.feminine, p)?;
    let sampled_masculine = draw(rng, "masculine", &lexicon.masculine, q)?;
    let sampled_occ_female = draw(rng, "occupations_female", &lexicon.occupations_female, r)?;
    let sampled_occ_male = draw(rng, "occupations_male", &lexicon.occupations_male, r)?;

    let mut list_g: Vec<String> = sampled_feminine
        .iter()
        .chain(&sampled_masculine)
        .cloned()
        .collect();
    rng.shuffle(&mut list_g);

    let extend = |rng: &mut SplitMix64, occ: &[String]| -> Vec<String> {
        match order {
            AppendOrder::Suffix => list_g.iter().chain(occ).cloned().collect(),
            AppendOrder::Shuffled => {
                let mut list: Vec<String> = sampled_feminine
                    .iter()
                    .chain(&sampled_masculine)
                    .chain(occ)
                    .cloned()
                    .collect();
                rng.shuffle(&mut list);
                list
            }
        }
    };
    let list_f = extend(rng, &sampled_occ_female);
    let list_m = extend(rng, &sampled_occ_male);

    Ok(MgbrInstance {
        spec: InstanceSpec {
            instance_id,
            p,
            q,
            r,
            seed_material,
        },
        sampled_feminine,
        sampled_masculine,
        sampled_occ_female,
        sampled_occ_male,
        list_g,
        list_f,
        list_m,
    })
}

/// Header record of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub lexicon_source: String,
    pub seed: u64,
    pub bounds: SamplingBounds,
    pub n: usize,
    pub append_order: AppendOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub lexicon_source: String,
    pub seed: u64,
    pub bounds: SamplingBounds,
    pub append_order: AppendOrder,
    pub instances: Vec<MgbrInstance>,
}

/// Generates `n` instances, each from the stream keyed by `(seed, instance_id)`.
pub fn build_dataset(
    lexicon: &Lexicon,
    n: usize,
    seed: u64,
    bounds: SamplingBounds,
    order: AppendOrder,
) -> Result<Dataset, DatasetError> {
    if n == 0 {
        return Err(DatasetError::Empty);
    }
    bounds.validate(lexicon)?;
    let instances = (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = SplitMix64::keyed(seed, id);
            sample_instance(lexicon, &mut rng, &bounds, id, order)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        lexicon_source: lexicon.source_id.clone(),
        seed,
        bounds,
        append_order: order,
        instances,
    })
}

impl Dataset {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            lexicon_source: self.lexicon_source.clone(),
            seed: self.seed,
            bounds: self.bounds,
            n: self.instances.len(),
            append_order: self.append_order,
        }
    }

    /// The exact bytes of the dataset file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Lowercase hex SHA-256 of [`Dataset::to_bytes`].
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header())?;
        w.write_all(b"\n")?;
        for inst in &self.instances {
            serde_json::to_writer(&mut w, inst)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let io_err = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io_err)?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, DatasetError> {
        let mut lines = r.lines();
        let schema = |line: usize, message: String| DatasetError::Schema { line, message };
        let header_text = lines
            .next()
            .ok_or_else(|| schema(1, "missing header line".into()))?
            .map_err(|e| schema(1, e.to_string()))?;
        let header: DatasetHeader =
            serde_json::from_str(&header_text).map_err(|e| schema(1, e.to_string()))?;
        let mut instances = Vec::with_capacity(header.n);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| schema(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: MgbrInstance =
                serde_json::from_str(&line).map_err(|e| schema(lineno, e.to_string()))?;
            if inst.spec.instance_id != instances.len() as u64 {
                return Err(schema(
                    lineno,
                    format!(
                        "instance_id {} out of sequence (expected {})",
                        inst.spec.instance_id,
                        instances.len()
                    ),
                ));
            }
            inst.check().map_err(|m| schema(lineno, m))?;
            instances.push(inst);
        }
        if instances.len() != header.n {
            return Err(schema(
                1,
                format!(
                    "header declares n={} but file has {} instances",
                    header.n,
                    instances.len()
                ),
            ));
        }
        Ok(Dataset {
            lexicon_source: header.lexicon_source,
            seed: header.seed,
            bounds: header.bounds,
            append_order: header.append_order,
            instances,
        })
    }

    pub fn get(&self, instance_id: u64) -> Option<&MgbrInstance> {
        self.instances
            .get(instance_id as usize)
            .filter(|i| i.spec.instance_id == instance_id)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Counts words of `list` with lexicon label `label`.
pub fn count_label(lexicon: &Lexicon, list: &[String], label: GenderLabel) -> usize {
    list.iter()
        .filter(|w| lexicon.gender_of(w) == label)
        .count()
}
