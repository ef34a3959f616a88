//! Run configuration in the sectioned key/value format.
//!
//! ```text
//! [dataset]
//! n = 1000
//! seed = 42
//! min = 1
//! max = 10
//!
//! [prompts]
//! conditions = zero_shot, zero_shot_cot
//!
//! [eval]
//! output_dir = out
//!
//! [backend.biased]
//! kind = synthetic
//! beta = 1
//! ```
//!
//! Every key can also be set as `section.key=value` (for backends,
//! `backend.NAME.key=value`); later settings win.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::RunError;
use crate::generator::{AppendOrder, SamplingBounds};
use crate::lexicon::Lexicon;
use crate::model::{Backend, RemoteBackend, RemoteConfig, SyntheticBackend, SyntheticConfig};
use crate::prompts::{CotMode, FewShotConfig, PromptCondition, PromptTemplateSet};
use crate::sectioned;

pub const CONFIG_SECTIONS: [&str; 3] = ["dataset", "prompts", "eval"];
const BACKEND_PREFIX: &str = "backend.";

/// Raw `section -> key -> value` settings before interpretation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfigMap(pub BTreeMap<String, BTreeMap<String, String>>);

impl ConfigMap {
    pub fn from_text(text: &str) -> Result<Self, RunError> {
        let mut map = ConfigMap::default();
        for section in sectioned::parse(text).map_err(|e| RunError::Config(e.to_string()))? {
            let entries = section
                .entries()
                .map_err(|e| RunError::Config(e.to_string()))?;
            map.0.entry(section.name).or_default().extend(entries);
        }
        Ok(map)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Sets `section.key` (or `backend.NAME.key`) to `value`.
    pub fn set(&mut self, dotted: &str, value: impl Into<String>) -> Result<(), RunError> {
        let bad = || RunError::Config(format!("setting {dotted:?} is not of the form section.key"));
        let (section, key) = if let Some(rest) = dotted.strip_prefix(BACKEND_PREFIX) {
            let (name, key) = rest.split_once('.').ok_or_else(bad)?;
            (format!("{BACKEND_PREFIX}{name}"), key)
        } else {
            let (s, k) = dotted.split_once('.').ok_or_else(bad)?;
            (s.to_string(), k)
        };
        if key.is_empty() || section.ends_with('.') {
            return Err(bad());
        }
        self.0
            .entry(section)
            .or_default()
            .insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies a `section.key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<(), RunError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Drops every backend section.
    pub fn clear_backends(&mut self) {
        self.0.retain(|k, _| !k.starts_with(BACKEND_PREFIX));
    }

    /// Adds a backend from `kind[:key=value,...]`, e.g.
    /// `synthetic:name=biased,beta=1` or `remote:model=gpt2`. The name
    /// defaults to the model for remote backends and to the kind otherwise.
    pub fn add_backend_arg(&mut self, spec: &str) -> Result<String, RunError> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut entries = BTreeMap::from([("kind".to_string(), kind.trim().to_string())]);
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                RunError::Config(format!("backend option {part:?} is not key=value"))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        let name = entries
            .remove("name")
            .or_else(|| entries.get("model").cloned())
            .unwrap_or_else(|| kind.trim().to_string());
        let section = format!("{BACKEND_PREFIX}{name}");
        if self.0.contains_key(&section) {
            return Err(RunError::Config(format!("backend {name:?} given twice")));
        }
        self.0.insert(section, entries);
        Ok(name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, entries) in &self.0 {
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {}\n", sectioned::encode_value(v)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Synthetic {
        name: String,
        config: SyntheticConfig,
    },
    Remote {
        name: String,
        model: String,
        /// Falls back to the environment when absent.
        base_url: Option<String>,
        timeout_secs: u64,
        max_attempts: u32,
    },
}

impl BackendSpec {
    pub fn name(&self) -> &str {
        match self {
            BackendSpec::Synthetic { name, .. } | BackendSpec::Remote { name, .. } => name,
        }
    }

    fn parse(name: &str, entries: &BTreeMap<String, String>) -> Result<Self, RunError> {
        let mut e = Entries::new(format!("{BACKEND_PREFIX}{name}"), entries);
        let kind = e.take("kind").unwrap_or_else(|| "synthetic".into());
        let spec = match kind.as_str() {
            "synthetic" => {
                let d = SyntheticConfig::default();
                let mut word_beta = BTreeMap::new();
                for key in e.keys_with_prefix("beta.") {
                    let b = e.parsed::<f64>(&key)?.expect("key exists");
                    word_beta.insert(key["beta.".len()..].to_lowercase(), b);
                }
                let config = SyntheticConfig {
                    beta: e.parsed("beta")?.unwrap_or(d.beta),
                    word_beta,
                    follow_cot: e.parsed("follow_cot")?.unwrap_or(d.follow_cot),
                    sharpness: e.parsed("sharpness")?.unwrap_or(d.sharpness),
                    seed: e.seed("seed")?.unwrap_or(d.seed),
                };
                config.validate()?;
                BackendSpec::Synthetic {
                    name: name.to_string(),
                    config,
                }
            }
            "remote" => BackendSpec::Remote {
                name: name.to_string(),
                model: e
                    .take("model")
                    .ok_or_else(|| RunError::Config(format!("backend {name:?} needs a model")))?,
                base_url: e.take("base_url"),
                timeout_secs: e.parsed("timeout_secs")?.unwrap_or(60),
                max_attempts: e.parsed("max_attempts")?.unwrap_or(5),
            },
            other => {
                return Err(RunError::Config(format!(
                    "backend {name:?} has unknown kind {other:?} (synthetic|remote)"
                )))
            }
        };
        e.finish()?;
        Ok(spec)
    }

    pub fn instantiate(
        &self,
        lexicon: Arc<Lexicon>,
        templates: Arc<PromptTemplateSet>,
        run: &RunConfig,
    ) -> Result<Arc<dyn Backend>, RunError> {
        Ok(match self {
            BackendSpec::Synthetic { name, config } => Arc::new(SyntheticBackend::new(
                name.clone(),
                config.clone(),
                lexicon,
                templates,
            )?),
            BackendSpec::Remote {
                name,
                model,
                base_url,
                timeout_secs,
                max_attempts,
            } => {
                let mut cfg =
                    RemoteConfig::from_env(model.clone()).or_else(|e| match base_url {
                        Some(url) => Ok(RemoteConfig::new(url.clone(), model.clone())),
                        None => Err(e),
                    })?;
                if let Some(url) = base_url {
                    cfg.base_url = url.clone();
                }
                if cfg.api_key.is_none() {
                    cfg.api_key = std::env::var(crate::model::ENV_API_KEY)
                        .ok()
                        .filter(|k| !k.is_empty());
                }
                cfg.timeout = Duration::from_secs(*timeout_secs);
                cfg.max_attempts = *max_attempts;
                cfg.max_in_flight = run.max_in_flight;
                cfg.requests_per_minute = run.requests_per_minute;
                Arc::new(RemoteBackend::new(name.clone(), cfg)?)
            }
        })
    }
}

/// Interpreted configuration for every command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub lexicon: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub bounds: SamplingBounds,
    pub append_order: AppendOrder,
    pub conditions: Vec<PromptCondition>,
    pub cot_mode: CotMode,
    pub fewshot: FewShotConfig,
    pub pool_size: usize,
    pub normalize: bool,
    pub output_dir: PathBuf,
    pub chunk_size: usize,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<u32>,
    /// Stop after scoring this many items in one invocation.
    pub max_items: Option<usize>,
    pub backends: Vec<BackendSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lexicon: None,
            templates: None,
            n: 1000,
            seed: 42,
            bounds: SamplingBounds::default(),
            append_order: AppendOrder::default(),
            conditions: PromptCondition::ALL.to_vec(),
            cot_mode: CotMode::default(),
            fewshot: FewShotConfig::default(),
            pool_size: 64,
            normalize: false,
            output_dir: PathBuf::from("mgbr-out"),
            chunk_size: 256,
            max_in_flight: 8,
            requests_per_minute: None,
            max_items: None,
            backends: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, RunError> {
        let mut c = RunConfig::default();
        let empty = BTreeMap::new();
        for name in map.0.keys() {
            if !name.starts_with(BACKEND_PREFIX) && !CONFIG_SECTIONS.contains(&name.as_str()) {
                return Err(RunError::Config(format!("unknown section [{name}]")));
            }
        }

        let mut e = Entries::new("dataset".into(), map.0.get("dataset").unwrap_or(&empty));
        c.n = e.parsed("n")?.unwrap_or(c.n);
        c.seed = e.seed("seed")?.unwrap_or(c.seed);
        c.lexicon = e.take("lexicon").map(PathBuf::from);
        c.append_order = e.parsed("append_order")?.unwrap_or(c.append_order);
        let min = e.parsed("min")?;
        let max = e.parsed("max")?;
        if min.is_some() || max.is_some() {
            c.bounds = SamplingBounds::uniform(min.unwrap_or(1), max.unwrap_or(10));
        }
        let b = &mut c.bounds;
        for (key, slot) in [
            ("p_min", &mut b.p_min),
            ("p_max", &mut b.p_max),
            ("q_min", &mut b.q_min),
            ("q_max", &mut b.q_max),
            ("r_min", &mut b.r_min),
            ("r_max", &mut b.r_max),
        ] {
            if let Some(v) = e.parsed(key)? {
                *slot = v;
            }
        }
        e.finish()?;

        let mut e = Entries::new("prompts".into(), map.0.get("prompts").unwrap_or(&empty));
        c.templates = e.take("templates").map(PathBuf::from);
        if let Some(list) = e.take("conditions") {
            c.conditions = parse_conditions(&list)?;
        }
        c.cot_mode = e.parsed("cot_mode")?.unwrap_or(c.cot_mode);
        c.fewshot.shots_per_set = e
            .parsed("shots_per_set")?
            .unwrap_or(c.fewshot.shots_per_set);
        c.fewshot.exemplar_seed = e.seed("exemplar_seed")?.unwrap_or(c.fewshot.exemplar_seed);
        c.pool_size = e.parsed("pool_size")?.unwrap_or(c.pool_size);
        e.finish()?;

        let mut e = Entries::new("eval".into(), map.0.get("eval").unwrap_or(&empty));
        c.output_dir = e
            .take("output_dir")
            .map(PathBuf::from)
            .unwrap_or(c.output_dir);
        c.normalize = e.parsed("normalize")?.unwrap_or(c.normalize);
        c.chunk_size = e.parsed("chunk_size")?.unwrap_or(c.chunk_size);
        c.max_in_flight = e.parsed("max_in_flight")?.unwrap_or(c.max_in_flight);
        c.requests_per_minute = e.parsed::<u32>("requests_per_minute")?.filter(|r| *r > 0);
        c.max_items = e.parsed("max_items")?;
        e.finish()?;

        for (section, entries) in &map.0 {
            if let Some(name) = section.strip_prefix(BACKEND_PREFIX) {
                c.backends.push(BackendSpec::parse(name, entries)?);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.n == 0 {
            return Err(RunError::Config("n must be at least 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(RunError::Config("no conditions selected".into()));
        }
        if self.chunk_size == 0 || self.max_in_flight == 0 {
            return Err(RunError::Config(
                "chunk_size and max_in_flight must be at least 1".into(),
            ));
        }
        if self.fewshot.shots_per_set == 0 {
            return Err(RunError::Config("shots_per_set must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, RunError> {
        Ok(match &self.lexicon {
            Some(p) => Lexicon::load(p)?,
            None => Lexicon::default_lexicon(),
        })
    }

    pub fn load_templates(&self) -> Result<PromptTemplateSet, RunError> {
        Ok(match &self.templates {
            Some(p) => PromptTemplateSet::load(p)?,
            None => PromptTemplateSet::default(),
        })
    }
}

/// Comma-separated condition names, or `all`.
pub fn parse_conditions(list: &str) -> Result<Vec<PromptCondition>, RunError> {
    if list.trim() == "all" {
        return Ok(PromptCondition::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let c = part.parse::<PromptCondition>().map_err(RunError::Config)?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Consumes keys from one section; leftovers are reported as unknown.
struct Entries<'a> {
    section: String,
    remaining: BTreeMap<&'a str, &'a str>,
}

impl<'a> Entries<'a> {
    fn new(section: String, entries: &'a BTreeMap<String, String>) -> Self {
        Entries {
            section,
            remaining: entries
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect(),
        }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.remaining.remove(key).map(str::to_string)
    }

    fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.remaining
            .keys()
            .filter(|k| k.starts_with(prefix))
            .map(|k| k.to_string())
            .collect()
    }

    fn parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, RunError>
    where
        T::Err: std::fmt::Display,
    {
        match self.remaining.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| RunError::Config(format!("[{}] {key} = {v:?}: {e}", self.section))),
        }
    }

    /// Decimal or `0x`-prefixed hexadecimal.
    fn seed(&mut self, key: &str) -> Result<Option<u64>, RunError> {
        match self.remaining.remove(key) {
            None => Ok(None),
            Some(v) => parse_u64(v)
                .map(Some)
                .map_err(|e| RunError::Config(format!("[{}] {key} = {v:?}: {e}", self.section))),
        }
    }

    fn finish(self) -> Result<(), RunError> {
        match self.remaining.keys().next() {
            None => Ok(()),
            Some(k) => Err(RunError::Config(format!(
                "unknown key {k:?} in [{}]",
                self.section
            ))),
        }
    }
}

pub fn parse_u64(s: &str) -> Result<u64, std::num::ParseIntError> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    }
}
