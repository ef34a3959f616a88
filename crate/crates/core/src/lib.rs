//! Gendered word-counting bias benchmark: word lists, instance generation,
//! prompt rendering, likelihood backends, metrics and tagging preambles.

pub mod cot_debias;
pub mod generator;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod rng;
pub mod run;
pub mod sectioned;

pub use cot_debias::{DownstreamItem, TaggingPreamble, WrapMode};
pub use generator::{build_dataset, AppendOrder, Dataset, MgbrInstance, SamplingBounds, SetId};
pub use lexicon::{GenderLabel, Lexicon, TargetGender};
pub use metrics::{BiasReport, GenderPairPrediction, ItemResult, PairLabel};
pub use model::{Backend, BackendDescriptor, ScoredPair, SyntheticBackend, SyntheticConfig};
pub use prompts::{PromptCondition, PromptTemplateSet, RenderedItem};
