//! Tagging F-score over a set of downstream items.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::RunError;
use crate::cot_debias::{evaluate_tagging, DownstreamItem, TaggingOutcome};
use crate::lexicon::Lexicon;
use crate::metrics::{pair_counts, per_label_counts, PairLabel, Prf, PrfCounts};
use crate::model::Backend;
use crate::prompts::PromptTemplateSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelScore {
    pub counts: PrfCounts,
    pub score: Prf,
}

impl From<PrfCounts> for LabelScore {
    fn from(counts: PrfCounts) -> Self {
        LabelScore {
            counts,
            score: counts.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FscoreReport {
    pub backend: String,
    pub items: usize,
    pub overall: LabelScore,
    pub per_label: BTreeMap<PairLabel, LabelScore>,
    pub parse_failures: usize,
    pub outcomes: Vec<TaggingOutcome>,
}

impl FscoreReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "Tagging F-score for {} over {} item(s)\n",
            self.backend, self.items
        );
        let row = |name: &str, s: &LabelScore| {
            format!(
                "{name:<10} P={:.4} R={:.4} F1={:.4} (tp={} fp={} fn={})\n",
                s.score.precision,
                s.score.recall,
                s.score.f1,
                s.counts.tp,
                s.counts.fp,
                s.counts.fn_
            )
        };
        out.push_str(&row("overall", &self.overall));
        for (label, s) in &self.per_label {
            out.push_str(&row(label.as_str(), s));
        }
        out.push_str(&format!("unparseable lines: {}\n", self.parse_failures));
        out
    }
}

/// Micro-averaged counts are summed per item, since a word can recur
/// across items.
pub fn run_fscore(
    backend: &dyn Backend,
    items: &[DownstreamItem],
    lexicon: &Lexicon,
    templates: &PromptTemplateSet,
) -> Result<FscoreReport, RunError> {
    let outcomes = items
        .par_iter()
        .map(|item| evaluate_tagging(backend, item, lexicon, templates))
        .collect::<Result<Vec<_>, _>>()?;
    let mut overall = PrfCounts::default();
    let mut per_label: BTreeMap<PairLabel, PrfCounts> = PairLabel::ALL
        .into_iter()
        .map(|l| (l, PrfCounts::default()))
        .collect();
    for o in &outcomes {
        overall.add(&pair_counts(&o.predicted, &o.gold));
        for (label, c) in per_label_counts(&o.predicted, &o.gold) {
            per_label
                .get_mut(&label)
                .expect("all labels present")
                .add(&c);
        }
    }
    Ok(FscoreReport {
        backend: backend.descriptor().name.clone(),
        items: items.len(),
        overall: overall.into(),
        per_label: per_label.into_iter().map(|(l, c)| (l, c.into())).collect(),
        parse_failures: outcomes.iter().map(|o| o.parse_failures).sum(),
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cot_debias::Segment;
    use crate::model::{SyntheticBackend, SyntheticConfig};
    use std::sync::Arc;

    fn item(text: &str) -> DownstreamItem {
        DownstreamItem {
            item_id: text.into(),
            segments: vec![Segment {
                name: "Context".into(),
                text: text.into(),
            }],
            candidates: vec![],
            gold_index: None,
        }
    }

    fn run(beta: f64, items: &[DownstreamItem]) -> FscoreReport {
        let lex = Lexicon::default_lexicon();
        let t = PromptTemplateSet::default();
        let b = SyntheticBackend::new(
            "s",
            SyntheticConfig {
                beta,
                ..Default::default()
            },
            Arc::new(lex.clone()),
            Arc::new(t.clone()),
        )
        .unwrap();
        run_fscore(&b, items, &lex, &t).unwrap()
    }

    #[test]
    fn unbiased_and_biased_tagging() {
        let items = [
            item("The woman asked the nurse."),
            item("A man and the doctor."),
        ];
        let ok = run(0.0, &items);
        assert_eq!(ok.overall.score.f1, 1.0);
        let bad = run(1.0, &items);
        // nurse and doctor each give one FP and one FN, all under neutral
        assert_eq!(
            bad.overall.counts,
            PrfCounts {
                tp: 2,
                fp: 2,
                fn_: 2
            }
        );
        assert_eq!(
            bad.per_label[&PairLabel::Neutral].counts,
            PrfCounts {
                tp: 0,
                fp: 2,
                fn_: 2
            }
        );
    }

    #[test]
    fn empty_item_list() {
        let r = run(0.0, &[]);
        assert_eq!(r.items, 0);
        assert_eq!(r.overall.counts, PrfCounts::default());
    }
}
