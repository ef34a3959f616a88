//! Micro-averaged precision/recall/F1 over `(word, label)` pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Feminine,
    Masculine,
    Neutral,
}

impl PairLabel {
    pub const ALL: [PairLabel; 3] = [
        PairLabel::Feminine,
        PairLabel::Masculine,
        PairLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Feminine => "feminine",
            PairLabel::Masculine => "masculine",
            PairLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PairLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown label {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenderPairPrediction {
    pub word: String,
    pub label: PairLabel,
}

impl GenderPairPrediction {
    pub fn new(word: &str, label: PairLabel) -> Self {
        GenderPairPrediction {
            word: word.to_lowercase(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrfCounts {
    fn ratio(num: usize, den: usize) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn add(&mut self, other: &PrfCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<PrfCounts> for Prf {
    fn from(c: PrfCounts) -> Self {
        Prf {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        }
    }
}

/// TP/FP/FN of predicted against gold pairs, compared as sets.
pub fn pair_counts(predicted: &[GenderPairPrediction], gold: &[GenderPairPrediction]) -> PrfCounts {
    let p: BTreeSet<&GenderPairPrediction> = predicted.iter().collect();
    let g: BTreeSet<&GenderPairPrediction> = gold.iter().collect();
    PrfCounts {
        tp: p.intersection(&g).count(),
        fp: p.difference(&g).count(),
        fn_: g.difference(&p).count(),
    }
}

/// `(precision, recall, f1)`; any 0/0 ratio is 0.
pub fn fscore_gender_pairs(
    predicted: &[GenderPairPrediction],
    gold: &[GenderPairPrediction],
) -> Prf {
    pair_counts(predicted, gold).into()
}

/// Counts split by label. Each pair is attributed to the gold label of its
/// word when the word appears in gold, otherwise to its own label, so a
/// mislabelled occupation shows up entirely under `neutral`.
pub fn per_label_counts(
    predicted: &[GenderPairPrediction],
    gold: &[GenderPairPrediction],
) -> BTreeMap<PairLabel, PrfCounts> {
    let gold_label: BTreeMap<&str, PairLabel> =
        gold.iter().map(|g| (g.word.as_str(), g.label)).collect();
    let p: BTreeSet<&GenderPairPrediction> = predicted.iter().collect();
    let g: BTreeSet<&GenderPairPrediction> = gold.iter().collect();
    let mut out: BTreeMap<PairLabel, PrfCounts> = PairLabel::ALL
        .into_iter()
        .map(|l| (l, PrfCounts::default()))
        .collect();
    let bucket =
        |pair: &GenderPairPrediction| *gold_label.get(pair.word.as_str()).unwrap_or(&pair.label);
    for pair in p.intersection(&g) {
        out.get_mut(&bucket(pair)).unwrap().tp += 1;
    }
    for pair in p.difference(&g) {
        out.get_mut(&bucket(pair)).unwrap().fp += 1;
    }
    for pair in g.difference(&p) {
        out.get_mut(&bucket(pair)).unwrap().fn_ += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(w: &str, l: PairLabel) -> GenderPairPrediction {
        GenderPairPrediction::new(w, l)
    }

    #[test]
    fn perfect_prediction() {
        let gold = vec![pair("actress", PairLabel::Feminine)];
        let r = fscore_gender_pairs(&gold, &gold);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted_case() {
        let gold = vec![
            pair("actress", PairLabel::Feminine),
            pair("king", PairLabel::Masculine),
            pair("nurse", PairLabel::Neutral),
        ];
        let pred = vec![
            pair("actress", PairLabel::Feminine),
            pair("king", PairLabel::Feminine),
        ];
        let c = pair_counts(&pred, &gold);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 2));
        let r = fscore_gender_pairs(&pred, &gold);
        assert!((r.precision - 0.5).abs() < 1e-12);
        assert!((r.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction() {
        let gold = vec![pair("king", PairLabel::Masculine)];
        let r = fscore_gender_pairs(&[], &gold);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = fscore_gender_pairs(&[], &[]);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn per_label_attribution() {
        let gold = vec![
            pair("woman", PairLabel::Feminine),
            pair("nurse", PairLabel::Neutral),
        ];
        let pred = vec![
            pair("woman", PairLabel::Feminine),
            pair("nurse", PairLabel::Feminine),
        ];
        let by = per_label_counts(&pred, &gold);
        assert_eq!(
            by[&PairLabel::Feminine],
            PrfCounts {
                tp: 1,
                fp: 0,
                fn_: 0
            }
        );
        assert_eq!(
            by[&PairLabel::Neutral],
            PrfCounts {
                tp: 0,
                fp: 1,
                fn_: 1
            }
        );
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<GenderPairPrediction>> {
        prop::collection::vec(
            (
                prop::sample::select(vec!["a", "b", "c", "d", "e"]),
                0usize..3,
            )
                .prop_map(|(w, l)| pair(w, PairLabel::ALL[l])),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn precision_recall_swap(pred in arb_pairs(), gold in arb_pairs()) {
            let a = fscore_gender_pairs(&pred, &gold);
            let b = fscore_gender_pairs(&gold, &pred);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
        }
    }
}
