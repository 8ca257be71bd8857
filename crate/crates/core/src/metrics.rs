//! Multi-label and multiclass scores.
//!
//! Macro averages give classes with a zero denominator a score of 0. Sample
//! Jaccard counts an example whose gold and predicted sets are both empty as
//! 1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{AspectInventory, Polarity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
}

/// Gold and predicted label sets per example, as index vectors over a
/// shared inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelPredictions {
    num_classes: usize,
    gold: Vec<Vec<bool>>,
    pred: Vec<Vec<bool>>,
}

impl MultiLabelPredictions {
    pub fn new(num_classes: usize, gold: Vec<Vec<bool>>, pred: Vec<Vec<bool>>) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::InvalidInput("no examples to score".into()));
        }
        if gold.len() != pred.len() {
            return Err(Error::LengthMismatch {
                expected: gold.len(),
                actual: pred.len(),
            });
        }
        for v in gold.iter().chain(&pred) {
            if v.len() != num_classes {
                return Err(Error::LengthMismatch {
                    expected: num_classes,
                    actual: v.len(),
                });
            }
        }
        Ok(MultiLabelPredictions {
            num_classes,
            gold,
            pred,
        })
    }

    /// Build from named sets; every name must be in `inventory`.
    pub fn from_sets<'a, I>(inventory: &AspectInventory, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a BTreeSet<String>, &'a BTreeSet<String>)>,
    {
        let (mut gold, mut pred) = (Vec::new(), Vec::new());
        for (g, p) in pairs {
            gold.push(inventory.label_vector(g)?);
            pred.push(inventory.label_vector(p)?);
        }
        Self::new(inventory.len(), gold, pred)
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn class_counts(&self) -> Vec<Counts> {
        let mut counts = vec![Counts::default(); self.num_classes];
        for (g, p) in self.gold.iter().zip(&self.pred) {
            for (c, k) in counts.iter_mut().enumerate() {
                k.add(g[c], p[c]);
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn multilabel_f1(preds: &MultiLabelPredictions, averaging: Averaging) -> f64 {
    let counts = preds.class_counts();
    match averaging {
        Averaging::Macro => mean(counts.iter().map(Counts::f1)),
        Averaging::Micro => {
            let mut pooled = Counts::default();
            for c in &counts {
                pooled.tp += c.tp;
                pooled.fp += c.fp;
                pooled.fn_ += c.fn_;
            }
            pooled.f1()
        }
    }
}

pub fn sample_jaccard(preds: &MultiLabelPredictions) -> f64 {
    mean(preds.gold.iter().zip(&preds.pred).map(|(g, p)| {
        let inter = g.iter().zip(p).filter(|(a, b)| **a && **b).count();
        let union = g.iter().zip(p).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }))
}

/// Macro-averaged (precision, recall).
pub fn multilabel_precision_recall(preds: &MultiLabelPredictions) -> (f64, f64) {
    let counts = preds.class_counts();
    (
        mean(counts.iter().map(Counts::precision)),
        mean(counts.iter().map(Counts::recall)),
    )
}

/// Gold and predicted polarity per example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulticlassPredictions {
    pairs: Vec<(Polarity, Polarity)>,
}

impl MulticlassPredictions {
    pub fn new(pairs: Vec<(Polarity, Polarity)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("no examples to score".into()));
        }
        Ok(MulticlassPredictions { pairs })
    }

    pub fn pairs(&self) -> &[(Polarity, Polarity)] {
        &self.pairs
    }
}

pub fn accuracy(preds: &MulticlassPredictions) -> f64 {
    let correct = preds.pairs.iter().filter(|(g, p)| g == p).count();
    ratio(correct, preds.pairs.len())
}

pub fn multiclass_f1(preds: &MulticlassPredictions, averaging: Averaging) -> f64 {
    match averaging {
        Averaging::Micro => accuracy(preds),
        Averaging::Macro => {
            let mut counts = [Counts::default(); 3];
            for &(g, p) in &preds.pairs {
                for (c, k) in counts.iter_mut().enumerate() {
                    k.add(g.index() == c, p.index() == c);
                }
            }
            mean(counts.iter().map(Counts::f1))
        }
    }
}

pub const DETECT_KEYS: [&str; 5] = ["f1_macro", "f1_micro", "jaccard", "precision", "recall"];
pub const SENTIMENT_KEYS: [&str; 2] = ["f1_micro", "f1_macro"];

/// Where a report came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// Named scores plus provenance. Serializes as one flat JSON object with
/// the provenance under a `provenance` key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl MetricReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn detect(preds: &MultiLabelPredictions) -> Self {
        let (p, r) = multilabel_precision_recall(preds);
        let values = [
            multilabel_f1(preds, Averaging::Macro),
            multilabel_f1(preds, Averaging::Micro),
            sample_jaccard(preds),
            p,
            r,
        ];
        MetricReport {
            metrics: DETECT_KEYS.iter().map(|k| k.to_string()).zip(values).collect(),
            provenance: Provenance::default(),
        }
    }

    pub fn sentiment(preds: &MulticlassPredictions) -> Self {
        let values = [
            multiclass_f1(preds, Averaging::Micro),
            multiclass_f1(preds, Averaging::Macro),
        ];
        MetricReport {
            metrics: SENTIMENT_KEYS.iter().map(|k| k.to_string()).zip(values).collect(),
            provenance: Provenance::default(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Polarity::*;

    fn ml(gold: &[&[u8]], pred: &[&[u8]]) -> MultiLabelPredictions {
        let v = |rows: &[&[u8]]| rows.iter().map(|r| r.iter().map(|&x| x == 1).collect()).collect();
        MultiLabelPredictions::new(gold[0].len(), v(gold), v(pred)).unwrap()
    }

    #[test]
    fn two_class_hand_fixture() {
        // class a: TP 1, FP 1; class b: FN 1
        let p = ml(&[&[1, 0], &[0, 1]], &[&[1, 0], &[1, 0]]);
        assert!((multilabel_f1(&p, Averaging::Macro) - 1.0 / 3.0).abs() < 1e-12);
        assert!((multilabel_f1(&p, Averaging::Micro) - 0.5).abs() < 1e-12);
        let (pr, rc) = multilabel_precision_recall(&p);
        assert!((pr - 0.25).abs() < 1e-12);
        assert!((rc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let p = ml(&[&[1, 0, 1], &[0, 1, 0]], &[&[1, 0, 1], &[0, 1, 0]]);
        for v in [
            multilabel_f1(&p, Averaging::Macro),
            multilabel_f1(&p, Averaging::Micro),
            sample_jaccard(&p),
        ] {
            assert_eq!(v, 1.0);
        }
        assert_eq!(multilabel_precision_recall(&p), (1.0, 1.0));
        let e = ml(&[&[1, 0], &[0, 1]], &[&[0, 0], &[0, 0]]);
        assert_eq!(multilabel_f1(&e, Averaging::Macro), 0.0);
        assert_eq!(multilabel_f1(&e, Averaging::Micro), 0.0);
        let full = ml(&[&[1, 0], &[0, 1]], &[&[1, 1], &[1, 1]]);
        assert_eq!(multilabel_precision_recall(&full).1, 1.0);
    }

    #[test]
    fn jaccard_examples() {
        let inv = AspectInventory::new(["food", "service"]).unwrap();
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let cases = [
            (set(&["service"]), set(&["service"]), 1.0),
            (set(&["food", "service"]), set(&["food"]), 0.5),
            (set(&[]), set(&[]), 1.0),
        ];
        for (g, p, want) in &cases {
            let preds = MultiLabelPredictions::from_sets(&inv, [(g, p)]).unwrap();
            assert_eq!(sample_jaccard(&preds), *want);
        }
        let bad = set(&["decor"]);
        assert!(MultiLabelPredictions::from_sets(&inv, [(&bad, &bad)]).is_err());
    }

    #[test]
    fn multiclass_hand_fixture() {
        let p = MulticlassPredictions::new(vec![
            (Positive, Positive),
            (Positive, Negative),
            (Negative, Negative),
            (Neutral, Neutral),
        ])
        .unwrap();
        assert_eq!(multiclass_f1(&p, Averaging::Micro), 0.75);
        assert!((multiclass_f1(&p, Averaging::Macro) - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(MultiLabelPredictions::new(2, vec![], vec![]).is_err());
        assert!(MulticlassPredictions::new(vec![]).is_err());
        assert!(MultiLabelPredictions::new(2, vec![vec![true]], vec![vec![true]]).is_err());
    }

    #[test]
    fn report_schema_and_round_trip() {
        let p = ml(&[&[1, 0], &[0, 1]], &[&[1, 0], &[0, 1]]);
        let mut r = MetricReport::detect(&p);
        let keys: Vec<&str> = r.metrics.keys().map(String::as_str).collect();
        let mut want = DETECT_KEYS.to_vec();
        want.sort_unstable();
        assert_eq!(keys, want);
        r.provenance.seed = Some(7);
        let json = r.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["f1_macro"], 1.0);
        assert_eq!(v["provenance"]["seed"], 7);
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    fn polarity() -> impl Strategy<Value = Polarity> {
        (0usize..3).prop_map(|i| Polarity::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn order_does_not_matter(
            rows in prop::collection::vec((prop::collection::vec(any::<bool>(), 4), prop::collection::vec(any::<bool>(), 4)), 1..20),
            rot in 0usize..20,
        ) {
            let (g, p): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
            let a = MultiLabelPredictions::new(4, g.clone(), p.clone()).unwrap();
            let k = rot % g.len();
            let mut g2 = g; g2.rotate_left(k);
            let mut p2 = p; p2.rotate_left(k);
            let b = MultiLabelPredictions::new(4, g2, p2).unwrap();
            prop_assert_eq!(MetricReport::detect(&a).metrics.len(), 5);
            for key in DETECT_KEYS {
                let (x, y) = (MetricReport::detect(&a).get(key).unwrap(), MetricReport::detect(&b).get(key).unwrap());
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&x));
            }
        }

        #[test]
        fn jaccard_is_one_iff_all_sets_equal(
            rows in prop::collection::vec((prop::collection::vec(any::<bool>(), 3), prop::collection::vec(any::<bool>(), 3)), 1..10),
        ) {
            let (g, p): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
            let equal = g == p;
            let js = sample_jaccard(&MultiLabelPredictions::new(3, g, p).unwrap());
            prop_assert!(js <= 1.0);
            prop_assert_eq!(js == 1.0, equal);
        }

        #[test]
        fn micro_f1_is_accuracy(pairs in prop::collection::vec((polarity(), polarity()), 1..40)) {
            let p = MulticlassPredictions::new(pairs.clone()).unwrap();
            let acc = pairs.iter().filter(|(g, q)| g == q).count() as f64 / pairs.len() as f64;
            prop_assert_eq!(multiclass_f1(&p, Averaging::Micro), acc);
        }
    }
}
