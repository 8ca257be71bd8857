//! Three-way polarity classification of an (auxiliary question, sentence)
//! pair from the sequence-start hidden state.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Dropout, Gradients, Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor, LOG_FLOOR};
use crate::checkpoint::{self, CheckpointParts, HeadInfo, Manifest, TrainingProvenance};
use crate::corpus::{AbsaRecord, AspectInventory, Polarity};
use crate::encoder::{Backbone, EncoderSpec, TokenSequence};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MulticlassPredictions};
use crate::templating::{
    build_sentiment_input, build_sentiment_query, render_target, AspectMode, AspectModeKind, PairedText,
};
use crate::trainer::{Labelled, Trainable};

/// Probabilities over (positive, negative, neutral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarityDistribution {
    pub p: [f64; 3],
}

impl PolarityDistribution {
    pub fn from_logits(z: [f64; 3]) -> Self {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e = z.map(|v| (v - m).exp());
        let s: f64 = e.iter().sum();
        PolarityDistribution { p: e.map(|v| v / s) }
    }

    pub fn uniform() -> Self {
        PolarityDistribution { p: [1.0 / 3.0; 3] }
    }

    pub fn prob(&self, c: Polarity) -> f64 {
        self.p[c.index()]
    }

    /// Most likely class; ties go to the earlier class.
    pub fn argmax(&self) -> Polarity {
        let mut best = 0;
        for i in 1..3 {
            if self.p[i] > self.p[best] {
                best = i;
            }
        }
        Polarity::from_index(best).expect("three classes")
    }

    /// Probabilities keyed by class name.
    pub fn named(&self) -> std::collections::BTreeMap<&'static str, f64> {
        Polarity::ALL.iter().map(|&c| (c.name(), self.prob(c))).collect()
    }
}

/// One-hot gold class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolarityLabel(pub Polarity);

impl PolarityLabel {
    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.0.index()] = 1.0;
        v
    }
}

/// `−log p[gold]`, with the probability floored at 1e-12.
pub fn cross_entropy(label: PolarityLabel, p: &PolarityDistribution) -> f64 {
    -p.prob(label.0).max(LOG_FLOOR).ln()
}

/// Sentiment input for a sentence and target under an aspect mode.
pub fn paired_input(sentence: &str, target: &str, mode: &AspectMode, null_target: &str) -> Result<PairedText> {
    let query = build_sentiment_query(mode, render_target(target, null_target))?;
    build_sentiment_input(&query, sentence)
}

/// The aspect mode a record maps to: its own aspects, the whole inventory,
/// or none.
pub fn record_mode(record: &AbsaRecord, kind: AspectModeKind, inventory: &AspectInventory) -> AspectMode {
    match kind {
        AspectModeKind::Right => AspectMode::right(record.aspects.iter().cloned()),
        AspectModeKind::All => AspectMode::all(inventory),
        AspectModeKind::None => AspectMode::none(),
    }
}

/// How records are turned into sentiment inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub mode: AspectModeKind,
    /// Aspect list used by `all` mode.
    pub inventory: AspectInventory,
    /// Surface form of records with no explicit target.
    pub null_target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentimentExample {
    pub id: String,
    pub tokens: TokenSequence,
    pub gold: Polarity,
}

impl Labelled for SentimentExample {
    fn id(&self) -> &str {
        &self.id
    }
}

fn head_tensor(shape: (usize, usize), rng: Option<&mut dyn rand::RngCore>) -> Tensor {
    match rng {
        None => Tensor::zeros(shape),
        Some(rng) => {
            let normal = Normal::new(0.0, 0.02).expect("valid std");
            Tensor::from_shape_fn(shape, |_| normal.sample(rng))
        }
    }
}

#[derive(Debug)]
pub struct SentimentPredictor {
    backbone: Backbone,
    store: ParamStore,
    head_weight: ParamId,
    head_bias: ParamId,
    query_mode: AspectModeKind,
}

impl SentimentPredictor {
    /// Attach a D→3 head; `rng = None` gives a zero head.
    pub fn new(
        backbone: Backbone,
        mut store: ParamStore,
        query_mode: AspectModeKind,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Self {
        let d = backbone.hidden();
        let head_weight = store.add("sentiment.head.weight", head_tensor((d, 3), rng), ParamGroup::Head);
        let head_bias = store.add("sentiment.head.bias", Tensor::zeros((1, 3)), ParamGroup::Head);
        SentimentPredictor {
            backbone,
            store,
            head_weight,
            head_bias,
            query_mode,
        }
    }

    pub fn toy(spec: &EncoderSpec, query_mode: AspectModeKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::toy(spec, &mut store, &mut rng)?;
        Ok(Self::new(backbone, store, query_mode, Some(&mut rng)))
    }

    pub fn pretrained(spec: &EncoderSpec, dir: &Path, query_mode: AspectModeKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::pretrained(spec, dir, &mut store)?;
        Ok(Self::new(backbone, store, query_mode, Some(&mut rng)))
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    /// Query mode the predictor was trained with.
    pub fn query_mode(&self) -> AspectModeKind {
        self.query_mode
    }

    /// 1×3 logit node.
    pub fn logits(
        &self,
        g: &mut Graph,
        t: &TokenSequence,
        mut dropout: Option<&mut Dropout<ChaCha8Rng>>,
    ) -> Result<NodeId> {
        let h = self.backbone.forward(g, t, dropout.as_deref_mut())?;
        let cls = g.select_rows(h, &[0]);
        let cls = g.dropout(cls, dropout);
        let w = g.param(self.head_weight);
        let z = g.matmul(cls, w);
        let b = g.param(self.head_bias);
        Ok(g.add_row(z, b))
    }

    pub fn distribution_for(&self, t: &TokenSequence) -> Result<PolarityDistribution> {
        let mut g = Graph::new(&self.store);
        let z = self.logits(&mut g, t, None)?;
        let v = g.value(z);
        Ok(PolarityDistribution::from_logits([v[[0, 0]], v[[0, 1]], v[[0, 2]]]))
    }

    pub fn predict_polarity(&self, p: &PairedText) -> Result<PolarityDistribution> {
        self.distribution_for(&self.backbone.tokenize_pair(p)?)
    }

    /// Tokenized examples for every record; records without a polarity are
    /// reported together.
    pub fn examples(&self, records: &[AbsaRecord], spec: &QuerySpec) -> Result<Vec<SentimentExample>> {
        let missing: Vec<String> = records
            .iter()
            .filter(|r| r.polarity.is_none())
            .map(|r| r.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingLabels(missing));
        }
        records
            .iter()
            .map(|r| {
                let mode = record_mode(r, spec.mode, &spec.inventory);
                let p = paired_input(&r.sentence, &r.target, &mode, &spec.null_target)?;
                Ok(SentimentExample {
                    id: r.id.clone(),
                    tokens: self.backbone.tokenize_pair(&p)?,
                    gold: r.polarity.expect("checked above"),
                })
            })
            .collect()
    }

    pub fn evaluate_examples(&self, examples: &[SentimentExample]) -> Result<MetricReport> {
        let pairs = examples
            .par_iter()
            .map(|e| Ok((e.gold, self.distribution_for(&e.tokens)?.argmax())))
            .collect::<Result<Vec<_>>>()?;
        let mut report = MetricReport::sentiment(&MulticlassPredictions::new(pairs)?);
        report.provenance.records = Some(examples.len());
        Ok(report)
    }

    pub fn save(&self, dir: &Path, provenance: TrainingProvenance) -> Result<Manifest> {
        checkpoint::write(
            dir,
            CheckpointParts {
                backbone: &self.backbone,
                store: &self.store,
                head: HeadInfo::Sentiment {
                    classes: Polarity::ALL.iter().map(|c| c.name().to_string()).collect(),
                    query_mode: self.query_mode,
                },
                provenance,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let m = checkpoint::read_manifest(dir)?;
        let HeadInfo::Sentiment { classes, query_mode } = m.head.clone() else {
            return Err(Error::Checkpoint(format!("{} is not a sentiment checkpoint", dir.display())));
        };
        let expected: Vec<&str> = Polarity::ALL.iter().map(|c| c.name()).collect();
        if classes != expected {
            return Err(Error::Checkpoint(format!("unexpected class order {classes:?}")));
        }
        let mut store = ParamStore::new();
        let backbone = checkpoint::rebuild_backbone(dir, &m, &mut store)?;
        let mut pred = Self::new(backbone, store, query_mode, None);
        checkpoint::load_values(dir, &m, &mut pred.store)?;
        Ok((pred, m))
    }
}

impl Trainable for SentimentPredictor {
    type Example = SentimentExample;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn example_loss(
        &self,
        ex: &SentimentExample,
        dropout: Option<&mut Dropout<ChaCha8Rng>>,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(&self.store);
        let z = self.logits(&mut g, &ex.tokens, dropout)?;
        let loss = g.softmax_cross_entropy(z, ex.gold.index());
        Ok((g.scalar(loss), g.backward(loss)))
    }

    fn evaluate(&self, examples: &[SentimentExample]) -> Result<MetricReport> {
        self.evaluate_examples(examples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_head_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let b = Backbone::toy(&EncoderSpec::toy(), &mut store, &mut rng).unwrap();
        let pred = SentimentPredictor::new(b, store, AspectModeKind::Right, None);
        let p = paired_input("the soup was cold", "NULL", &AspectMode::right(["food"]), "it").unwrap();
        let d = pred.predict_polarity(&p).unwrap();
        for v in d.p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let pos = PolarityLabel(Polarity::Positive);
        let d = PolarityDistribution { p: [0.7, 0.2, 0.1] };
        assert!((cross_entropy(pos, &d) - 0.356_67).abs() < 1e-5);
        assert!((cross_entropy(pos, &PolarityDistribution::uniform()) - 3f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(pos, &PolarityDistribution { p: [1.0, 0.0, 0.0] }).abs() < 1e-15);
        let floored = cross_entropy(pos, &PolarityDistribution { p: [0.0, 1.0, 0.0] });
        assert!((floored - 12.0 * 10f64.ln()).abs() < 1e-9);
        assert_eq!(PolarityLabel(Polarity::Neutral).one_hot(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn records_without_polarity_are_listed() {
        let pred = SentimentPredictor::toy(&EncoderSpec::toy(), AspectModeKind::None, 1).unwrap();
        let rec = |id: &str, pol| AbsaRecord {
            id: id.into(),
            sentence: "fine".into(),
            target: "NULL".into(),
            aspects: ["food".to_string()].into(),
            polarity: pol,
            domain_tag: "t".into(),
        };
        let spec = QuerySpec {
            mode: AspectModeKind::None,
            inventory: AspectInventory::new(["food"]).unwrap(),
            null_target: "it".into(),
        };
        let err = pred
            .examples(&[rec("a", None), rec("b", Some(Polarity::Positive)), rec("c", None)], &spec)
            .unwrap_err();
        assert!(matches!(err, Error::MissingLabels(ids) if ids == ["a", "c"]));
    }

    #[test]
    fn checkpoint_round_trip() {
        let pred = SentimentPredictor::toy(&EncoderSpec::toy(), AspectModeKind::Right, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        pred.save(dir.path(), TrainingProvenance::new(4)).unwrap();
        let (back, m) = SentimentPredictor::load(dir.path()).unwrap();
        assert_eq!(back.query_mode(), AspectModeKind::Right);
        assert!(matches!(m.head, HeadInfo::Sentiment { .. }));
        let p = paired_input("great pasta", "NULL", &AspectMode::none(), "it").unwrap();
        assert_eq!(pred.predict_polarity(&p).unwrap(), back.predict_polarity(&p).unwrap());
        assert!(crate::detector::AspectDetector::load(dir.path()).is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(z in prop::array::uniform3(-20.0f64..20.0), c in -50.0f64..50.0) {
            let a = PolarityDistribution::from_logits(z);
            let b = PolarityDistribution::from_logits(z.map(|v| v + c));
            for i in 0..3 {
                prop_assert!((a.p[i] - b.p[i]).abs() < 1e-9);
            }
            prop_assert!((a.p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(a.p.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn cross_entropy_non_negative(z in prop::array::uniform3(-20.0f64..20.0), g in 0usize..3) {
            let d = PolarityDistribution::from_logits(z);
            prop_assert!(cross_entropy(PolarityLabel(Polarity::from_index(g).unwrap()), &d) >= 0.0);
        }
    }
}
