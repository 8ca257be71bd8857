//! Multi-label aspect detection.
//!
//! The inventory is written into the first input segment; a shared
//! one-output projection reads the hidden state at each aspect name's first
//! token, giving one sigmoid score per aspect.

mod loss;

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Dropout, Gradients, Graph, NodeId, ParamGroup, ParamId, ParamStore, Tensor};
use crate::checkpoint::{self, CheckpointParts, HeadInfo, Manifest, TrainingProvenance};
use crate::corpus::{detection_view, AbsaRecord, AspectInventory};
use crate::encoder::{Backbone, EncoderSpec, TokenSequence};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MultiLabelPredictions};
use crate::templating::{build_detector_input, order_by_score};
use crate::trainer::{Labelled, Trainable};

pub use loss::{bce_loss, bce_with_logits, combined_loss, combined_loss_with_grad, lca_loss};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Binary membership vector over an inventory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector {
    y: Vec<bool>,
}

impl LabelVector {
    pub fn new(y: Vec<bool>) -> Self {
        LabelVector { y }
    }

    pub fn from_aspects(inventory: &AspectInventory, aspects: &BTreeSet<String>) -> Result<Self> {
        Ok(LabelVector::new(inventory.label_vector(aspects)?))
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> Vec<usize> {
        (0..self.y.len()).filter(|&i| self.y[i]).collect()
    }

    pub fn negatives(&self) -> Vec<usize> {
        (0..self.y.len()).filter(|&i| !self.y[i]).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// Indices with a score strictly above `threshold`.
pub fn threshold_select(scores: &[f64], threshold: f64) -> Vec<usize> {
    (0..scores.len()).filter(|&i| scores[i] > threshold).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutput {
    /// One score per inventory entry, in inventory order.
    pub scores: Vec<f64>,
    /// Aspects scoring above the threshold, highest score first.
    pub predicted: Vec<String>,
    pub threshold: f64,
}

impl DetectorOutput {
    pub fn from_scores(inventory: &AspectInventory, scores: Vec<f64>, threshold: f64) -> Self {
        let selected = threshold_select(&scores, threshold);
        DetectorOutput {
            predicted: order_by_score(inventory, &scores, &selected),
            scores,
            threshold,
        }
    }

    pub fn predicted_set(&self) -> BTreeSet<String> {
        self.predicted.iter().cloned().collect()
    }
}

/// How the projection head starts.
pub enum HeadInit<'r> {
    Zeros,
    Random(&'r mut dyn rand::RngCore),
}

fn head_tensor(shape: (usize, usize), init: &mut HeadInit<'_>) -> Tensor {
    match init {
        HeadInit::Zeros => Tensor::zeros(shape),
        HeadInit::Random(rng) => {
            let normal = Normal::new(0.0, 0.02).expect("valid std");
            Tensor::from_shape_fn(shape, |_| normal.sample(rng))
        }
    }
}

/// A tokenized detector example.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorExample {
    pub id: String,
    pub tokens: TokenSequence,
    pub labels: LabelVector,
}

impl Labelled for DetectorExample {
    fn id(&self) -> &str {
        &self.id
    }
}

#[derive(Debug)]
pub struct AspectDetector {
    backbone: Backbone,
    store: ParamStore,
    inventory: AspectInventory,
    head_weight: ParamId,
    head_bias: ParamId,
    threshold: f64,
    alpha: f64,
}

impl AspectDetector {
    /// Attach a fresh head to `backbone`, whose parameters live in `store`.
    pub fn new(
        backbone: Backbone,
        mut store: ParamStore,
        inventory: AspectInventory,
        mut init: HeadInit<'_>,
    ) -> Result<Self> {
        if inventory.is_empty() {
            return Err(Error::EmptyInventory);
        }
        let d = backbone.hidden();
        let head_weight = store.add("detector.head.weight", head_tensor((d, 1), &mut init), ParamGroup::Head);
        let head_bias = store.add("detector.head.bias", Tensor::zeros((1, 1)), ParamGroup::Head);
        Ok(AspectDetector {
            backbone,
            store,
            inventory,
            head_weight,
            head_bias,
            threshold: DEFAULT_THRESHOLD,
            alpha: DEFAULT_ALPHA,
        })
    }

    /// Toy backbone and head, both drawn from `seed`.
    pub fn toy(spec: &EncoderSpec, inventory: AspectInventory, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::toy(spec, &mut store, &mut rng)?;
        Self::new(backbone, store, inventory, HeadInit::Random(&mut rng))
    }

    pub fn pretrained(spec: &EncoderSpec, dir: &Path, inventory: AspectInventory, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::pretrained(spec, dir, &mut store)?;
        Self::new(backbone, store, inventory, HeadInit::Random(&mut rng))
    }

    pub fn inventory(&self) -> &AspectInventory {
        &self.inventory
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Hyperparameter(format!("threshold {threshold} outside (0, 1)")));
        }
        self.threshold = threshold;
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Hyperparameter(format!("alpha {alpha} outside [0, 1]")));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn tokenize(&self, sentence: &str) -> Result<TokenSequence> {
        self.backbone
            .tokenize_pair(&build_detector_input(&self.inventory, sentence)?)
    }

    /// C×1 logit node.
    pub fn logits(
        &self,
        g: &mut Graph,
        t: &TokenSequence,
        mut dropout: Option<&mut Dropout<ChaCha8Rng>>,
    ) -> Result<NodeId> {
        if t.aspect_positions.len() != self.inventory.len() {
            return Err(Error::LengthMismatch {
                expected: self.inventory.len(),
                actual: t.aspect_positions.len(),
            });
        }
        let h = self.backbone.forward(g, t, dropout.as_deref_mut())?;
        let a = g.select_rows(h, &t.aspect_positions);
        let a = g.dropout(a, dropout);
        let w = g.param(self.head_weight);
        let z = g.matmul(a, w);
        let b = g.param(self.head_bias);
        Ok(g.add_row(z, b))
    }

    pub fn scores_for(&self, t: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.store);
        let z = self.logits(&mut g, t, None)?;
        let s = g.sigmoid(z);
        Ok(g.value(s).iter().copied().collect())
    }

    /// Score every aspect of `inventory` for `sentence`. The inventory must
    /// be the one the model was built with.
    pub fn predict_scores(&self, sentence: &str, inventory: &AspectInventory) -> Result<DetectorOutput> {
        if inventory != &self.inventory {
            return Err(Error::InventoryMismatch {
                expected: self.inventory.names().to_vec(),
                actual: inventory.names().to_vec(),
            });
        }
        self.detect(sentence)
    }

    pub fn detect(&self, sentence: &str) -> Result<DetectorOutput> {
        let scores = self.scores_for(&self.tokenize(sentence)?)?;
        Ok(DetectorOutput::from_scores(&self.inventory, scores, self.threshold))
    }

    /// Merge records per (sentence, target) and tokenize them.
    pub fn examples(&self, records: &[AbsaRecord]) -> Result<Vec<DetectorExample>> {
        detection_view(records)
            .into_iter()
            .map(|r| {
                Ok(DetectorExample {
                    tokens: self.tokenize(&r.sentence)?,
                    labels: LabelVector::from_aspects(&self.inventory, &r.aspects)?,
                    id: r.id,
                })
            })
            .collect()
    }

    pub fn evaluate_examples(&self, examples: &[DetectorExample]) -> Result<MetricReport> {
        let preds: Vec<Vec<bool>> = examples
            .par_iter()
            .map(|e| {
                let s = self.scores_for(&e.tokens)?;
                Ok(s.iter().map(|&v| v > self.threshold).collect())
            })
            .collect::<Result<_>>()?;
        let gold = examples.iter().map(|e| e.labels.as_slice().to_vec()).collect();
        let mut report = MetricReport::detect(&MultiLabelPredictions::new(self.inventory.len(), gold, preds)?);
        report.provenance.records = Some(examples.len());
        Ok(report)
    }

    /// Detection metrics over `records` (merged per sentence and target).
    pub fn evaluate(&self, records: &[AbsaRecord]) -> Result<MetricReport> {
        self.evaluate_examples(&self.examples(records)?)
    }

    pub fn save(&self, dir: &Path, provenance: TrainingProvenance) -> Result<Manifest> {
        checkpoint::write(
            dir,
            CheckpointParts {
                backbone: &self.backbone,
                store: &self.store,
                head: HeadInfo::Detector {
                    inventory: self.inventory.clone(),
                    threshold: self.threshold,
                    alpha: self.alpha,
                },
                provenance,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let m = checkpoint::read_manifest(dir)?;
        let HeadInfo::Detector {
            inventory,
            threshold,
            alpha,
        } = m.head.clone()
        else {
            return Err(Error::Checkpoint(format!("{} is not a detector checkpoint", dir.display())));
        };
        let mut store = ParamStore::new();
        let backbone = checkpoint::rebuild_backbone(dir, &m, &mut store)?;
        let mut det = Self::new(backbone, store, inventory, HeadInit::Zeros)?;
        checkpoint::load_values(dir, &m, &mut det.store)?;
        det.set_threshold(threshold)?;
        det.set_alpha(alpha)?;
        Ok((det, m))
    }
}

impl Trainable for AspectDetector {
    type Example = DetectorExample;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn example_loss(
        &self,
        ex: &DetectorExample,
        dropout: Option<&mut Dropout<ChaCha8Rng>>,
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(&self.store);
        let z = self.logits(&mut g, &ex.tokens, dropout)?;
        let bce = g.bce_with_logits(z, &ex.labels.targets());
        let s = g.sigmoid(z);
        let lca = g.lca(s, ex.labels.as_slice());
        let bce = g.scale(bce, 1.0 - self.alpha);
        let lca = g.scale(lca, self.alpha);
        let loss = g.sum(&[bce, lca]);
        Ok((g.scalar(loss), g.backward(loss)))
    }

    fn evaluate(&self, examples: &[DetectorExample]) -> Result<MetricReport> {
        self.evaluate_examples(examples)
    }
}
