//! Detector → auxiliary question → sentiment predictor, plus the
//! fixed-query baselines it is compared against.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AbsaRecord, AspectInventory, Polarity};
use crate::detector::{AspectDetector, DetectorOutput};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MulticlassPredictions};
use crate::sentiment::{paired_input, PolarityDistribution, SentimentPredictor};
use crate::templating::{AspectMode, AspectModeKind, PairedText};

pub const DEFAULT_NULL_TARGET: &str = "it";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Predicted,
    Right,
    All,
    None,
}

impl EvalMode {
    pub const ALL_MODES: [EvalMode; 4] = [EvalMode::Right, EvalMode::All, EvalMode::None, EvalMode::Predicted];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Predicted => "predicted",
            EvalMode::Right => "right",
            EvalMode::All => "all",
            EvalMode::None => "none",
        }
    }

    /// The fixed query mode of a baseline; `None` for predicted mode.
    pub fn baseline(self) -> Option<AspectModeKind> {
        match self {
            EvalMode::Predicted => None,
            EvalMode::Right => Some(AspectModeKind::Right),
            EvalMode::All => Some(AspectModeKind::All),
            EvalMode::None => Some(AspectModeKind::None),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(EvalMode::Predicted),
            "right" => Ok(EvalMode::Right),
            "all" => Ok(EvalMode::All),
            "none" => Ok(EvalMode::None),
            other => Err(Error::InvalidInput(format!("unknown mode `{other}`"))),
        }
    }
}

/// What predicted mode asks when the detector finds nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    NoneMode,
    AllMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: EvalMode,
    pub fallback: Fallback,
    /// Target surface form for records without an explicit target.
    pub null_target: String,
}

impl PipelineConfig {
    pub fn new(mode: EvalMode) -> Self {
        PipelineConfig {
            mode,
            fallback: Fallback::NoneMode,
            null_target: DEFAULT_NULL_TARGET.to_string(),
        }
    }
}

/// Anything that scores aspects for a sentence.
pub trait AspectScorer: Sync {
    fn inventory(&self) -> &AspectInventory;
    fn detect(&self, sentence: &str) -> Result<DetectorOutput>;
}

/// Anything that maps a paired input to a polarity distribution.
pub trait PolarityPredictor: Sync {
    fn predict(&self, input: &PairedText) -> Result<PolarityDistribution>;
}

impl AspectScorer for AspectDetector {
    fn inventory(&self) -> &AspectInventory {
        AspectDetector::inventory(self)
    }

    fn detect(&self, sentence: &str) -> Result<DetectorOutput> {
        AspectDetector::detect(self, sentence)
    }
}

impl PolarityPredictor for SentimentPredictor {
    fn predict(&self, input: &PairedText) -> Result<PolarityDistribution> {
        self.predict_polarity(input)
    }
}

/// Predicted aspects and the query built from them.
pub fn big_model_query(
    sentence: &str,
    target: &str,
    detector: &dyn AspectScorer,
    cfg: &PipelineConfig,
) -> Result<(Vec<String>, PairedText)> {
    let out = detector.detect(sentence)?;
    let mode = if out.predicted.is_empty() {
        match cfg.fallback {
            Fallback::NoneMode => AspectMode::none(),
            Fallback::AllMode => AspectMode::all(detector.inventory()),
        }
    } else {
        AspectMode::right(out.predicted.iter().cloned())
    };
    let input = paired_input(sentence, target, &mode, &cfg.null_target)?;
    Ok((out.predicted, input))
}

/// Detect aspects, ask about them, predict.
pub fn big_model_predict(
    sentence: &str,
    target: &str,
    detector: &dyn AspectScorer,
    predictor: &dyn PolarityPredictor,
    cfg: &PipelineConfig,
) -> Result<(Vec<String>, PolarityDistribution)> {
    let (aspects, input) = big_model_query(sentence, target, detector, cfg)?;
    Ok((aspects, predictor.predict(&input)?))
}

/// Predict with a fixed query mode and no detector.
pub fn baseline_predict(
    sentence: &str,
    target: &str,
    mode: &AspectMode,
    predictor: &dyn PolarityPredictor,
    null_target: &str,
) -> Result<PolarityDistribution> {
    predictor.predict(&paired_input(sentence, target, mode, null_target)?)
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub mode: EvalMode,
    pub aspects_used: Vec<String>,
    pub distribution: BTreeMap<String, f64>,
    pub argmax: Polarity,
    pub gold: Polarity,
}

/// Everything a cross-domain evaluation needs.
pub struct EvalInputs<'a> {
    pub detector: Option<&'a dyn AspectScorer>,
    pub predictor: &'a dyn PolarityPredictor,
    /// Aspect list for all mode (and the all-mode fallback).
    pub inventory: &'a AspectInventory,
    pub cfg: &'a PipelineConfig,
}

/// Run one mode over `records` and score argmax predictions against gold.
pub fn cross_domain_eval(inputs: &EvalInputs<'_>, records: &[AbsaRecord]) -> Result<(MetricReport, Vec<Prediction>)> {
    let cfg = inputs.cfg;
    let missing: Vec<String> = records
        .iter()
        .filter(|r| r.polarity.is_none() || (cfg.mode == EvalMode::Right && r.aspects.is_empty()))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    if cfg.mode == EvalMode::Predicted && inputs.detector.is_none() {
        return Err(Error::InvalidInput("predicted mode needs a detector".into()));
    }
    if let Some(d) = inputs.detector {
        if cfg.mode == EvalMode::Predicted && d.inventory() != inputs.inventory {
            return Err(Error::InventoryMismatch {
                expected: d.inventory().names().to_vec(),
                actual: inputs.inventory.names().to_vec(),
            });
        }
    }

    let predictions = records
        .par_iter()
        .map(|r| {
            let (aspects_used, dist) = match cfg.mode {
                EvalMode::Predicted => {
                    let det = inputs.detector.expect("checked above");
                    big_model_predict(&r.sentence, &r.target, det, inputs.predictor, cfg)?
                }
                EvalMode::Right => {
                    let mode = AspectMode::right(r.aspects.iter().cloned());
                    let d = baseline_predict(&r.sentence, &r.target, &mode, inputs.predictor, &cfg.null_target)?;
                    (mode.aspects().to_vec(), d)
                }
                EvalMode::All => {
                    let mode = AspectMode::all(inputs.inventory);
                    let d = baseline_predict(&r.sentence, &r.target, &mode, inputs.predictor, &cfg.null_target)?;
                    (mode.aspects().to_vec(), d)
                }
                EvalMode::None => {
                    let d = baseline_predict(&r.sentence, &r.target, &AspectMode::none(), inputs.predictor, &cfg.null_target)?;
                    (Vec::new(), d)
                }
            };
            Ok(Prediction {
                id: r.id.clone(),
                mode: cfg.mode,
                aspects_used,
                distribution: dist.named().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
                argmax: dist.argmax(),
                gold: r.polarity.expect("checked above"),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pairs = predictions.iter().map(|p| (p.gold, p.argmax)).collect();
    let mut report = MetricReport::sentiment(&MulticlassPredictions::new(pairs)?);
    report.provenance.mode = Some(cfg.mode.as_str().to_string());
    report.provenance.records = Some(records.len());
    Ok((report, predictions))
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = Vec::new();
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    const SENTENCE: &str = "The food is delicious, but it's too expensive";

    fn inventory() -> AspectInventory {
        AspectInventory::new(["quality", "price", "atmosphere"]).unwrap()
    }

    /// Returns fixed scores and counts calls.
    struct FixedDetector {
        inventory: AspectInventory,
        scores: Vec<f64>,
        calls: AtomicUsize,
    }

    impl AspectScorer for FixedDetector {
        fn inventory(&self) -> &AspectInventory {
            &self.inventory
        }

        fn detect(&self, _: &str) -> Result<DetectorOutput> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(DetectorOutput::from_scores(&self.inventory, self.scores.clone(), 0.5))
        }
    }

    fn detector(scores: &[f64]) -> FixedDetector {
        FixedDetector {
            inventory: inventory(),
            scores: scores.to_vec(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Records every input; the distribution is a deterministic function of
    /// the input text.
    #[derive(Default)]
    struct Recorder {
        seen: Mutex<Vec<String>>,
    }

    impl PolarityPredictor for Recorder {
        fn predict(&self, input: &PairedText) -> Result<PolarityDistribution> {
            let text = input.render_marked();
            let h = text.bytes().fold(7u64, |a, b| a.wrapping_mul(31).wrapping_add(u64::from(b)));
            self.seen.lock().unwrap().push(text);
            Ok(PolarityDistribution::from_logits([(h % 7) as f64, (h % 5) as f64, (h % 3) as f64]))
        }
    }

    /// Answers each record's gold polarity, keyed by sentence.
    struct Oracle(BTreeMap<String, Polarity>);

    impl PolarityPredictor for Oracle {
        fn predict(&self, input: &PairedText) -> Result<PolarityDistribution> {
            let mut z = [0.0; 3];
            z[self.0[&input.segment_b].index()] = 10.0;
            Ok(PolarityDistribution::from_logits(z))
        }
    }

    fn record(id: &str, sentence: &str, aspects: &[&str], pol: Polarity) -> AbsaRecord {
        AbsaRecord {
            id: id.into(),
            sentence: sentence.into(),
            target: "NULL".into(),
            aspects: aspects.iter().map(|s| s.to_string()).collect(),
            polarity: Some(pol),
            domain_tag: "test".into(),
        }
    }

    #[test]
    fn predicted_aspects_give_the_first_reference_prompt() {
        let det = detector(&[0.9, 0.7, 0.1]);
        let rec = Recorder::default();
        let (aspects, _) =
            big_model_predict(SENTENCE, "the food", &det, &rec, &PipelineConfig::new(EvalMode::Predicted)).unwrap();
        assert_eq!(aspects, vec!["quality", "price"]);
        assert_eq!(
            rec.seen.lock().unwrap()[0],
            "[CLS] what do you think of quality, and price of the food? [SEP] The food is delicious, but it's too expensive [SEP]"
        );
    }

    #[test]
    fn empty_detection_falls_back() {
        let det = detector(&[0.1, 0.2, 0.3]);
        let rec = Recorder::default();
        let mut cfg = PipelineConfig::new(EvalMode::Predicted);
        big_model_predict(SENTENCE, "the food", &det, &rec, &cfg).unwrap();
        cfg.fallback = Fallback::AllMode;
        big_model_predict(SENTENCE, "the food", &det, &rec, &cfg).unwrap();
        let seen = rec.seen.lock().unwrap();
        assert!(seen[0].starts_with("[CLS] what do you think of NULL of the food? [SEP]"));
        assert!(seen[1].starts_with("[CLS] what do you think of quality, price and atmosphere of the food? [SEP]"));
    }

    #[test]
    fn identical_inputs_give_identical_distributions() {
        let rec = Recorder::default();
        let inv = inventory();
        // full detection ordered by inventory position equals all mode
        let det = detector(&[0.9, 0.8, 0.7]);
        let (_, a) =
            big_model_predict(SENTENCE, "the food", &det, &rec, &PipelineConfig::new(EvalMode::Predicted)).unwrap();
        let b = baseline_predict(SENTENCE, "the food", &AspectMode::all(&inv), &rec, "it").unwrap();
        assert_eq!(a, b);
        let right = baseline_predict(SENTENCE, "the food", &AspectMode::right(inv.names().to_vec()), &rec, "it").unwrap();
        assert_eq!(right, b);
        let seen = rec.seen.lock().unwrap();
        assert_eq!(seen[0], seen[1]);
        assert_eq!(seen[1], seen[2]);
    }

    #[test]
    fn big_model_is_detector_then_right_mode() {
        let det = detector(&[0.2, 0.95, 0.6]);
        let rec = Recorder::default();
        let cfg = PipelineConfig::new(EvalMode::Predicted);
        let (aspects, a) = big_model_predict(SENTENCE, "NULL", &det, &rec, &cfg).unwrap();
        let b = baseline_predict(SENTENCE, "NULL", &AspectMode::right(aspects.clone()), &rec, "it").unwrap();
        assert_eq!(a, b);
        assert_eq!(aspects, vec!["price", "atmosphere"]);
    }

    #[test]
    fn right_mode_needs_aspects() {
        let rec = Recorder::default();
        let err = baseline_predict(SENTENCE, "x", &AspectMode::right(Vec::<String>::new()), &rec, "it").unwrap_err();
        assert!(matches!(err, Error::EmptyRightAspects));
        let inv = inventory();
        let cfg = PipelineConfig::new(EvalMode::Right);
        let inputs = EvalInputs {
            detector: None,
            predictor: &rec,
            inventory: &inv,
            cfg: &cfg,
        };
        let recs = [record("a", "s", &[], Polarity::Neutral)];
        assert!(matches!(cross_domain_eval(&inputs, &recs), Err(Error::MissingLabels(ids)) if ids == ["a"]));
    }

    #[test]
    fn call_counts_and_gold_stub() {
        let recs: Vec<AbsaRecord> = (0..9)
            .map(|i| record(&format!("r{i}"), &format!("sentence {i}"), &["price"], Polarity::from_index(i % 3).unwrap()))
            .collect();
        let oracle = Oracle(recs.iter().map(|r| (r.sentence.clone(), r.polarity.unwrap())).collect());
        let inv = inventory();
        let det = detector(&[0.1, 0.9, 0.1]);
        for mode in EvalMode::ALL_MODES {
            let cfg = PipelineConfig::new(mode);
            let inputs = EvalInputs {
                detector: Some(&det),
                predictor: &oracle,
                inventory: &inv,
                cfg: &cfg,
            };
            let (report, preds) = cross_domain_eval(&inputs, &recs).unwrap();
            assert_eq!(report.get("f1_micro"), Some(1.0));
            assert_eq!(report.get("f1_macro"), Some(1.0));
            assert_eq!(preds.len(), 9);
        }
        assert_eq!(det.calls.load(Ordering::SeqCst), 9);

        let rec = Recorder::default();
        let cfg = PipelineConfig::new(EvalMode::Predicted);
        let inputs = EvalInputs {
            detector: Some(&det),
            predictor: &rec,
            inventory: &inv,
            cfg: &cfg,
        };
        let (_, preds) = cross_domain_eval(&inputs, &recs).unwrap();
        assert_eq!(rec.seen.lock().unwrap().len(), 9);
        assert_eq!(det.calls.load(Ordering::SeqCst), 18);
        assert!(preds.iter().all(|p| p.aspects_used == ["price"]));
    }

    #[test]
    fn predicted_mode_requires_detector_with_matching_inventory() {
        let rec = Recorder::default();
        let inv = inventory();
        let cfg = PipelineConfig::new(EvalMode::Predicted);
        let recs = [record("a", "s", &["price"], Polarity::Positive)];
        let inputs = EvalInputs {
            detector: None,
            predictor: &rec,
            inventory: &inv,
            cfg: &cfg,
        };
        assert!(cross_domain_eval(&inputs, &recs).is_err());
        let other = AspectInventory::new(["food"]).unwrap();
        let det = detector(&[0.9, 0.1, 0.1]);
        let inputs = EvalInputs {
            detector: Some(&det),
            predictor: &rec,
            inventory: &other,
            cfg: &cfg,
        };
        assert!(matches!(cross_domain_eval(&inputs, &recs), Err(Error::InventoryMismatch { .. })));
    }

    #[test]
    fn prediction_dump_lines() {
        let rec = Recorder::default();
        let inv = inventory();
        let cfg = PipelineConfig::new(EvalMode::All);
        let inputs = EvalInputs {
            detector: None,
            predictor: &rec,
            inventory: &inv,
            cfg: &cfg,
        };
        let recs = [record("a#0", "fine", &["price"], Polarity::Negative)];
        let (_, preds) = cross_domain_eval(&inputs, &recs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, &preds).unwrap();
        let line = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["mode"], "all");
        assert_eq!(v["gold"], "negative");
        assert_eq!(v["aspects_used"].as_array().unwrap().len(), 3);
        for key in ["positive", "negative", "neutral"] {
            assert!(v["distribution"][key].is_f64());
        }
    }
}
