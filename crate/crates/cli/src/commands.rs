use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use absa_core::checkpoint::{TrainingProvenance, CODE_VERSION};
use absa_core::corpus::{
    aspect_inventory, detection_view, filter_single_target, read_jsonl, split, write_jsonl, AbsaRecord,
};
use absa_core::encoder::resolve_backbone_dir;
use absa_core::metrics::{MetricReport, Provenance};
use absa_core::pipeline::{cross_domain_eval, AspectScorer, EvalInputs, PipelineConfig};
use absa_core::sentiment::QuerySpec;
use absa_core::trainer::train;
use absa_core::{
    AspectDetector, AspectInventory, AspectModeKind, BackboneKind, EvalMode, Hyperparameters, SentimentPredictor,
};
use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{config_error, RunConfig};

const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Output layout of one run directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn split_file(&self, corpus: &str, split: &str) -> PathBuf {
        self.root.join("data").join(corpus).join(format!("{split}.jsonl"))
    }

    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("data").join("manifest.json")
    }

    pub fn detector_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("detector")
    }

    pub fn sentiment_checkpoint(&self, kind: AspectModeKind) -> PathBuf {
        self.root.join("checkpoints").join(format!("sentiment-{}", kind_name(kind)))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.jsonl"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }

    pub fn predictions(&self, mode: EvalMode) -> PathBuf {
        self.root.join("predictions").join(format!("{mode}.jsonl"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

pub fn kind_name(kind: AspectModeKind) -> &'static str {
    match kind {
        AspectModeKind::Right => "right",
        AspectModeKind::All => "all",
        AspectModeKind::None => "none",
    }
}

/// The query mode whose predictor a mode evaluates with.
pub fn predictor_kind(mode: EvalMode) -> AspectModeKind {
    mode.baseline().unwrap_or(AspectModeKind::Right)
}

#[derive(Debug, Clone, Serialize)]
struct Stamp {
    config_hash: String,
    seed: u64,
    code_version: String,
}

fn stamp(cfg: &RunConfig) -> Stamp {
    Stamp {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        code_version: CODE_VERSION.to_string(),
    }
}

fn report_provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        seed: Some(cfg.seed),
        config_hash: Some(cfg.hash()),
        code_version: Some(CODE_VERSION.to_string()),
        backbone: Some(cfg.encoder.name.as_str().to_string()),
        ..Provenance::default()
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Re-emit JSON lines with a `provenance` object added to each.
fn stamp_lines(raw: &[u8], stamp: &Stamp) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let tag = serde_json::to_value(stamp)?;
    for line in std::str::from_utf8(raw)?.lines().filter(|l| !l.trim().is_empty()) {
        let mut v: Value = serde_json::from_str(line)?;
        if let Value::Object(m) = &mut v {
            m.insert("provenance".into(), tag.clone());
        }
        serde_json::to_writer(&mut out, &v)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = report.to_json();
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_prepared(path: &Path) -> Result<Vec<AbsaRecord>> {
    if !path.exists() {
        bail!("prepared data not found at {}; run `absa prepare` first", path.display());
    }
    Ok(read_jsonl(path)?)
}

fn read_split_set(layout: &Layout, corpus: &str) -> Result<BTreeMap<&'static str, Vec<AbsaRecord>>> {
    SPLITS
        .iter()
        .map(|s| Ok((*s, read_prepared(&layout.split_file(corpus, s))?)))
        .collect()
}

fn labelled(records: &[AbsaRecord]) -> Vec<AbsaRecord> {
    records.iter().filter(|r| r.polarity.is_some()).cloned().collect()
}

fn inventory_of(splits: &BTreeMap<&'static str, Vec<AbsaRecord>>) -> AspectInventory {
    let all: Vec<AbsaRecord> = splits.values().flatten().cloned().collect();
    aspect_inventory(&all)
}

#[derive(Serialize)]
struct SplitIds {
    train: Vec<String>,
    dev: Vec<String>,
    test: Vec<String>,
}

#[derive(Serialize)]
struct SplitManifest {
    #[serde(flatten)]
    stamp: Stamp,
    corpora: BTreeMap<String, SplitIds>,
}

pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let mut corpora = BTreeMap::new();
    let sentiment_spec = cfg.data.sentiment.as_ref().unwrap_or(&cfg.data.detector);
    for (name, spec) in [("detector", &cfg.data.detector), ("sentiment", sentiment_spec)] {
        let records = filter_single_target(&spec.load()?);
        let bundle = split(&records, cfg.seed).with_context(|| format!("splitting {name} data"))?;
        for (s, recs) in [("train", &bundle.train), ("dev", &bundle.dev), ("test", &bundle.test)] {
            let path = layout.split_file(name, s);
            create_parent(&path)?;
            write_jsonl(&path, recs)?;
        }
        let ids = |v: &[AbsaRecord]| v.iter().map(|r| r.id.clone()).collect();
        corpora.insert(
            name.to_string(),
            SplitIds {
                train: ids(&bundle.train),
                dev: ids(&bundle.dev),
                test: ids(&bundle.test),
            },
        );
        eprintln!(
            "{name}: {} records -> train {}, dev {}, test {}",
            records.len(),
            bundle.train.len(),
            bundle.dev.len(),
            bundle.test.len()
        );
    }
    let manifest = SplitManifest {
        stamp: stamp(cfg),
        corpora,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write_file(&layout.split_manifest(), text.as_bytes())?;
    let mut resolved = serde_json::to_value(cfg)?;
    resolved["config_hash"] = Value::String(cfg.hash());
    write_file(&cfg.out.join("config.json"), (serde_json::to_string_pretty(&resolved)? + "\n").as_bytes())
}

fn training_provenance(cfg: &RunConfig, hp: &Hyperparameters, best_epoch: Option<usize>, dev_f1: Option<f64>) -> TrainingProvenance {
    let mut p = TrainingProvenance::new(cfg.seed);
    p.config_hash = Some(cfg.hash());
    p.epoch = best_epoch;
    p.dev_f1_macro = dev_f1;
    p.extra
        .insert("hyperparameters".into(), serde_json::to_string(hp).expect("serializes"));
    p
}

fn backbone_dir(kind: BackboneKind) -> Result<Option<PathBuf>> {
    if kind == BackboneKind::Toy {
        return Ok(None);
    }
    Ok(Some(resolve_backbone_dir(kind)?))
}

pub fn train_detector(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let splits = read_split_set(&layout, "detector")?;
    let inventory = inventory_of(&splits);
    let hp = &cfg.detector;
    let spec = cfg.encoder_for(hp);
    let mut det = match backbone_dir(spec.name)? {
        None => AspectDetector::toy(&spec, inventory, hp.seed)?,
        Some(dir) => AspectDetector::pretrained(&spec, &dir, inventory, hp.seed)?,
    };
    det.set_threshold(hp.threshold)?;
    det.set_alpha(hp.alpha)?;
    let train_ex = det.examples(&detection_view(&splits["train"]))?;
    let dev_ex = det.examples(&detection_view(&splits["dev"]))?;

    let mut log = Vec::new();
    let outcome = train(&mut det, &train_ex, &dev_ex, hp, Some(&mut log))?;
    write_file(&layout.log("detector"), &stamp_lines(&log, &stamp(cfg))?)?;

    let dev_f1 = outcome.best_dev.as_ref().and_then(|r| r.get("f1_macro"));
    det.save(&layout.detector_checkpoint(), training_provenance(cfg, hp, outcome.best_epoch, dev_f1))?;

    let mut report = det.evaluate(&splits["test"])?;
    report.provenance = report_provenance(cfg);
    report.provenance.epoch = outcome.best_epoch;
    report.provenance.mode = Some("detector".into());
    report.provenance.records = Some(detection_view(&splits["test"]).len());
    write_report(&layout.report("detector"), &report)?;
    eprintln!(
        "detector: {} epochs, test f1_macro {:.4}",
        outcome.epochs.len(),
        report.get("f1_macro").unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Query modes that need a trained predictor for the configured modes.
pub fn needed_kinds(modes: &[EvalMode]) -> Vec<AspectModeKind> {
    let mut kinds: Vec<AspectModeKind> = Vec::new();
    for m in modes {
        let k = predictor_kind(*m);
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    kinds
}

pub fn train_sentiment(cfg: &RunConfig, kind: AspectModeKind) -> Result<()> {
    let layout = Layout::new(&cfg.out);
    let splits = read_split_set(&layout, "sentiment")?;
    let hp = &cfg.sentiment;
    let spec = cfg.encoder_for(hp);
    let query = QuerySpec {
        mode: kind,
        inventory: inventory_of(&splits),
        null_target: cfg.pipeline.null_target.clone(),
    };
    let mut model = match backbone_dir(spec.name)? {
        None => SentimentPredictor::toy(&spec, kind, hp.seed)?,
        Some(dir) => SentimentPredictor::pretrained(&spec, &dir, kind, hp.seed)?,
    };
    let train_ex = model.examples(&labelled(&splits["train"]), &query)?;
    let dev_ex = model.examples(&labelled(&splits["dev"]), &query)?;

    let mut log = Vec::new();
    let outcome = train(&mut model, &train_ex, &dev_ex, hp, Some(&mut log))?;
    let name = format!("sentiment-{}", kind_name(kind));
    write_file(&layout.log(&name), &stamp_lines(&log, &stamp(cfg))?)?;
    let dev_f1 = outcome.best_dev.as_ref().and_then(|r| r.get("f1_macro"));
    model.save(&layout.sentiment_checkpoint(kind), training_provenance(cfg, hp, outcome.best_epoch, dev_f1))?;
    eprintln!("{name}: {} epochs, best dev f1_macro {:?}", outcome.epochs.len(), dev_f1);
    Ok(())
}

fn require_checkpoint(dir: &Path, hint: &str) -> Result<()> {
    if !dir.join("manifest.json").exists() {
        bail!("checkpoint not found at {}; run `absa {hint}` first", dir.display());
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, mode: EvalMode) -> Result<MetricReport> {
    let layout = Layout::new(&cfg.out);
    let splits = read_split_set(&layout, "detector")?;
    let inventory = inventory_of(&splits);
    let records = labelled(&splits["test"]);

    let kind = predictor_kind(mode);
    let ckpt = layout.sentiment_checkpoint(kind);
    require_checkpoint(&ckpt, &format!("train-sentiment --mode {}", kind_name(kind)))?;
    let (predictor, _) = SentimentPredictor::load(&ckpt)?;
    if predictor.query_mode() != kind {
        return Err(config_error(format!(
            "mode {mode} needs a {}-mode predictor but {} was trained with {}",
            kind_name(kind),
            ckpt.display(),
            kind_name(predictor.query_mode())
        )));
    }
    let detector = if mode == EvalMode::Predicted {
        let dir = layout.detector_checkpoint();
        require_checkpoint(&dir, "train-detector")?;
        Some(AspectDetector::load(&dir)?.0)
    } else {
        None
    };

    let pcfg = PipelineConfig {
        mode,
        fallback: cfg.pipeline.fallback,
        null_target: cfg.pipeline.null_target.clone(),
    };
    let inputs = EvalInputs {
        detector: detector.as_ref().map(|d| d as &dyn AspectScorer),
        predictor: &predictor,
        inventory: &inventory,
        cfg: &pcfg,
    };
    let (mut report, predictions) = cross_domain_eval(&inputs, &records)?;
    report.provenance = Provenance {
        mode: Some(mode.to_string()),
        records: Some(records.len()),
        ..report_provenance(cfg)
    };
    write_report(&layout.report(mode.as_str()), &report)?;

    let mut raw = Vec::new();
    for p in &predictions {
        serde_json::to_writer(&mut raw, p)?;
        raw.push(b'\n');
    }
    write_file(&layout.predictions(mode), &stamp_lines(&raw, &stamp(cfg))?)?;
    Ok(report)
}
