use std::path::{Path, PathBuf};

use absa_core::corpus::{parse_semeval, parse_sentihood, read_jsonl, AbsaRecord, SchemaYear};
use absa_core::fixtures;
use absa_core::pipeline::{EvalMode, Fallback, DEFAULT_NULL_TARGET};
use absa_core::{EncoderSpec, Hyperparameters};
use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Marks errors caused by the configuration rather than by the run.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Semeval2014,
    Semeval2015,
    Semeval2016,
    Sentihood,
    Jsonl,
}

/// Corpora compiled into the binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    SemevalFixture,
    SentihoodFixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub format: DataFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Builtin>,
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Vec<AbsaRecord>> {
        if let Some(b) = self.builtin {
            return Ok(match b {
                Builtin::SemevalFixture => fixtures::semeval_records()?,
                Builtin::SentihoodFixture => fixtures::sentihood_records()?,
            });
        }
        let path = self.path.as_ref().expect("validated");
        if self.format == DataFormat::Jsonl {
            return Ok(read_jsonl(path)?);
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let records = match self.format {
            DataFormat::Semeval2014 => parse_semeval(&text, SchemaYear::Y2014),
            DataFormat::Semeval2015 => parse_semeval(&text, SchemaYear::Y2015),
            DataFormat::Semeval2016 => parse_semeval(&text, SchemaYear::Y2016),
            DataFormat::Sentihood => parse_sentihood(&text),
            DataFormat::Jsonl => unreachable!(),
        };
        records.with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Detector training data; its test split is also the evaluation set.
    pub detector: DatasetSpec,
    /// Sentiment training data; defaults to the detector data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<DatasetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub fallback: Fallback,
    pub null_target: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            fallback: Fallback::NoneMode,
            null_target: DEFAULT_NULL_TARGET.to_string(),
        }
    }
}

/// A configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub encoder: EncoderSpec,
    pub data: DataConfig,
    pub detector: Hyperparameters,
    pub sentiment: Hyperparameters,
    pub modes: Vec<EvalMode>,
    pub pipeline: PipelineSection,
}

/// The file as written: model sections are partial overrides.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    encoder: Option<EncoderSpec>,
    data: DataConfig,
    #[serde(default)]
    detector: Map<String, Value>,
    #[serde(default)]
    sentiment: Map<String, Value>,
    #[serde(default)]
    modes: Option<Vec<EvalMode>>,
    #[serde(default)]
    pipeline: Option<PipelineSection>,
}

const DEFAULT_SEED: u64 = 42;

fn merge(section: &str, defaults: Hyperparameters, overrides: &Map<String, Value>) -> Result<Hyperparameters> {
    let mut base = serde_json::to_value(defaults)?;
    let obj = base.as_object_mut().expect("struct serializes to an object");
    for (k, v) in overrides {
        if k == "seed" {
            return Err(config_error(format!("{section}.seed: set the top-level seed instead")));
        }
        if !obj.contains_key(k) {
            return Err(config_error(format!("{section}: unknown field `{k}`")));
        }
        obj.insert(k.clone(), v.clone());
    }
    let hp: Hyperparameters =
        serde_json::from_value(base).map_err(|e| config_error(format!("{section}: {e}")))?;
    Ok(hp)
}

fn resolve_path(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Read a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| config_error(format!("config: {e}")))?;
        let seed = raw.seed.unwrap_or(DEFAULT_SEED);
        let mut detector = merge("detector", Hyperparameters::detector_defaults(), &raw.detector)?;
        let mut sentiment = merge("sentiment", Hyperparameters::sentiment_defaults(), &raw.sentiment)?;
        detector.seed = seed;
        sentiment.seed = seed;
        let mut cfg = RunConfig {
            seed,
            out: raw.out.unwrap_or_else(|| PathBuf::from("runs/default")),
            encoder: raw.encoder.unwrap_or_else(EncoderSpec::toy),
            data: raw.data,
            detector,
            sentiment,
            modes: raw.modes.unwrap_or_else(|| EvalMode::ALL_MODES.to_vec()),
            pipeline: raw.pipeline.unwrap_or_default(),
        };
        resolve_path(&mut cfg.out, base);
        for spec in std::iter::once(&mut cfg.data.detector).chain(cfg.data.sentiment.as_mut()) {
            if let Some(p) = spec.path.as_mut() {
                resolve_path(p, base);
            }
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.detector.seed = seed;
        self.sentiment.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in self.datasets() {
            match (&spec.path, spec.builtin) {
                (Some(_), Some(_)) => return Err(config_error(format!("data.{name}: give either path or builtin"))),
                (None, None) => return Err(config_error(format!("data.{name}: path or builtin required"))),
                (Some(p), None) if !p.exists() => {
                    return Err(config_error(format!("data.{name}: {} does not exist", p.display())))
                }
                _ => {}
            }
        }
        for (name, hp) in [("detector", &self.detector), ("sentiment", &self.sentiment)] {
            hp.validate().map_err(|e| config_error(format!("{name}: {e}")))?;
        }
        if self.modes.is_empty() {
            return Err(config_error("modes: at least one mode required"));
        }
        if self.encoder.hidden == 0 {
            return Err(config_error("encoder.hidden must be positive"));
        }
        Ok(())
    }

    pub fn datasets(&self) -> Vec<(&'static str, &DatasetSpec)> {
        let mut v = vec![("detector", &self.data.detector)];
        if let Some(s) = &self.data.sentiment {
            v.push(("sentiment", s));
        }
        v
    }

    /// SHA-256 of the resolved config, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encoder_for(&self, hp: &Hyperparameters) -> EncoderSpec {
        EncoderSpec {
            max_length: hp.max_length,
            ..self.encoder.clone()
        }
    }
}
