//! Checkpoint directories: `manifest.json` + `params.safetensors`, plus a
//! copy of the tokenizer file for pretrained backbones.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGroup, ParamStore};
use crate::corpus::AspectInventory;
use crate::encoder::weights::{load_params, save_params};
use crate::encoder::{
    Backbone, BackboneKind, EncoderSpec, Init, PretrainedTokenizer, TextTokenizer, ToyTokenizer,
    TransformerConfig,
};
use crate::error::{Error, Result};
use crate::templating::AspectModeKind;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.safetensors";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: [usize; 2],
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub code_version: String,
    /// Epoch the stored parameters come from; `None` for an untrained model.
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub dev_f1_macro: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl TrainingProvenance {
    pub fn new(seed: u64) -> Self {
        TrainingProvenance {
            seed,
            code_version: CODE_VERSION.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadInfo {
    Detector {
        inventory: AspectInventory,
        threshold: f64,
        alpha: f64,
    },
    Sentiment {
        classes: Vec<String>,
        /// Query mode the predictor was trained with.
        query_mode: AspectModeKind,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub encoder: EncoderSpec,
    pub architecture: TransformerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer_file: Option<String>,
    pub head: HeadInfo,
    pub provenance: TrainingProvenance,
    pub params: Vec<ParamInfo>,
}

pub fn param_infos(store: &ParamStore) -> Vec<ParamInfo> {
    store
        .iter()
        .map(|(_, p)| ParamInfo {
            name: p.name.clone(),
            shape: [p.value.nrows(), p.value.ncols()],
            group: p.group,
        })
        .collect()
}

/// Everything needed to write a checkpoint except the head-specific info.
pub struct CheckpointParts<'a> {
    pub backbone: &'a Backbone,
    pub store: &'a ParamStore,
    pub head: HeadInfo,
    pub provenance: TrainingProvenance,
}

pub fn write(dir: &Path, parts: CheckpointParts<'_>) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tokenizer_file = match parts.backbone.tokenizer_source() {
        None => None,
        Some(src) => {
            let name = src
                .file_name()
                .ok_or_else(|| Error::Checkpoint(format!("bad tokenizer path {}", src.display())))?;
            let dst = dir.join(name);
            if dst != src {
                std::fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
            }
            Some(name.to_string_lossy().into_owned())
        }
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        encoder: parts.backbone.spec().clone(),
        architecture: parts.backbone.config().clone(),
        tokenizer_file,
        head: parts.head,
        provenance: parts.provenance,
        params: param_infos(parts.store),
    };
    save_params(&dir.join(PARAMS_FILE), parts.store)?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            path.display(),
            m.format_version
        )));
    }
    Ok(m)
}

/// Register an all-zero backbone matching the manifest in `store`.
pub fn rebuild_backbone(dir: &Path, m: &Manifest, store: &mut ParamStore) -> Result<Backbone> {
    let tokenizer = match m.encoder.name {
        BackboneKind::Toy => TextTokenizer::Toy(ToyTokenizer::new(m.architecture.vocab_size)),
        _ => TextTokenizer::Pretrained(PretrainedTokenizer::from_dir(dir, m.architecture.roberta_layout)?),
    };
    Backbone::build(m.encoder.clone(), m.architecture.clone(), tokenizer, store, Init::Zeros)
}

/// Fill `store` from the checkpoint after checking it has the manifest's
/// parameter list.
pub fn load_values(dir: &Path, m: &Manifest, store: &mut ParamStore) -> Result<()> {
    let have = param_infos(store);
    if have != m.params {
        return Err(Error::Checkpoint(format!(
            "{}: parameter list does not match the model built from the manifest",
            dir.display()
        )));
    }
    load_params(&dir.join(PARAMS_FILE), store)
}

pub fn params_path(dir: &Path) -> PathBuf {
    dir.join(PARAMS_FILE)
}
