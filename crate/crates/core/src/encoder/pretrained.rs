use std::path::{Path, PathBuf};

use safetensors::SafeTensors;
use serde::Deserialize;

use super::layers::transposed;
use super::tokenizer::{PretrainedTokenizer, TextTokenizer};
use super::weights::to_tensor;
use super::{Backbone, BackboneKind, EncoderSpec, Init, TransformerConfig};
use crate::autograd::ParamStore;
use crate::error::{Error, Result};

/// Directory holding one sub-directory per pretrained backbone.
pub const BACKBONE_CACHE_ENV: &str = "ABSA_BACKBONE_CACHE";

/// Locate a backbone under `$ABSA_BACKBONE_CACHE`.
pub fn resolve_backbone_dir(kind: BackboneKind) -> Result<PathBuf> {
    let names: &[&str] = match kind {
        BackboneKind::Toy => return Err(Error::InvalidInput("the toy backbone has no weights".into())),
        BackboneKind::BertBase => &["bert-base-uncased", "bert-base", "bert-base-cased"],
        BackboneKind::RobertaBase => &["roberta-base"],
        BackboneKind::DebertaBase => &["deberta-base"],
    };
    let root = std::env::var_os(BACKBONE_CACHE_ENV).ok_or_else(|| {
        Error::InvalidInput(format!("set {BACKBONE_CACHE_ENV} to the directory holding {}", names[0]))
    })?;
    let root = PathBuf::from(root);
    names
        .iter()
        .map(|n| root.join(n))
        .find(|p| p.join("config.json").exists())
        .ok_or_else(|| Error::InvalidInput(format!("no {} model under {}", names[0], root.display())))
}

#[derive(Debug, Deserialize)]
struct HfConfig {
    #[serde(default)]
    model_type: Option<String>,
    vocab_size: usize,
    hidden_size: usize,
    num_hidden_layers: usize,
    num_attention_heads: usize,
    intermediate_size: usize,
    max_position_embeddings: usize,
    #[serde(default)]
    type_vocab_size: usize,
    #[serde(default = "default_eps")]
    layer_norm_eps: f64,
    #[serde(default)]
    pad_token_id: Option<usize>,
}

fn default_eps() -> f64 {
    1e-12
}

pub(super) fn load(spec: &EncoderSpec, dir: &Path, store: &mut ParamStore) -> Result<Backbone> {
    match spec.name {
        BackboneKind::Toy => {
            return Err(Error::InvalidInput("the toy backbone is not loaded from disk".into()))
        }
        BackboneKind::DebertaBase => {
            return Err(Error::UnsupportedBackbone(
                "deberta-base (disentangled attention is not implemented)".into(),
            ))
        }
        BackboneKind::BertBase | BackboneKind::RobertaBase => {}
    }
    let cfg_path = dir.join("config.json");
    let raw = std::fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let hf: HfConfig = serde_json::from_str(&raw)?;
    let roberta = spec.name == BackboneKind::RobertaBase
        || hf.model_type.as_deref() == Some("roberta");
    if hf.hidden_size != spec.hidden {
        return Err(Error::InvalidInput(format!(
            "encoder spec width {} but {} has hidden_size {}",
            spec.hidden,
            dir.display(),
            hf.hidden_size
        )));
    }
    let config = TransformerConfig {
        vocab_size: hf.vocab_size,
        hidden: hf.hidden_size,
        layers: hf.num_hidden_layers,
        heads: hf.num_attention_heads,
        intermediate: hf.intermediate_size,
        max_positions: hf.max_position_embeddings,
        type_vocab_size: hf.type_vocab_size,
        position_offset: if roberta { hf.pad_token_id.unwrap_or(1) + 1 } else { 0 },
        layer_norm_eps: hf.layer_norm_eps,
        roberta_layout: roberta,
    };
    let tokenizer = PretrainedTokenizer::from_dir(dir, roberta)?;

    let first = store.len();
    let backbone = Backbone::build(
        spec.clone(),
        config,
        TextTokenizer::Pretrained(tokenizer),
        store,
        Init::Zeros,
    )?;

    let weights_path = dir.join("model.safetensors");
    let bytes = std::fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let prefix = ["", "bert.", "roberta."]
        .into_iter()
        .find(|p| st.tensor(&format!("{p}embeddings.word_embeddings.weight")).is_ok())
        .ok_or_else(|| Error::Checkpoint("no word embeddings in model.safetensors".into()))?;

    let ids: Vec<_> = store
        .iter()
        .skip(first)
        .map(|(id, p)| (id, p.name.clone()))
        .collect();
    for (id, name) in ids {
        let (candidates, transpose) = hf_names(&name)
            .ok_or_else(|| Error::Checkpoint(format!("no pretrained mapping for `{name}`")))?;
        let view = candidates
            .iter()
            .find_map(|c| st.tensor(&format!("{prefix}{c}")).ok())
            .ok_or_else(|| Error::Checkpoint(format!("missing pretrained tensor for `{name}` ({})", candidates[0])))?;
        let mut t = to_tensor(&view)?;
        if transpose {
            t = transposed(&t);
        }
        let expected = store.get(id).dim();
        if t.dim() != expected {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, expected {expected:?}",
                t.dim()
            )));
        }
        *store.get_mut(id) = t;
    }
    Ok(backbone)
}

/// Hugging Face tensor names for one of our parameter names, and whether the
/// stored matrix is output-major.
fn hf_names(name: &str) -> Option<(Vec<String>, bool)> {
    fn norm(base: &str, ours: &str) -> Option<(Vec<String>, bool)> {
        let (new, old) = match ours {
            "gamma" => ("weight", "gamma"),
            "beta" => ("bias", "beta"),
            _ => return None,
        };
        Some((vec![format!("{base}.{new}"), format!("{base}.{old}")], false))
    }

    let rest = name.strip_prefix("encoder.")?;
    if let Some(e) = rest.strip_prefix("embed.") {
        return match e {
            "word" => Some((vec!["embeddings.word_embeddings.weight".into()], false)),
            "position" => Some((vec!["embeddings.position_embeddings.weight".into()], false)),
            "token_type" => Some((vec!["embeddings.token_type_embeddings.weight".into()], false)),
            _ => norm("embeddings.LayerNorm", e.strip_prefix("norm.")?),
        };
    }
    let rest = rest.strip_prefix("layer")?;
    let (index, tail) = rest.split_once('.')?;
    let base = format!("encoder.layer.{index}");
    let (module, leaf) = tail.rsplit_once('.')?;
    let hf_module = match module {
        "attn.query" => "attention.self.query",
        "attn.key" => "attention.self.key",
        "attn.value" => "attention.self.value",
        "attn.out" => "attention.output.dense",
        "ffn.in" => "intermediate.dense",
        "ffn.out" => "output.dense",
        "attn.norm" => return norm(&format!("{base}.attention.output.LayerNorm"), leaf),
        "ffn.norm" => return norm(&format!("{base}.output.LayerNorm"), leaf),
        _ => return None,
    };
    Some((vec![format!("{base}.{hf_module}.{leaf}")], leaf == "weight"))
}
