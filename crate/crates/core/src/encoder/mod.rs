//! Sentence-pair encoding: tokenization into a framed id sequence and a
//! transformer that maps it to one hidden vector per token.
//!
//! Two backbones share the same post-norm transformer code: a small
//! randomly-initialised toy model with hashed word embeddings, and an adapter
//! that loads BERT-family weights from a local model directory.

mod layers;
mod pretrained;
mod tokenizer;
pub mod weights;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Dropout, Graph, NodeId, ParamGroup, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::templating::PairedText;

pub use layers::{Block, Embeddings, LayerNorm, Linear};
pub use pretrained::{resolve_backbone_dir, BACKBONE_CACHE_ENV};
pub use tokenizer::{PretrainedTokenizer, TextTokenizer, ToyTokenizer};

/// Default sequence budget.
pub const DEFAULT_MAX_LENGTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "toy")]
    Toy,
    #[serde(rename = "bert-base")]
    BertBase,
    #[serde(rename = "deberta-base")]
    DebertaBase,
    #[serde(rename = "roberta-base")]
    RobertaBase,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Toy => "toy",
            BackboneKind::BertBase => "bert-base",
            BackboneKind::DebertaBase => "deberta-base",
            BackboneKind::RobertaBase => "roberta-base",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(BackboneKind::Toy),
            "bert-base" => Ok(BackboneKind::BertBase),
            "deberta-base" => Ok(BackboneKind::DebertaBase),
            "roberta-base" => Ok(BackboneKind::RobertaBase),
            other => Err(Error::UnsupportedBackbone(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub name: BackboneKind,
    /// Hidden width D.
    pub hidden: usize,
    #[serde(default = "default_max_length")]
    pub max_length: usize,
}

fn default_max_length() -> usize {
    DEFAULT_MAX_LENGTH
}

impl EncoderSpec {
    pub fn toy() -> Self {
        EncoderSpec {
            name: BackboneKind::Toy,
            hidden: 32,
            max_length: DEFAULT_MAX_LENGTH,
        }
    }
}

/// Architecture hyperparameters of a post-norm transformer encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    /// Zero when the model has no token-type embeddings.
    pub type_vocab_size: usize,
    /// First position id (RoBERTa starts after the padding index).
    pub position_offset: usize,
    pub layer_norm_eps: f64,
    /// Pair framing `<s> a </s></s> b </s>` instead of `[CLS] a [SEP] b [SEP]`.
    #[serde(default)]
    pub roberta_layout: bool,
}

impl TransformerConfig {
    /// 8192 hash buckets, D = 32, two blocks of two heads.
    pub fn toy(max_length: usize) -> Self {
        TransformerConfig {
            vocab_size: 8192,
            hidden: 32,
            layers: 2,
            heads: 2,
            intermediate: 64,
            max_positions: max_length,
            type_vocab_size: 0,
            position_offset: 0,
            layer_norm_eps: 1e-5,
            roberta_layout: false,
        }
    }
}

/// Token ids of a framed sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    /// Index of the first token of segment b.
    pub segment_boundary: usize,
    /// Sequence-start token and separators.
    pub special_positions: Vec<usize>,
    /// First sub-token of each aspect name (detector inputs only).
    pub aspect_positions: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// One hidden vector per token (L×D).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    matrix: Tensor,
}

impl HiddenStates {
    pub fn new(matrix: Tensor) -> Self {
        HiddenStates { matrix }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Frame a pair as `start a sep b sep`, truncating segment b from the right.
/// Segment a is never truncated.
pub fn tokenize_pair(tok: &TextTokenizer, p: &PairedText, max_length: usize) -> Result<TokenSequence> {
    if max_length < 8 {
        return Err(Error::InvalidInput(format!("max_length {max_length} is below 8")));
    }
    let mid = tok.middle_separators();
    let specials = 2 + mid;

    let mut a_ids = Vec::new();
    let mut aspect_offsets = Vec::new();
    match &p.aspect_names {
        Some(names) => {
            for name in names {
                let ids = tok.encode(name)?;
                if ids.is_empty() {
                    return Err(Error::InvalidInput(format!("aspect `{name}` tokenizes to nothing")));
                }
                aspect_offsets.push(a_ids.len());
                a_ids.extend(ids);
            }
        }
        None => a_ids = tok.encode(&p.segment_a)?,
    }
    let budget = max_length - specials;
    if a_ids.len() > budget {
        return Err(Error::SegmentTooLong {
            needed: a_ids.len(),
            budget,
        });
    }
    let mut b_ids = tok.encode(&p.segment_b)?;
    b_ids.truncate(budget - a_ids.len());

    let mut token_ids = Vec::with_capacity(specials + a_ids.len() + b_ids.len());
    let mut special_positions = vec![0];
    token_ids.push(tok.cls());
    token_ids.extend(&a_ids);
    for _ in 0..mid {
        special_positions.push(token_ids.len());
        token_ids.push(tok.sep());
    }
    let segment_boundary = token_ids.len();
    token_ids.extend(&b_ids);
    special_positions.push(token_ids.len());
    token_ids.push(tok.sep());

    let second = usize::from(tok.typed_segments());
    let segment_ids = (0..token_ids.len())
        .map(|i| if i < segment_boundary { 0 } else { second })
        .collect();
    Ok(TokenSequence {
        token_ids,
        segment_ids,
        segment_boundary,
        special_positions,
        aspect_positions: aspect_offsets.into_iter().map(|o| o + 1).collect(),
    })
}

/// A transformer encoder bound to parameters registered in a [`ParamStore`].
#[derive(Debug)]
pub struct Backbone {
    spec: EncoderSpec,
    config: TransformerConfig,
    tokenizer: TextTokenizer,
    embeddings: Embeddings,
    blocks: Vec<Block>,
}

/// How freshly registered parameters are filled.
pub enum Init<'r> {
    /// N(0, 0.02) weights, zero biases, unit norm gains.
    Random(&'r mut dyn rand::RngCore),
    /// All zeros; used before loading stored values.
    Zeros,
}

impl Backbone {
    /// Register the parameters of `config` in `store` and bind them.
    pub fn build(
        spec: EncoderSpec,
        config: TransformerConfig,
        tokenizer: TextTokenizer,
        store: &mut ParamStore,
        mut init: Init<'_>,
    ) -> Result<Self> {
        if spec.hidden == 0 || spec.hidden != config.hidden {
            return Err(Error::InvalidInput(format!(
                "encoder width {} does not match architecture width {}",
                spec.hidden, config.hidden
            )));
        }
        if !config.hidden.is_multiple_of(config.heads) {
            return Err(Error::InvalidInput("hidden width not divisible by heads".into()));
        }
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut make = |name: &str, shape: (usize, usize)| -> Tensor {
            match &mut init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Random(rng) => {
                    if name.ends_with(".gamma") {
                        Tensor::ones(shape)
                    } else if name.ends_with(".beta") || name.ends_with(".bias") {
                        Tensor::zeros(shape)
                    } else {
                        Tensor::from_shape_fn(shape, |_| normal.sample(rng))
                    }
                }
            }
        };
        let mut add = |name: String, shape: (usize, usize)| {
            let value = make(&name, shape);
            store.add(name, value, ParamGroup::Encoder)
        };
        let embeddings = Embeddings::register(&config, &mut add);
        let blocks = (0..config.layers)
            .map(|i| Block::register(&config, i, &mut add))
            .collect();
        Ok(Backbone {
            spec,
            config,
            tokenizer,
            embeddings,
            blocks,
        })
    }

    /// A randomly initialised toy backbone.
    pub fn toy(spec: &EncoderSpec, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<Self> {
        let config = Self::toy_config(spec)?;
        let tok = TextTokenizer::Toy(ToyTokenizer::new(config.vocab_size));
        Self::build(spec.clone(), config, tok, store, Init::Random(rng))
    }

    pub(crate) fn toy_config(spec: &EncoderSpec) -> Result<TransformerConfig> {
        if spec.name != BackboneKind::Toy {
            return Err(Error::InvalidInput(format!("{} is not the toy backbone", spec.name)));
        }
        let mut config = TransformerConfig::toy(spec.max_length);
        config.hidden = spec.hidden;
        config.intermediate = 2 * spec.hidden;
        Ok(config)
    }

    /// Load pretrained weights from a model directory (`config.json`,
    /// `model.safetensors`, `tokenizer.json` or `vocab.txt`).
    pub fn pretrained(spec: &EncoderSpec, dir: &std::path::Path, store: &mut ParamStore) -> Result<Self> {
        pretrained::load(spec, dir, store)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &TextTokenizer {
        &self.tokenizer
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn tokenize_pair(&self, p: &PairedText) -> Result<TokenSequence> {
        tokenize_pair(&self.tokenizer, p, self.spec.max_length)
    }

    /// Add the encoder computation to `g` and return the L×D hidden node.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        t: &TokenSequence,
        mut dropout: Option<&mut Dropout<R>>,
    ) -> Result<NodeId> {
        if let Some(&id) = t.token_ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        let positions = self.config.max_positions - self.config.position_offset;
        if t.len() > positions {
            return Err(Error::InvalidInput(format!(
                "sequence of {} tokens exceeds {positions} positions",
                t.len()
            )));
        }
        let mut x = self.embeddings.forward(g, &self.config, t)?;
        x = g.dropout(x, dropout.as_deref_mut());
        for block in &self.blocks {
            x = block.forward(g, x, self.config.heads, dropout.as_deref_mut());
        }
        Ok(x)
    }

    /// Evaluation-mode encoding (no dropout).
    pub fn encode(&self, store: &ParamStore, t: &TokenSequence) -> Result<HiddenStates> {
        let mut g = Graph::new(store);
        let h = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, t, None)?;
        Ok(HiddenStates::new(g.value(h).to_owned()))
    }

    /// Names of the pretrained source files to copy next to a checkpoint.
    pub fn tokenizer_source(&self) -> Option<&std::path::Path> {
        match &self.tokenizer {
            TextTokenizer::Toy(_) => None,
            TextTokenizer::Pretrained(t) => Some(t.source()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AspectInventory;
    use crate::templating::{build_detector_input, build_sentiment_input};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Backbone, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Backbone::toy(&EncoderSpec::toy(), &mut store, &mut rng).unwrap();
        (b, store)
    }

    fn six() -> AspectInventory {
        AspectInventory::new(["atmosphere", "drinks", "food", "location", "restaurant", "service"]).unwrap()
    }

    #[test]
    fn detector_input_aspect_positions() {
        let (b, _) = toy();
        let p = build_detector_input(&six(), "After all that, they complained to me about the small tip.").unwrap();
        let t = b.tokenize_pair(&p).unwrap();
        assert_eq!(t.aspect_positions, vec![1, 2, 3, 4, 5, 6]);
        assert!(t.aspect_positions.windows(2).all(|w| w[0] < w[1]));
        assert!(t.aspect_positions.iter().all(|&p| p < t.special_positions[1]));
        assert_eq!(t.segment_boundary, 8);
        assert_eq!(t.special_positions, vec![0, 7, t.len() - 1]);
        assert_eq!(t.token_ids[0], ToyTokenizer::CLS);
        assert_eq!(t.token_ids[7], ToyTokenizer::SEP);
    }

    #[test]
    fn long_sentence_truncated_to_budget() {
        let (b, _) = toy();
        let sentence = vec!["word"; 500].join(" ");
        let t = b.tokenize_pair(&build_sentiment_input("what about it?", &sentence).unwrap()).unwrap();
        assert_eq!(t.len(), 128);
        assert_eq!(*t.token_ids.last().unwrap(), ToyTokenizer::SEP);
    }

    #[test]
    fn oversized_segment_a_is_an_error() {
        let (b, _) = toy();
        let names: Vec<String> = (0..130).map(|i| format!("aspect{i}")).collect();
        let inv = AspectInventory::new(names).unwrap();
        let err = b.tokenize_pair(&build_detector_input(&inv, "x").unwrap()).unwrap_err();
        assert!(matches!(err, Error::SegmentTooLong { needed: 130, budget: 125 }));
    }

    #[test]
    fn max_length_floor() {
        let (b, _) = toy();
        let p = build_sentiment_input("q", "s").unwrap();
        assert!(tokenize_pair(b.tokenizer(), &p, 7).is_err());
    }

    #[test]
    fn encode_shape_and_determinism() {
        let (b, store) = toy();
        let p = build_sentiment_input("what do you think of food of it?", "the soup was cold").unwrap();
        let t = b.tokenize_pair(&p).unwrap();
        let h1 = b.encode(&store, &t).unwrap();
        let h2 = b.encode(&store, &t).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.rows(), t.len());
        assert_eq!(h1.width(), 32);
        assert!(h1.matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn seventeen_tokens_give_17_by_32() {
        let (b, store) = toy();
        let ids: Vec<usize> = (10..27).collect();
        let t = TokenSequence {
            segment_ids: vec![0; ids.len()],
            token_ids: ids,
            segment_boundary: 5,
            special_positions: vec![0],
            aspect_positions: vec![],
        };
        let h = b.encode(&store, &t).unwrap();
        assert_eq!((h.rows(), h.width()), (17, 32));
    }

    #[test]
    fn perturbing_a_token_changes_its_row() {
        let (b, store) = toy();
        let p = build_sentiment_input("what do you think of food of it?", "the soup was cold").unwrap();
        let t = b.tokenize_pair(&p).unwrap();
        let mut u = t.clone();
        let k = t.segment_boundary + 1;
        u.token_ids[k] = (u.token_ids[k] + 1) % 8192;
        let h = b.encode(&store, &t).unwrap();
        let hu = b.encode(&store, &u).unwrap();
        assert_ne!(h.matrix().row(k), hu.matrix().row(k));
    }

    #[test]
    fn out_of_range_token() {
        let (b, store) = toy();
        let t = TokenSequence {
            token_ids: vec![1, 9000, 2],
            segment_ids: vec![0; 3],
            segment_boundary: 2,
            special_positions: vec![0, 2],
            aspect_positions: vec![],
        };
        assert!(matches!(
            b.encode(&store, &t),
            Err(Error::TokenOutOfRange { id: 9000, vocab: 8192 })
        ));
    }
}
