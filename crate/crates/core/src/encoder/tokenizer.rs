use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Lowercased word/punctuation tokens hashed into a fixed bucket range.
///
/// Ids `0..4` are reserved for `[PAD] [CLS] [SEP] [UNK]`; words land in
/// `4..vocab_size` through 64-bit FNV-1a.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyTokenizer {
    vocab_size: usize,
}

impl ToyTokenizer {
    pub const PAD: usize = 0;
    pub const CLS: usize = 1;
    pub const SEP: usize = 2;
    pub const UNK: usize = 3;
    const RESERVED: usize = 4;

    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > Self::RESERVED, "vocabulary too small");
        ToyTokenizer { vocab_size }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Runs of alphanumerics form words; every other non-space character is
    /// its own token.
    pub fn words(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                if !ch.is_whitespace() {
                    out.push(ch.to_string());
                }
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    pub fn word_id(&self, word: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Self::RESERVED + (h % (self.vocab_size - Self::RESERVED) as u64) as usize
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        Self::words(text).iter().map(|w| self.word_id(w)).collect()
    }
}

/// Sub-word tokenizer of a pretrained backbone.
pub struct PretrainedTokenizer {
    inner: tokenizers::Tokenizer,
    cls: usize,
    sep: usize,
    double_sep: bool,
    source: PathBuf,
}

impl std::fmt::Debug for PretrainedTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PretrainedTokenizer")
            .field("source", &self.source)
            .field("cls", &self.cls)
            .field("sep", &self.sep)
            .finish()
    }
}

fn tok_err(e: impl std::fmt::Display) -> Error {
    Error::Tokenizer(e.to_string())
}

impl PretrainedTokenizer {
    /// Load `tokenizer.json` from `dir`, falling back to a WordPiece
    /// `vocab.txt`. `roberta_layout` selects `<s> a </s></s> b </s>` framing.
    pub fn from_dir(dir: &Path, roberta_layout: bool) -> Result<Self> {
        let json = dir.join("tokenizer.json");
        let vocab = dir.join("vocab.txt");
        let (inner, source) = if json.exists() {
            (tokenizers::Tokenizer::from_file(&json).map_err(tok_err)?, json)
        } else if vocab.exists() {
            (wordpiece_from_vocab(&vocab)?, vocab)
        } else {
            return Err(Error::Tokenizer(format!(
                "no tokenizer.json or vocab.txt in {}",
                dir.display()
            )));
        };
        let (cls_tok, sep_tok) = if roberta_layout {
            ("<s>", "</s>")
        } else {
            ("[CLS]", "[SEP]")
        };
        let id = |t: &str| {
            inner
                .token_to_id(t)
                .map(|i| i as usize)
                .ok_or_else(|| Error::Tokenizer(format!("special token {t} missing from vocabulary")))
        };
        Ok(PretrainedTokenizer {
            cls: id(cls_tok)?,
            sep: id(sep_tok)?,
            inner,
            double_sep: roberta_layout,
            source,
        })
    }

    pub fn source(&self) -> &Path {
        &self.source
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let enc = self.inner.encode(text, false).map_err(tok_err)?;
        Ok(enc.get_ids().iter().map(|&i| i as usize).collect())
    }

    pub fn vocab_size(&self) -> usize {
        self.inner.get_vocab_size(true)
    }
}

fn wordpiece_from_vocab(path: &Path) -> Result<tokenizers::Tokenizer> {
    use tokenizers::models::wordpiece::WordPiece;
    use tokenizers::normalizers::bert::BertNormalizer;
    use tokenizers::pre_tokenizers::bert::BertPreTokenizer;

    let file = path
        .to_str()
        .ok_or_else(|| Error::Tokenizer("non-utf8 vocabulary path".into()))?;
    let model = WordPiece::from_file(file)
        .unk_token("[UNK]".into())
        .build()
        .map_err(tok_err)?;
    let mut tok = tokenizers::Tokenizer::new(model);
    tok.with_normalizer(Some(BertNormalizer::default()));
    tok.with_pre_tokenizer(Some(BertPreTokenizer));
    Ok(tok)
}

/// Either tokenizer, with the framing rules for a sentence pair.
#[derive(Debug)]
pub enum TextTokenizer {
    Toy(ToyTokenizer),
    Pretrained(PretrainedTokenizer),
}

impl TextTokenizer {
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        match self {
            TextTokenizer::Toy(t) => Ok(t.encode(text)),
            TextTokenizer::Pretrained(t) => t.encode(text),
        }
    }

    pub fn cls(&self) -> usize {
        match self {
            TextTokenizer::Toy(_) => ToyTokenizer::CLS,
            TextTokenizer::Pretrained(t) => t.cls,
        }
    }

    pub fn sep(&self) -> usize {
        match self {
            TextTokenizer::Toy(_) => ToyTokenizer::SEP,
            TextTokenizer::Pretrained(t) => t.sep,
        }
    }

    /// Separators between the two segments.
    pub fn middle_separators(&self) -> usize {
        match self {
            TextTokenizer::Pretrained(t) if t.double_sep => 2,
            _ => 1,
        }
    }

    /// Whether segment b gets token type 1.
    pub fn typed_segments(&self) -> bool {
        !matches!(self, TextTokenizer::Pretrained(t) if t.double_sep)
    }
}
