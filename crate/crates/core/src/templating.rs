//! Paired-text inputs for both models.
//!
//! The detector sees the aspect inventory as its first segment and the
//! sentence as its second. The sentiment predictor sees an auxiliary question
//! "what do you think of {aspects} of {target}?" followed by the sentence.
//! Special tokens are added by the encoder; [`PairedText::render_marked`]
//! shows the sequence as the encoder will frame it.

use serde::{Deserialize, Serialize};

use crate::corpus::{AspectInventory, NULL_TARGET};
use crate::error::{Error, Result};

/// Word used in place of an aspect list when no aspects are given.
pub const NULL_ASPECT: &str = "NULL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedText {
    pub segment_a: String,
    pub segment_b: String,
    /// Set for detector inputs: the aspect names that make up `segment_a`,
    /// so the tokenizer can locate each name's first sub-token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect_names: Option<Vec<String>>,
}

impl PairedText {
    pub fn render_marked(&self) -> String {
        format!("[CLS] {} [SEP] {} [SEP]", self.segment_a, self.segment_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AspectModeKind {
    Right,
    All,
    None,
}

/// Which aspects the auxiliary question mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectMode {
    kind: AspectModeKind,
    aspects: Vec<String>,
}

impl AspectMode {
    /// Aspects known (or predicted) for the example, in the given order.
    pub fn right<I, S>(aspects: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AspectMode {
            kind: AspectModeKind::Right,
            aspects: aspects.into_iter().map(Into::into).collect(),
        }
    }

    pub fn all(inventory: &AspectInventory) -> Self {
        AspectMode {
            kind: AspectModeKind::All,
            aspects: inventory.names().to_vec(),
        }
    }

    pub fn none() -> Self {
        AspectMode {
            kind: AspectModeKind::None,
            aspects: Vec::new(),
        }
    }

    pub fn kind(&self) -> AspectModeKind {
        self.kind
    }

    pub fn aspects(&self) -> &[String] {
        &self.aspects
    }
}

pub fn build_detector_input(inventory: &AspectInventory, sentence: &str) -> Result<PairedText> {
    if inventory.is_empty() {
        return Err(Error::EmptyInventory);
    }
    Ok(PairedText {
        segment_a: inventory.names().join(" "),
        segment_b: sentence.to_string(),
        aspect_names: Some(inventory.names().to_vec()),
    })
}

/// Join aspect names the way the reference prompts print them: two items as
/// "a, and b", three or more as "a, b and c".
pub fn join_aspects(aspects: &[String]) -> String {
    match aspects {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a}, and {b}"),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

pub fn build_sentiment_query(mode: &AspectMode, target: &str) -> Result<String> {
    if target.trim().is_empty() {
        return Err(Error::InvalidInput("empty target".into()));
    }
    let list = match mode.kind {
        AspectModeKind::None => NULL_ASPECT.to_string(),
        AspectModeKind::Right if mode.aspects.is_empty() => return Err(Error::EmptyRightAspects),
        AspectModeKind::All if mode.aspects.is_empty() => return Err(Error::EmptyInventory),
        AspectModeKind::Right | AspectModeKind::All => join_aspects(&mode.aspects),
    };
    Ok(format!("what do you think of {list} of {target}?"))
}

pub fn build_sentiment_input(query: &str, sentence: &str) -> Result<PairedText> {
    if query.is_empty() || sentence.is_empty() {
        return Err(Error::InvalidInput("empty segment".into()));
    }
    Ok(PairedText {
        segment_a: query.to_string(),
        segment_b: sentence.to_string(),
        aspect_names: None,
    })
}

/// Surface form of a record target: the NULL sentinel becomes `null_target`.
pub fn render_target<'a>(target: &'a str, null_target: &'a str) -> &'a str {
    if target == NULL_TARGET || target.trim().is_empty() {
        null_target
    } else {
        target
    }
}

/// Order selected aspects by descending score, ties by inventory position.
pub fn order_by_score(inventory: &AspectInventory, scores: &[f64], selected: &[usize]) -> Vec<String> {
    let mut idx = selected.to_vec();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter()
        .map(|i| inventory.names()[i].clone())
        .collect()
}
