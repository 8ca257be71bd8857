//! Small corpora that ship with the crate so every flow runs offline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    detection_view, parse_semeval, parse_sentihood, AbsaRecord, AspectInventory, Polarity, SchemaYear, NULL_TARGET,
};
use crate::error::Result;

pub const SEMEVAL_XML: &str = include_str!("../data/fixture/semeval2016_restaurants.xml");
pub const SENTIHOOD_JSON: &str = include_str!("../data/fixture/sentihood.json");

/// Size of the overfit subsets.
pub const OVERFIT_SIZE: usize = 32;

/// The 64-sentence restaurant fixture in SemEval-2016 format.
pub fn semeval_records() -> Result<Vec<AbsaRecord>> {
    parse_semeval(SEMEVAL_XML, SchemaYear::Y2016)
}

/// The 64-entry neighbourhood fixture in Sentihood format.
pub fn sentihood_records() -> Result<Vec<AbsaRecord>> {
    parse_sentihood(SENTIHOOD_JSON)
}

/// First 32 detection examples of the restaurant fixture.
pub fn detector_overfit_set() -> Result<Vec<AbsaRecord>> {
    Ok(detection_view(&semeval_records()?).into_iter().take(OVERFIT_SIZE).collect())
}

/// First 32 records of the neighbourhood fixture.
pub fn sentiment_overfit_set() -> Result<Vec<AbsaRecord>> {
    Ok(sentihood_records()?.into_iter().take(OVERFIT_SIZE).collect())
}

/// Aspect names of the synthetic corpus.
pub const SYNTHETIC_ASPECTS: [&str; 3] = ["food", "price", "service"];
/// Nouns that say nothing about which aspect is meant.
const GENERIC_NOUNS: [&str; 4] = ["place", "experience", "visit", "evening"];
/// Nouns that identify their aspect, indexed like [`SYNTHETIC_ASPECTS`].
const ASPECT_NOUNS: [[&str; 2]; 3] = [["pasta", "soup"], ["bill", "cost"], ["waiter", "staff"]];
const WORDS: [&str; 6] = ["loud", "plain", "quick", "heavy", "rare", "sharp"];
const FRAMES: [&str; 3] = ["the {n} was {w}", "i thought the {n} was {w}", "honestly the {n} was {w}"];

/// A corpus where the same sentence carries a different polarity for each
/// aspect, so polarity is decidable only once the aspect is known.
///
/// `source` uses generic nouns: every sentence occurs once per aspect with
/// three different polarities. `target` uses aspect-specific nouns, so a
/// detector can recover the aspect from the sentence; it is split in half for
/// detector training and evaluation.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub source: Vec<AbsaRecord>,
    pub target_train: Vec<AbsaRecord>,
    pub target_eval: Vec<AbsaRecord>,
}

impl SyntheticCorpus {
    pub fn inventory() -> AspectInventory {
        AspectInventory::new(SYNTHETIC_ASPECTS).expect("non-empty")
    }
}

/// Words fall into two groups; each group shifts the aspect's polarity
/// differently, so every sentence takes all three polarities across aspects.
fn synthetic_polarity(aspect: usize, word: usize) -> Polarity {
    Polarity::from_index((aspect + word % 2) % 3).expect("index below 3")
}

fn synthetic_record(id: String, sentence: String, aspect: usize, word: usize, tag: &str) -> AbsaRecord {
    AbsaRecord {
        id: format!("{id}#0"),
        sentence,
        target: NULL_TARGET.to_string(),
        aspects: [SYNTHETIC_ASPECTS[aspect].to_string()].into(),
        polarity: Some(synthetic_polarity(aspect, word)),
        domain_tag: tag.to_string(),
    }
}

fn fill(frame: &str, noun: &str, word: &str) -> String {
    frame.replace("{n}", noun).replace("{w}", word)
}

pub fn synthetic_corpus(seed: u64) -> SyntheticCorpus {
    let mut source = Vec::new();
    for (f, frame) in FRAMES.iter().enumerate() {
        for (n, noun) in GENERIC_NOUNS.iter().enumerate() {
            for (w, word) in WORDS.iter().enumerate() {
                for a in 0..SYNTHETIC_ASPECTS.len() {
                    let id = format!("src-{f}-{n}-{w}-{a}");
                    source.push(synthetic_record(id, fill(frame, noun, word), a, w, "synthetic-source"));
                }
            }
        }
    }

    let mut target = Vec::new();
    for (f, frame) in FRAMES.iter().enumerate() {
        for (a, nouns) in ASPECT_NOUNS.iter().enumerate() {
            for (n, noun) in nouns.iter().enumerate() {
                for (w, word) in WORDS.iter().enumerate() {
                    let id = format!("tgt-{f}-{a}-{n}-{w}");
                    target.push(synthetic_record(id, fill(frame, noun, word), a, w, "synthetic-target"));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    source.shuffle(&mut rng);
    target.shuffle(&mut rng);
    let half = target.len() / 2;
    let target_eval = target.split_off(half);
    SyntheticCorpus {
        source,
        target_train: target,
        target_eval,
    }
}
