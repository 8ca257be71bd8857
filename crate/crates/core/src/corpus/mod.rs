//! Canonical ABSA records and the dataset plumbing around them.
//!
//! Every raw format (SemEval XML, Sentihood JSON) is lowered into
//! [`AbsaRecord`]s. One record covers one `(sentence, target, polarity)`
//! group: the aspects that share a target and a polarity inside a sentence.
//! Detection works on the coarser `(sentence, target)` view produced by
//! [`detection_view`].

mod categories;
mod semeval;
mod sentihood;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub use categories::CategoryMap;
pub use semeval::{parse_semeval, SchemaYear};
pub use sentihood::parse_sentihood;

/// Target value used when a dataset does not name the opinion target.
pub const NULL_TARGET: &str = "NULL";

/// Sentiment class. The index order (positive, negative, neutral) is fixed
/// everywhere a distribution or a one-hot vector is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Negative, Polarity::Neutral];

    pub fn index(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Neutral => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Polarity> {
        Polarity::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }

    /// Case-insensitive parse. Returns `None` for anything outside the three
    /// classes, including "conflict".
    pub fn parse(s: &str) -> Option<Polarity> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Some(Polarity::Positive),
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One labelled example: a sentence, the target it talks about, the aspects
/// mentioned for that target, and (for sentiment data) their shared polarity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbsaRecord {
    pub id: String,
    pub sentence: String,
    pub target: String,
    pub aspects: BTreeSet<String>,
    pub polarity: Option<Polarity>,
    pub domain_tag: String,
}

impl AbsaRecord {
    /// Id of the source sentence: the record id up to its last `#`.
    pub fn sentence_id(&self) -> &str {
        match self.id.rfind('#') {
            Some(i) => &self.id[..i],
            None => &self.id,
        }
    }

    pub fn has_explicit_target(&self) -> bool {
        self.target != NULL_TARGET
    }
}

/// Ordered, duplicate-free list of aspect names. Position `i` is the label
/// index used by detector label vectors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectInventory {
    names: Vec<String>,
}

impl AspectInventory {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::InvalidInput("blank aspect name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate aspect name `{n}`")));
            }
        }
        Ok(AspectInventory { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Binary membership vector over the inventory.
    pub fn label_vector<'a, I>(&self, aspects: I) -> Result<Vec<bool>>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut y = vec![false; self.len()];
        for a in aspects {
            let i = self
                .index_of(a)
                .ok_or_else(|| Error::InvalidInput(format!("aspect `{a}` not in inventory")))?;
            y[i] = true;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub train: Vec<AbsaRecord>,
    pub dev: Vec<AbsaRecord>,
    pub test: Vec<AbsaRecord>,
    pub seed: u64,
}

/// NFC-normalise and collapse whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keep only records whose sentence mentions exactly one distinct target.
pub fn filter_single_target(records: &[AbsaRecord]) -> Vec<AbsaRecord> {
    let mut targets: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for r in records {
        targets
            .entry(r.sentence_id())
            .or_default()
            .insert(r.target.as_str());
    }
    records
        .iter()
        .filter(|r| targets[r.sentence_id()].len() == 1)
        .cloned()
        .collect()
}

/// Seeded shuffle followed by contiguous train/dev/test slices. Dev and test
/// each take `floor(n / 10)` records and the remainder goes to train.
pub fn split(records: &[AbsaRecord], seed: u64) -> Result<SplitBundle> {
    let n = records.len();
    if n < 10 {
        return Err(Error::TooFewRecords(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let held = n / 10;
    let train_end = n - 2 * held;
    let pick = |range: &[usize]| range.iter().map(|&i| records[i].clone()).collect();
    Ok(SplitBundle {
        train: pick(&order[..train_end]),
        dev: pick(&order[train_end..train_end + held]),
        test: pick(&order[train_end + held..]),
        seed,
    })
}

/// Union of all aspect names, sorted lexicographically.
pub fn aspect_inventory(records: &[AbsaRecord]) -> AspectInventory {
    let names: BTreeSet<&String> = records.iter().flat_map(|r| r.aspects.iter()).collect();
    AspectInventory {
        names: names.into_iter().cloned().collect(),
    }
}

/// Merge records sharing a `(sentence, target)` pair into one detection
/// example whose aspect set is the union. The polarity survives only when
/// every merged record agrees on it.
pub fn detection_view(records: &[AbsaRecord]) -> Vec<AbsaRecord> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut merged: BTreeMap<(String, String), AbsaRecord> = BTreeMap::new();
    for r in records {
        let key = (r.sentence_id().to_string(), r.target.clone());
        match merged.get_mut(&key) {
            Some(m) => {
                m.aspects.extend(r.aspects.iter().cloned());
                if m.polarity != r.polarity {
                    m.polarity = None;
                }
            }
            None => {
                order.push(key.clone());
                merged.insert(key, r.clone());
            }
        }
    }
    order
        .into_iter()
        .map(|k| merged.remove(&k).expect("key recorded on insert"))
        .collect()
}

pub fn to_jsonl(records: &[AbsaRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<AbsaRecord>> {
    parse_jsonl_lines(text.lines().map(|l| Ok(l.to_string())))
}

pub fn write_jsonl(path: &Path, records: &[AbsaRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(to_jsonl(records)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<AbsaRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl_lines(
        BufReader::new(f)
            .lines()
            .map(|l| l.map_err(|e| Error::io(path, e))),
    )
}

fn parse_jsonl_lines<I>(lines: I) -> Result<Vec<AbsaRecord>>
where
    I: Iterator<Item = Result<String>>,
{
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| Error::JsonLine {
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Group `(target, polarity, aspect)` triples into records in order of first
/// appearance. Shared by the raw-format parsers.
pub(crate) fn group_opinions(
    sentence_id: &str,
    sentence: &str,
    domain_tag: &str,
    opinions: Vec<(String, Option<Polarity>, Option<String>)>,
) -> Vec<AbsaRecord> {
    let mut out: Vec<AbsaRecord> = Vec::new();
    for (target, polarity, aspect) in opinions {
        let idx = match out
            .iter()
            .position(|r| r.target == target && r.polarity == polarity)
        {
            Some(i) => i,
            None => {
                out.push(AbsaRecord {
                    id: format!("{sentence_id}#{}", out.len()),
                    sentence: sentence.to_string(),
                    target,
                    aspects: BTreeSet::new(),
                    polarity,
                    domain_tag: domain_tag.to_string(),
                });
                out.len() - 1
            }
        };
        if let Some(a) = aspect {
            out[idx].aspects.insert(a);
        }
    }
    out
}
