use serde_json::Value;

use super::{group_opinions, normalize_text, AbsaRecord, Polarity, NULL_TARGET};
use crate::error::{Error, Result};

const DOMAIN_TAG: &str = "sentihood";

/// Parse the Sentihood distribution format: a JSON array of
/// `{id?, text, opinions: [{target_entity, aspect, sentiment}]}`.
///
/// Location placeholders such as `LOCATION1` are kept verbatim as targets.
/// An entry without opinions becomes one unlabelled record.
pub fn parse_sentihood(json: &str) -> Result<Vec<AbsaRecord>> {
    let doc: Value = serde_json::from_str(json)?;
    let entries = doc
        .as_array()
        .ok_or_else(|| Error::InvalidInput("sentihood document must be a JSON array".into()))?;

    let mut out = Vec::new();
    for (index, entry) in entries.iter().enumerate() {
        let text = str_key(entry, "text", index)?;
        let opinions = entry
            .get("opinions")
            .and_then(Value::as_array)
            .ok_or_else(|| missing(index, "opinions"))?;
        let sentence_id = match entry.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => index.to_string(),
        };
        let sentence = normalize_text(text);
        if sentence.is_empty() {
            continue;
        }

        let mut grouped = Vec::with_capacity(opinions.len());
        for (j, op) in opinions.iter().enumerate() {
            let field = |key: &str| {
                op.get(key)
                    .and_then(Value::as_str)
                    .ok_or_else(|| missing(index, &format!("opinions[{j}].{key}")))
            };
            let target = field("target_entity")?.trim().to_string();
            let aspect = field("aspect")?.trim().to_lowercase();
            let raw = field("sentiment")?;
            let polarity = Polarity::parse(raw).ok_or_else(|| Error::UnknownSentiment {
                index,
                value: raw.to_string(),
            })?;
            grouped.push((target, Some(polarity), Some(aspect)));
        }
        if grouped.is_empty() {
            grouped.push((NULL_TARGET.to_string(), None, None));
        }
        out.extend(group_opinions(&sentence_id, &sentence, DOMAIN_TAG, grouped));
    }
    Ok(out)
}

fn missing(index: usize, key: &str) -> Error {
    Error::MissingKey {
        index,
        key: key.to_string(),
    }
}

fn str_key<'a>(entry: &'a Value, key: &str, index: usize) -> Result<&'a str> {
    entry
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| missing(index, key))
}
