use std::str::FromStr;

use roxmltree::{Document, Node};
use serde::{Deserialize, Serialize};

use super::{group_opinions, normalize_text, AbsaRecord, CategoryMap, Polarity, NULL_TARGET};
use crate::error::{Error, Result};

/// Which SemEval ABSA annotation schema a document follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemaYear {
    #[serde(rename = "2014")]
    Y2014,
    #[serde(rename = "2015")]
    Y2015,
    #[serde(rename = "2016")]
    Y2016,
}

impl SchemaYear {
    pub fn domain_tag(self) -> &'static str {
        match self {
            SchemaYear::Y2014 => "semeval2014",
            SchemaYear::Y2015 => "semeval2015",
            SchemaYear::Y2016 => "semeval2016",
        }
    }
}

impl FromStr for SchemaYear {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2014" => Ok(SchemaYear::Y2014),
            "2015" => Ok(SchemaYear::Y2015),
            "2016" => Ok(SchemaYear::Y2016),
            other => Err(Error::InvalidInput(format!("unknown SemEval year `{other}`"))),
        }
    }
}

pub fn parse_semeval(xml: &str, year: SchemaYear) -> Result<Vec<AbsaRecord>> {
    parse_semeval_with(xml, year, &CategoryMap::builtin())
}

/// Parse a SemEval ABSA document with an explicit category table.
///
/// 2014 documents read `aspectCategories/aspectCategory`; 2015/16 read
/// `Opinions/Opinion`. Opinions with polarity "conflict" are dropped, and a
/// sentence whose opinions were all dropped disappears entirely. A sentence
/// without any opinions yields one unlabelled record with the NULL target.
pub fn parse_semeval_with(
    xml: &str,
    year: SchemaYear,
    map: &CategoryMap,
) -> Result<Vec<AbsaRecord>> {
    let doc = Document::parse(xml).map_err(|e| {
        let pos = e.pos();
        Error::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let tag = year.domain_tag();

    let mut out = Vec::new();
    for (ordinal, sentence) in doc
        .descendants()
        .filter(|n| n.has_tag_name("sentence"))
        .enumerate()
    {
        let id = sentence
            .attribute("id")
            .map(str::to_string)
            .unwrap_or_else(|| format!("{tag}-{ordinal}"));
        let text = sentence
            .children()
            .find(|n| n.has_tag_name("text"))
            .and_then(|n| n.text())
            .map(normalize_text)
            .unwrap_or_default();
        if text.is_empty() {
            continue;
        }

        let raw = match year {
            SchemaYear::Y2014 => opinions_2014(sentence, map)?,
            SchemaYear::Y2015 | SchemaYear::Y2016 => opinions_2015(sentence, map)?,
        };
        let had_opinions = !raw.is_empty();
        let kept: Vec<_> = raw
            .into_iter()
            .filter_map(|(target, polarity, aspect)| {
                polarity.map(|p| (target, Some(p), Some(aspect)))
            })
            .collect();

        if kept.is_empty() {
            if !had_opinions {
                out.extend(group_opinions(
                    &id,
                    &text,
                    tag,
                    vec![(NULL_TARGET.to_string(), None, None)],
                ));
            }
            continue;
        }
        out.extend(group_opinions(&id, &text, tag, kept));
    }
    Ok(out)
}

type RawOpinion = (String, Option<Polarity>, String);

fn line_of(node: Node<'_, '_>) -> u32 {
    node.document().text_pos_at(node.range().start).row
}

fn polarity_attr(node: Node<'_, '_>) -> Result<Option<Polarity>> {
    let raw = node.attribute("polarity").ok_or_else(|| Error::Xml {
        line: line_of(node),
        column: 0,
        message: format!("<{}> without polarity", node.tag_name().name()),
    })?;
    if raw.eq_ignore_ascii_case("conflict") {
        return Ok(None);
    }
    Polarity::parse(raw).map(Some).ok_or_else(|| Error::Xml {
        line: line_of(node),
        column: 0,
        message: format!("unknown polarity `{raw}`"),
    })
}

fn category_attr<'a>(node: Node<'a, '_>) -> Result<&'a str> {
    node.attribute("category").ok_or_else(|| Error::Xml {
        line: line_of(node),
        column: 0,
        message: format!("<{}> without category", node.tag_name().name()),
    })
}

fn opinions_2014(sentence: Node<'_, '_>, map: &CategoryMap) -> Result<Vec<RawOpinion>> {
    let mut out = Vec::new();
    for cat in sentence
        .children()
        .filter(|n| n.has_tag_name("aspectCategories"))
        .flat_map(|n| n.children())
        .filter(|n| n.has_tag_name("aspectCategory"))
    {
        let aspect = map.map_2014(category_attr(cat)?)?;
        out.push((NULL_TARGET.to_string(), polarity_attr(cat)?, aspect));
    }
    Ok(out)
}

fn opinions_2015(sentence: Node<'_, '_>, map: &CategoryMap) -> Result<Vec<RawOpinion>> {
    let mut out = Vec::new();
    for op in sentence
        .children()
        .filter(|n| n.has_tag_name("Opinions"))
        .flat_map(|n| n.children())
        .filter(|n| n.has_tag_name("Opinion"))
    {
        let aspect = map.map_entity_attribute(category_attr(op)?)?;
        let target = op
            .attribute("target")
            .map(normalize_text)
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| NULL_TARGET.to_string());
        out.push((target, polarity_attr(op)?, aspect));
    }
    Ok(out)
}
