use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../../data/categories.json");

/// Raw SemEval category string to coarse aspect name.
///
/// 2014 files carry flat category names; 2015/16 files carry
/// `ENTITY#ATTRIBUTE` pairs that collapse onto the entity.
#[derive(Debug, Clone, Deserialize)]
pub struct CategoryMap {
    semeval2014: BTreeMap<String, String>,
    entities: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled category table is valid")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn map_2014(&self, category: &str) -> Result<String> {
        self.semeval2014
            .get(&category.trim().to_lowercase())
            .cloned()
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }

    pub fn map_entity_attribute(&self, category: &str) -> Result<String> {
        let (entity, attribute) = category
            .split_once('#')
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
        if attribute.trim().is_empty() {
            return Err(Error::UnknownCategory(category.to_string()));
        }
        self.entities
            .get(&entity.trim().to_uppercase())
            .cloned()
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))
    }
}
