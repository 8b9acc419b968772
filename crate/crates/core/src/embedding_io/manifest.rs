use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a manifest entry's embedding is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Class,
    Spurious,
    PairLeft,
    PairRight,
    Query,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub text: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, text: impl Into<String>, role: Role) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            role,
            class_label: None,
            attribute_label: None,
            pair_id: None,
        }
    }

    pub fn with_class(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn with_attribute(mut self, label: impl Into<String>) -> Self {
        self.attribute_label = Some(label.into());
        self
    }

    pub fn with_pair(mut self, pair_id: impl Into<String>) -> Self {
        self.pair_id = Some(pair_id.into());
        self
    }
}

/// Ordered list of prompts; entry `i` describes column `i` of the matching
/// embedding binary.
///
/// `dim` is optional so that text-only templates (fed to an encoder) can omit
/// it. It is required to load an empty binary and is always written on save.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptManifest {
    pub encoder_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub entries: Vec<ManifestEntry>,
}

impl PromptManifest {
    pub fn new(encoder_tag: impl Into<String>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            encoder_tag: encoder_tag.into(),
            dim: None,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of entries with the given role, in manifest order.
    pub fn indices_with_role(&self, role: Role) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Checks id uniqueness, label presence and pair matching.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for entry in &self.entries {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", entry.id)));
            }
            let missing = match entry.role {
                Role::Class => entry.class_label.is_none().then_some("class_label"),
                Role::Spurious | Role::Attribute => {
                    entry.attribute_label.is_none().then_some("attribute_label")
                }
                Role::PairLeft | Role::PairRight => entry.pair_id.is_none().then_some("pair_id"),
                Role::Query => None,
            };
            if let Some(field) = missing {
                return Err(Error::Manifest(format!(
                    "entry {:?} with role {:?} is missing {field}",
                    entry.id, entry.role
                )));
            }
        }
        self.pair_members().map(|_| ())
    }

    /// Maps each pair_id (sorted) to its (left, right) entry indices.
    pub(crate) fn pair_members(&self) -> Result<BTreeMap<&str, (usize, usize)>> {
        let mut slots: BTreeMap<&str, (Option<usize>, Option<usize>)> = BTreeMap::new();
        for (i, entry) in self.entries.iter().enumerate() {
            let left = match entry.role {
                Role::PairLeft => true,
                Role::PairRight => false,
                _ => continue,
            };
            let pair_id = entry
                .pair_id
                .as_deref()
                .ok_or_else(|| Error::Manifest(format!("entry {:?} has no pair_id", entry.id)))?;
            let slot = slots.entry(pair_id).or_default();
            let side = if left { &mut slot.0 } else { &mut slot.1 };
            if side.replace(i).is_some() {
                return Err(Error::Manifest(format!(
                    "pair_id {pair_id:?} has more than one {} member",
                    if left { "pair_left" } else { "pair_right" }
                )));
            }
        }
        slots
            .into_iter()
            .map(|(id, slot)| match slot {
                (Some(l), Some(r)) => Ok((id, (l, r))),
                _ => Err(Error::DanglingPair(id.to_string())),
            })
            .collect()
    }

    /// Distinct labels, in first-appearance order, for entries of `role`.
    pub fn class_labels(&self, role: Role) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in self.entries.iter().filter(|e| e.role == role) {
            if let Some(label) = &e.class_label {
                if !out.contains(label) {
                    out.push(label.clone());
                }
            }
        }
        out
    }
}
