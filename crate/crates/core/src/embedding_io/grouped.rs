use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

/// An extra attribute labelling of the same items (e.g. race or age next to
/// the primary `a` column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFamily {
    pub names: Vec<String>,
    pub values: Vec<usize>,
}

/// Contents of `<name>.labels.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsSidecar {
    pub y: Vec<usize>,
    pub a: Vec<usize>,
    pub class_names: Vec<String>,
    pub attribute_names: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub families: BTreeMap<String, AttributeFamily>,
}

/// Image embeddings with class label `y`, spurious attribute `a` and group
/// `g = y * |A| + a` per item.
#[derive(Debug, Clone)]
pub struct GroupedEvalSet {
    embeddings: EmbeddingMatrix,
    labels: Vec<usize>,
    attributes: Vec<usize>,
    groups: Vec<usize>,
    class_names: Vec<String>,
    attribute_names: Vec<String>,
}

impl GroupedEvalSet {
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Vec<usize>,
        attributes: Vec<usize>,
        class_names: Vec<String>,
        attribute_names: Vec<String>,
    ) -> Result<Self> {
        let n = embeddings.count();
        for (what, len) in [("labels", labels.len()), ("attributes", attributes.len())] {
            if len != n {
                return Err(Error::Invalid(format!(
                    "{what} has {len} entries but there are {n} embeddings"
                )));
            }
        }
        let num_attrs = attribute_names.len();
        check_range("class label", &labels, class_names.len())?;
        check_range("attribute", &attributes, num_attrs)?;
        let groups = labels
            .iter()
            .zip(&attributes)
            .map(|(&y, &a)| y * num_attrs + a)
            .collect();
        Ok(Self {
            embeddings,
            labels,
            attributes,
            groups,
            class_names,
            attribute_names,
        })
    }

    pub fn from_sidecar(embeddings: EmbeddingMatrix, sidecar: &LabelsSidecar) -> Result<Self> {
        Self::new(
            embeddings,
            sidecar.y.clone(),
            sidecar.a.clone(),
            sidecar.class_names.clone(),
            sidecar.attribute_names.clone(),
        )
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn attributes(&self) -> &[usize] {
        &self.attributes
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.class_names.len() * self.attribute_names.len()
    }

    /// `(y, a)` for group index `g`.
    pub fn group_pair(&self, g: usize) -> (usize, usize) {
        let num_attrs = self.attribute_names.len();
        (g / num_attrs, g % num_attrs)
    }
}

fn check_range(what: &'static str, values: &[usize], size: usize) -> Result<()> {
    match values.iter().find(|&&v| v >= size) {
        Some(&index) => Err(Error::OutOfRange { what, index, size }),
        None => Ok(()),
    }
}
