//! Retrieval skew, distribution discrepancy and pair-gap measurements.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding_io::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::projection::PositivePairSet;
use crate::zeroshot::cosine_argmax;

/// Ranked item indices with the attribute of each ranked item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    item_ids: Vec<usize>,
    attributes: Vec<usize>,
}

impl RankedList {
    /// `attribute_of[i]` is the attribute of item `i`.
    pub fn new(item_ids: Vec<usize>, attribute_of: &[usize]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(item_ids.len());
        let mut attributes = Vec::with_capacity(item_ids.len());
        for &id in &item_ids {
            if !seen.insert(id) {
                return Err(Error::Invalid(format!("item {id} ranked twice")));
            }
            let a = *attribute_of.get(id).ok_or(Error::OutOfRange {
                what: "ranked item",
                index: id,
                size: attribute_of.len(),
            })?;
            attributes.push(a);
        }
        Ok(Self {
            item_ids,
            attributes,
        })
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.item_ids
    }

    pub fn attributes(&self) -> &[usize] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }
}

/// Top-`k` image indices by cosine similarity to `query`, most similar first.
/// Ties go to the lower index; zero-norm images are never retrieved.
pub fn rank_by_query(query: &DVector<f64>, images: &EmbeddingMatrix, k: usize) -> Result<Vec<usize>> {
    if query.len() != images.dim() {
        return Err(Error::DimensionMismatch {
            expected: images.dim(),
            found: query.len(),
        });
    }
    let qn = query.norm();
    if qn == 0.0 {
        return Err(Error::ZeroNorm {
            what: "query",
            index: 0,
        });
    }
    let mut scored: Vec<(usize, f64)> = (0..images.count())
        .filter_map(|j| {
            let col = images.column(j);
            let n = col.norm();
            (n > 0.0).then(|| (j, col.dot(query) / (n * qn)))
        })
        .collect();
    if k == 0 || k > scored.len() {
        return Err(Error::InvalidCutoff {
            k,
            available: scored.len(),
        });
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(j, _)| j).collect())
}

/// `max_a ln(r_{a,k} · |A|)`, where `r_{a,k}` is the share of the top `k`
/// items carrying attribute `a`. Natural log; absent attributes are skipped.
pub fn max_skew(ranked: &RankedList, num_attributes: usize, k: usize) -> Result<f64> {
    if num_attributes < 2 {
        return Err(Error::TooFew {
            what: "attributes",
            needed: 2,
            found: num_attributes,
        });
    }
    if k == 0 || k > ranked.len() {
        return Err(Error::InvalidCutoff {
            k,
            available: ranked.len(),
        });
    }
    let mut counts = vec![0usize; num_attributes];
    for &a in &ranked.attributes[..k] {
        if a >= num_attributes {
            return Err(Error::OutOfRange {
                what: "attribute",
                index: a,
                size: num_attributes,
            });
        }
        counts[a] += 1;
    }
    let skew = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| ((c * num_attributes) as f64 / k as f64).ln())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(skew)
}

/// Arithmetic mean of per-query MaxSkew values.
pub fn mean_max_skew(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Empirical counts over a discrete attribute set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    pub counts: Vec<u64>,
    pub attribute_names: Vec<String>,
    /// Items with no valid attribute (e.g. zero-norm embeddings).
    #[serde(default)]
    pub excluded: u64,
}

impl AttributeDistribution {
    pub fn from_assignments(assignments: &[Option<usize>], attribute_names: Vec<String>) -> Result<Self> {
        let mut counts = vec![0u64; attribute_names.len()];
        let mut excluded = 0;
        for a in assignments {
            match a {
                Some(a) if *a < counts.len() => counts[*a] += 1,
                Some(a) => {
                    return Err(Error::OutOfRange {
                        what: "attribute",
                        index: *a,
                        size: counts.len(),
                    })
                }
                None => excluded += 1,
            }
        }
        Ok(Self {
            counts,
            attribute_names,
            excluded,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }
}

/// L2 distance between the empirical attribute frequencies and uniform.
pub fn discrepancy(dist: &AttributeDistribution) -> Result<f64> {
    let n = dist.counts.len();
    if n < 2 {
        return Err(Error::TooFew {
            what: "attributes",
            needed: 2,
            found: n,
        });
    }
    if dist.total() == 0 {
        return Err(Error::TooFew {
            what: "counted items",
            needed: 1,
            found: 0,
        });
    }
    let uniform = 1.0 / n as f64;
    Ok(dist
        .frequencies()
        .iter()
        .map(|p| (p - uniform).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Per-item attribute predictions and their aggregate counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAssignment {
    pub distribution: AttributeDistribution,
    pub per_item: Vec<Option<usize>>,
}

/// Assigns each image the attribute prompt with the highest cosine
/// similarity (ties to the smallest index). Zero-norm images are excluded.
pub fn classify_attributes(
    images: &EmbeddingMatrix,
    attribute_prompts: &EmbeddingMatrix,
    attribute_names: &[String],
) -> Result<AttributeAssignment> {
    let num = attribute_prompts.count();
    if num < 2 {
        return Err(Error::TooFew {
            what: "attribute prompts",
            needed: 2,
            found: num,
        });
    }
    if images.dim() != attribute_prompts.dim() {
        return Err(Error::DimensionMismatch {
            expected: attribute_prompts.dim(),
            found: images.dim(),
        });
    }
    if let Some(j) = (0..num).find(|&j| attribute_prompts.column(j).norm() == 0.0) {
        return Err(Error::ZeroNorm {
            what: "attribute prompt",
            index: j,
        });
    }
    let rows: DMatrix<f64> = attribute_prompts.as_matrix().transpose();
    let per_item: Vec<Option<usize>> = (0..images.count())
        .map(|j| cosine_argmax(&rows, images.column(j)))
        .collect();
    let names = (0..num)
        .map(|j| {
            attribute_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("attribute_{j}"))
        })
        .collect();
    Ok(AttributeAssignment {
        distribution: AttributeDistribution::from_assignments(&per_item, names)?,
        per_item,
    })
}

/// Mean L2 distance between projected pair members, `Σ ‖P z_i − P z_j‖ / |S|`.
pub fn pair_gap(proj: &DMatrix<f64>, pairs: &PositivePairSet) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::TooFew {
            what: "pairs",
            needed: 1,
            found: 0,
        });
    }
    let d = pairs.dim();
    if proj.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: proj.nrows(),
        });
    }
    let total: f64 = pairs.differences().map(|v| (proj * v).norm()).sum();
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::calibrated_projection;

    fn ranked(attrs: &[usize]) -> RankedList {
        RankedList::new((0..attrs.len()).collect(), attrs).unwrap()
    }

    fn emb(dim: usize, cols: &[&[f64]]) -> EmbeddingMatrix {
        let cols: Vec<Vec<f64>> = cols.iter().map(|c| c.to_vec()).collect();
        EmbeddingMatrix::from_columns(dim, &cols).unwrap()
    }

    fn dist(counts: &[u64]) -> AttributeDistribution {
        AttributeDistribution {
            counts: counts.to_vec(),
            attribute_names: (0..counts.len()).map(|i| format!("a{i}")).collect(),
            excluded: 0,
        }
    }

    #[test]
    fn skew_hand_cases() {
        assert_eq!(max_skew(&ranked(&[0, 0, 1, 1]), 2, 4).unwrap(), 0.0);
        assert!((max_skew(&ranked(&[0, 0, 0, 1]), 2, 4).unwrap() - 1.5f64.ln()).abs() < 1e-12);
        assert!((max_skew(&ranked(&[0, 0, 0, 0]), 2, 4).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn skew_only_looks_at_top_k() {
        let r = ranked(&[0, 1, 1, 1, 1]);
        assert_eq!(max_skew(&r, 2, 2).unwrap(), 0.0);
    }

    #[test]
    fn skew_rejects_bad_cutoff() {
        assert!(matches!(max_skew(&ranked(&[0, 1]), 2, 0), Err(Error::InvalidCutoff { .. })));
        assert!(matches!(max_skew(&ranked(&[0, 1]), 2, 3), Err(Error::InvalidCutoff { .. })));
    }

    #[test]
    fn duplicate_ranked_item_rejected() {
        assert!(RankedList::new(vec![0, 0], &[0, 1]).is_err());
    }

    #[test]
    fn discrepancy_hand_cases() {
        assert_eq!(discrepancy(&dist(&[50, 50])).unwrap(), 0.0);
        assert!((discrepancy(&dist(&[100, 0])).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((discrepancy(&dist(&[75, 25])).unwrap() - 0.125f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn discrepancy_rejects_empty() {
        assert!(discrepancy(&dist(&[0, 0])).is_err());
        assert!(discrepancy(&dist(&[3])).is_err());
    }

    #[test]
    fn ranking_basics() {
        let images = emb(2, &[&[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        let q = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(rank_by_query(&q, &images, 1).unwrap(), vec![1]);
        assert_eq!(rank_by_query(&q, &images, 3).unwrap(), vec![1, 2, 0]);
        let tied = emb(2, &[&[0.0, 1.0], &[1.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(rank_by_query(&q, &tied, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn ranking_errors() {
        let images = emb(2, &[&[0.0, 1.0]]);
        assert!(rank_by_query(&DVector::from_vec(vec![1.0, 0.0]), &images, 2).is_err());
        assert!(rank_by_query(&DVector::from_vec(vec![0.0, 0.0]), &images, 1).is_err());
    }

    #[test]
    fn classify_copies_of_prompt() {
        let prompts = emb(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let images = emb(2, &[&[0.0, 1.0], &[0.0, 3.0]]);
        let r = classify_attributes(&images, &prompts, &[]).unwrap();
        assert_eq!(r.per_item, vec![Some(1), Some(1)]);
        assert_eq!(r.distribution.counts, vec![0, 2]);
    }

    #[test]
    fn classify_empty_set() {
        let prompts = emb(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = classify_attributes(&EmbeddingMatrix::empty(2).unwrap(), &prompts, &[]).unwrap();
        assert!(r.per_item.is_empty());
        assert_eq!(r.distribution.counts, vec![0, 0]);
    }

    #[test]
    fn classify_hand_checked_2d() {
        // prompts at 0° and 60°; cosines per image listed in the comments
        let h = 3f64.sqrt() / 2.0;
        let prompts = emb(2, &[&[1.0, 0.0], &[0.5, h]]);
        let images = emb(
            2,
            &[
                &[1.0, 0.1],  // 0.995 vs 0.584 -> 0
                &[0.0, 1.0],  // 0 vs 0.866 -> 1
                &[1.0, 0.55], // 0.876 vs 0.855 -> 0
                &[1.0, 0.6],  // 0.857 vs 0.874 -> 1
            ],
        );
        let r = classify_attributes(&images, &prompts, &["m".into(), "f".into()]).unwrap();
        assert_eq!(r.per_item, vec![Some(0), Some(1), Some(0), Some(1)]);
        assert_eq!(r.distribution.counts, vec![2, 2]);
    }

    #[test]
    fn classify_dim_mismatch() {
        let prompts = emb(2, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(classify_attributes(&emb(3, &[&[1.0, 0.0, 0.0]]), &prompts, &[]).is_err());
    }

    #[test]
    fn pair_gap_identity_and_calibrated() {
        let pairs = PositivePairSet::from_slices(2, &[(&[0.56, 0.0], &[0.0, 0.0])]).unwrap();
        let i2 = DMatrix::identity(2, 2);
        assert!((pair_gap(&i2, &pairs).unwrap() - 0.56).abs() < 1e-15);
        let r = calibrated_projection(&i2, &pairs, 500.0).unwrap();
        assert!(pair_gap(&r.p_star, &pairs).unwrap() < 0.56);
        assert!(pair_gap(&i2, &PositivePairSet::empty(2).unwrap()).is_err());
    }
}
