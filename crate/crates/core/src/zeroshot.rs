//! Zero-shot classifiers built from class-prompt embeddings and their
//! group-robustness evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVectorView};
use serde::{Deserialize, Serialize};

use crate::embedding_io::{EmbeddingMatrix, GroupedEvalSet};
use crate::error::{Error, Result};
use crate::projection::ANNIHILATION_TOL;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub projection_applied: bool,
    pub lambda: Option<f64>,
    pub renormalized: bool,
}

/// `beta`: K×d, one row per class.
#[derive(Debug, Clone)]
pub struct ClassifierWeights {
    beta: DMatrix<f64>,
    class_names: Vec<String>,
    provenance: Provenance,
}

impl ClassifierWeights {
    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn num_classes(&self) -> usize {
        self.beta.nrows()
    }

    pub fn dim(&self) -> usize {
        self.beta.ncols()
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.provenance.lambda = Some(lambda);
        self
    }
}

/// Builds classifier rows from class-prompt embeddings (one column per
/// class), optionally projected and renormalized.
///
/// Missing names are filled in as `class_<k>`.
pub fn build_classifier(
    class_embeddings: &EmbeddingMatrix,
    class_names: &[String],
    proj: Option<&DMatrix<f64>>,
    renormalize: bool,
) -> Result<ClassifierWeights> {
    let k = class_embeddings.count();
    if k < 2 {
        return Err(Error::TooFew {
            what: "classes",
            needed: 2,
            found: k,
        });
    }
    let d = class_embeddings.dim();
    let projected = match proj {
        Some(p) => {
            if p.shape() != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: if p.nrows() != d { p.nrows() } else { p.ncols() },
                });
            }
            p * class_embeddings.as_matrix()
        }
        None => class_embeddings.as_matrix().clone(),
    };
    let mut beta = projected.transpose();
    for (row, mut r) in beta.row_iter_mut().enumerate() {
        let before = class_embeddings.column(row).norm();
        let after = r.norm();
        if after == 0.0 || after <= ANNIHILATION_TOL * before {
            return Err(Error::ClassAnnihilated(row));
        }
        if renormalize {
            r /= after;
        }
    }
    let class_names = (0..k)
        .map(|i| {
            class_names
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("class_{i}"))
        })
        .collect();
    Ok(ClassifierWeights {
        beta,
        class_names,
        provenance: Provenance {
            projection_applied: proj.is_some(),
            lambda: None,
            renormalized: renormalize,
        },
    })
}

/// Index of the largest cosine similarity between `x` and the rows of
/// `weights`; `None` for a zero vector. Ties go to the smallest index.
pub(crate) fn cosine_argmax(weights: &DMatrix<f64>, x: DVectorView<'_, f64>) -> Option<usize> {
    let xn = x.norm();
    if xn == 0.0 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, row) in weights.row_iter().enumerate() {
        let rn = row.norm();
        if rn == 0.0 {
            continue;
        }
        let cos = row.transpose().dot(&x) / (rn * xn);
        if best.is_none_or(|(_, b)| cos > b) {
            best = Some((k, cos));
        }
    }
    best.map(|(k, _)| k)
}

/// Per-item predictions; `None` marks zero-norm images excluded from scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predictions {
    pub labels: Vec<Option<usize>>,
}

impl Predictions {
    pub fn excluded_count(&self) -> usize {
        self.labels.iter().filter(|p| p.is_none()).count()
    }
}

/// Cosine-similarity argmax over classes for every image column.
pub fn predict(weights: &ClassifierWeights, images: &EmbeddingMatrix) -> Result<Predictions> {
    if images.dim() != weights.dim() {
        return Err(Error::DimensionMismatch {
            expected: weights.dim(),
            found: images.dim(),
        });
    }
    let labels = (0..images.count())
        .map(|j| cosine_argmax(&weights.beta, images.column(j)))
        .collect();
    Ok(Predictions { labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: usize,
    pub label: String,
    pub attribute: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Worst-group vs. average accuracy under the 0/1 loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub per_group: Vec<GroupAccuracy>,
    pub average: f64,
    pub worst_group: f64,
    pub gap: f64,
    pub excluded_count: usize,
}

impl GroupReport {
    /// Keyed by group index.
    pub fn per_group_accuracy(&self) -> BTreeMap<usize, f64> {
        self.per_group.iter().map(|g| (g.group, g.accuracy)).collect()
    }

    /// Aligned plain-text table, one line per group plus a summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:<24} {:<24} {:>8} {:>9}", "group", "label", "attribute", "n", "accuracy");
        for g in &self.per_group {
            let _ = writeln!(
                out,
                "{:<6} {:<24} {:<24} {:>8} {:>9.4}",
                g.group, g.label, g.attribute, g.total, g.accuracy
            );
        }
        let _ = writeln!(
            out,
            "average {:.4}  worst-group {:.4}  gap {:.4}  excluded {}",
            self.average, self.worst_group, self.gap, self.excluded_count
        );
        out
    }
}

/// Builds the report from predictions already computed for `eval_set`.
pub fn group_report_from_predictions(
    predictions: &Predictions,
    eval_set: &GroupedEvalSet,
) -> Result<GroupReport> {
    if predictions.labels.len() != eval_set.len() {
        return Err(Error::CountMismatch {
            matrix: predictions.labels.len(),
            manifest: eval_set.len(),
        });
    }
    let num_groups = eval_set.num_groups();
    let mut correct = vec![0usize; num_groups];
    let mut total = vec![0usize; num_groups];
    for ((pred, &y), &g) in predictions
        .labels
        .iter()
        .zip(eval_set.labels())
        .zip(eval_set.groups())
    {
        if let Some(p) = pred {
            total[g] += 1;
            if *p == y {
                correct[g] += 1;
            }
        }
    }
    let missing: Vec<(usize, usize)> = (0..num_groups)
        .filter(|&g| total[g] == 0)
        .map(|g| eval_set.group_pair(g))
        .collect();
    if !missing.is_empty() || num_groups == 0 {
        return Err(Error::EmptyGroups(missing));
    }
    let per_group: Vec<GroupAccuracy> = (0..num_groups)
        .map(|g| {
            let (y, a) = eval_set.group_pair(g);
            GroupAccuracy {
                group: g,
                label: eval_set.class_names()[y].clone(),
                attribute: eval_set.attribute_names()[a].clone(),
                correct: correct[g],
                total: total[g],
                accuracy: correct[g] as f64 / total[g] as f64,
            }
        })
        .collect();
    // integer counts keep the average exact and order-independent
    let all_correct: usize = correct.iter().sum();
    let all_total: usize = total.iter().sum();
    let average = all_correct as f64 / all_total as f64;
    let worst_group = per_group
        .iter()
        .map(|g| g.accuracy)
        .fold(f64::INFINITY, f64::min);
    Ok(GroupReport {
        per_group,
        average,
        worst_group,
        gap: average - worst_group,
        excluded_count: predictions.excluded_count(),
    })
}

pub fn group_report(weights: &ClassifierWeights, eval_set: &GroupedEvalSet) -> Result<GroupReport> {
    if eval_set.is_empty() {
        return Err(Error::TooFew {
            what: "evaluation items",
            needed: 1,
            found: 0,
        });
    }
    let predictions = predict(weights, eval_set.embeddings())?;
    group_report_from_predictions(&predictions, eval_set)
}

/// Cosine similarities between classifier rows and spurious embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProbe {
    pub class_names: Vec<String>,
    pub spurious_names: Vec<String>,
    /// `values[k][j]`: class `k` against spurious column `j`.
    pub values: Vec<Vec<f64>>,
}

impl BiasProbe {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for name in &self.spurious_names {
            out.push(',');
            out.push_str(&csv_field(name));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.values) {
            out.push_str(&csv_field(name));
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn bias_probe(
    weights: &ClassifierWeights,
    spurious: &EmbeddingMatrix,
    spurious_names: &[String],
) -> Result<BiasProbe> {
    if spurious.dim() != weights.dim() {
        return Err(Error::DimensionMismatch {
            expected: weights.dim(),
            found: spurious.dim(),
        });
    }
    let col_norms: Vec<f64> = (0..spurious.count())
        .map(|j| spurious.column(j).norm())
        .collect();
    if let Some(j) = col_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm {
            what: "spurious embedding",
            index: j,
        });
    }
    let mut values = Vec::with_capacity(weights.num_classes());
    for (k, row) in weights.beta.row_iter().enumerate() {
        let rn = row.norm();
        if rn == 0.0 {
            return Err(Error::ZeroNorm {
                what: "classifier row",
                index: k,
            });
        }
        values.push(
            (0..spurious.count())
                .map(|j| row.transpose().dot(&spurious.column(j)) / (rn * col_norms[j]))
                .collect(),
        );
    }
    let spurious_names = (0..spurious.count())
        .map(|j| {
            spurious_names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("spurious_{j}"))
        })
        .collect();
    Ok(BiasProbe {
        class_names: weights.class_names.clone(),
        spurious_names,
        values,
    })
}
