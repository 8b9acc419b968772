use std::fmt::Write as _;

use anyhow::{bail, Result};
use debias_core::embedding_io::{labels_path, read_json, LabelsSidecar};
use debias_core::fairness::{classify_attributes, discrepancy, AttributeDistribution};
use debias_core::Role;
use serde::Serialize;

use super::{load_prompts, load_raw, out_path, role, write_report, Outcome};
use crate::config::Settings;

#[derive(Debug, Serialize)]
struct FamilyReport {
    family: String,
    #[serde(flatten)]
    distribution: AttributeDistribution,
    frequencies: Vec<f64>,
    discrepancy: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    items: usize,
    families: Vec<FamilyReport>,
}

#[derive(Debug, Serialize)]
struct Assignments {
    attribute_names: Vec<String>,
    per_item: Vec<Option<usize>>,
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let images = s.require(&s.images, "images")?;
    let (_, emb) = load_raw(images)?;

    let mut families = Vec::new();
    let mut assignments = None;
    if let Some(attr_path) = &s.attributes {
        let (manifest, prompts) = load_prompts(attr_path)?;
        let (mut entries, mut prompts_sel) = role(&manifest, &prompts, Role::Attribute)?;
        if entries.is_empty() {
            entries = manifest.entries.clone();
            prompts_sel = prompts;
        }
        // several prompts may describe one attribute; map each to its label
        let mut names: Vec<String> = Vec::new();
        let mut prompt_to_attr = Vec::with_capacity(entries.len());
        for e in &entries {
            let label = e.attribute_label.clone().unwrap_or_else(|| e.id.clone());
            let idx = match names.iter().position(|n| *n == label) {
                Some(i) => i,
                None => {
                    names.push(label);
                    names.len() - 1
                }
            };
            prompt_to_attr.push(idx);
        }
        if names.len() < 2 {
            bail!("need at least two distinct attributes, found {}", names.len());
        }
        let by_prompt = classify_attributes(&emb, &prompts_sel, &[])?;
        let per_item: Vec<Option<usize>> = by_prompt
            .per_item
            .iter()
            .map(|p| p.map(|j| prompt_to_attr[j]))
            .collect();
        let dist = AttributeDistribution::from_assignments(&per_item, names.clone())?;
        families.push(("predicted".to_string(), dist));
        assignments = Some(Assignments {
            attribute_names: names,
            per_item,
        });
    } else {
        let path = labels_path(images);
        if !path.exists() {
            bail!("pass --attributes or provide {}", path.display());
        }
        let sidecar: LabelsSidecar = read_json(&path)?;
        if sidecar.a.len() != emb.count() {
            bail!("labels cover {} items, embeddings {}", sidecar.a.len(), emb.count());
        }
        let labelled = |values: &[usize]| -> Vec<Option<usize>> { values.iter().map(|&a| Some(a)).collect() };
        families.push((
            "attribute".to_string(),
            AttributeDistribution::from_assignments(&labelled(&sidecar.a), sidecar.attribute_names.clone())?,
        ));
        for (name, fam) in &sidecar.families {
            families.push((
                name.clone(),
                AttributeDistribution::from_assignments(&labelled(&fam.values), fam.names.clone())?,
            ));
        }
    }

    let mut report = Report {
        items: emb.count(),
        families: Vec::new(),
    };
    for (family, distribution) in families {
        let value = discrepancy(&distribution)?;
        report.families.push(FamilyReport {
            family,
            frequencies: distribution.frequencies(),
            distribution,
            discrepancy: value,
        });
    }

    print!("{}", table(&report));
    if let Some(out) = &s.out {
        if let Some(a) = &assignments {
            super::write_json_file(&out_path(out, ".assignments.json"), a)?;
        }
        write_report(out, &report)?;
    }
    Ok(Outcome::Success)
}

fn table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12}  {:>8}  {:>8}  {:>11}  counts", "family", "items", "excluded", "discrepancy");
    for f in &report.families {
        let counts: Vec<String> = f
            .distribution
            .attribute_names
            .iter()
            .zip(&f.distribution.counts)
            .map(|(n, c)| format!("{n}={c}"))
            .collect();
        let _ = writeln!(
            out,
            "{:<12}  {:>8}  {:>8}  {:>11.6}  {}",
            f.family,
            f.distribution.total(),
            f.distribution.excluded,
            f.discrepancy,
            counts.join(" ")
        );
    }
    out
}
