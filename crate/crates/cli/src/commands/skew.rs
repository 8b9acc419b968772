use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use debias_core::embedding_io::{load_grouped, load_projection, EmbeddingMatrix};
use debias_core::fairness::{max_skew, mean_max_skew, rank_by_query, RankedList};
use debias_core::Role;
use nalgebra::DMatrix;
use serde::Serialize;

use super::{csv_field, load_prompts, out_path, role, write_report, write_text, Outcome, DEFAULT_K};
use crate::config::Settings;

#[derive(Debug, Serialize)]
struct QuerySkew {
    query: String,
    max_skew: f64,
}

#[derive(Debug, Serialize)]
struct FamilySkew {
    family: String,
    attributes: Vec<String>,
    per_query: Vec<QuerySkew>,
    mean: f64,
}

#[derive(Debug, Serialize)]
struct Variant {
    name: String,
    families: Vec<FamilySkew>,
}

#[derive(Debug, Serialize)]
struct Report {
    k: usize,
    variants: Vec<Variant>,
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let queries_path = s.require(&s.queries, "queries")?;
    let images = s.require(&s.images, "images")?;
    let k = s.k.unwrap_or(DEFAULT_K);

    let (manifest, emb) = load_prompts(queries_path)?;
    let (mut entries, mut queries) = role(&manifest, &emb, Role::Query)?;
    if entries.is_empty() {
        // a manifest without role tags for queries: every entry is a query
        entries = manifest.entries.clone();
        queries = emb;
    }
    if entries.is_empty() {
        bail!("{} has no queries", queries_path.display());
    }
    let (_, set, sidecar) = load_grouped(images).with_context(|| format!("loading {}", images.display()))?;
    if queries.dim() != set.embeddings().dim() {
        bail!("query dim {} does not match image dim {}", queries.dim(), set.embeddings().dim());
    }

    let mut families: Vec<(String, Vec<String>, Vec<usize>)> =
        vec![("attribute".to_string(), sidecar.attribute_names.clone(), sidecar.a.clone())];
    for (name, fam) in &sidecar.families {
        families.push((name.clone(), fam.names.clone(), fam.values.clone()));
    }

    let mut variants = vec![("original".to_string(), None)];
    if let Some(proj) = &s.projection {
        let (_, result) = load_projection(proj).with_context(|| format!("loading projection {}", proj.display()))?;
        variants.push(("debiased".to_string(), Some(result.p_star)));
    }

    let mut out_variants = Vec::new();
    for (name, proj) in variants {
        let q = project(&queries, proj.as_ref())?;
        let mut fams = Vec::new();
        for (family, attributes, values) in &families {
            let mut per_query = Vec::with_capacity(entries.len());
            for (j, entry) in entries.iter().enumerate() {
                let ranked = rank_by_query(&q.column(j).into_owned(), set.embeddings(), k)
                    .with_context(|| format!("query {:?}", entry.id))?;
                let ranked = RankedList::new(ranked, values)?;
                per_query.push(QuerySkew {
                    query: entry.class_label.clone().unwrap_or_else(|| entry.id.clone()),
                    max_skew: max_skew(&ranked, attributes.len(), k)?,
                });
            }
            let skews: Vec<f64> = per_query.iter().map(|p| p.max_skew).collect();
            fams.push(FamilySkew {
                family: family.clone(),
                attributes: attributes.clone(),
                mean: mean_max_skew(&skews).unwrap_or(0.0),
                per_query,
            });
        }
        out_variants.push(Variant { name, families: fams });
    }

    let report = Report {
        k,
        variants: out_variants,
    };
    print!("{}", table(&report));
    if let Some(out) = &s.out {
        write_text(&out_path(out, ".skew.csv"), &csv(&report))?;
        write_report(out, &report)?;
    }
    Ok(Outcome::Success)
}

/// Queries mapped through the projection; ranking only looks at directions.
fn project(queries: &EmbeddingMatrix, proj: Option<&DMatrix<f64>>) -> Result<EmbeddingMatrix> {
    match proj {
        None => Ok(queries.clone()),
        Some(p) => {
            if p.nrows() != queries.dim() {
                bail!("projection dim {} does not match query dim {}", p.nrows(), queries.dim());
            }
            Ok(EmbeddingMatrix::new(p * queries.as_matrix())?)
        }
    }
}

fn table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "MaxSkew@{}", report.k);
    let _ = writeln!(out, "{:<10}  {:<12}  {:>8}", "variant", "family", "mean");
    for v in &report.variants {
        for f in &v.families {
            let _ = writeln!(out, "{:<10}  {:<12}  {:>8.4}", v.name, f.family, f.mean);
        }
    }
    out
}

fn csv(report: &Report) -> String {
    let mut out = String::from("variant,family,query,max_skew\n");
    for v in &report.variants {
        for f in &v.families {
            for q in &f.per_query {
                let _ = writeln!(out, "{},{},{},{:.9}", v.name, csv_field(&f.family), csv_field(&q.query), q.max_skew);
            }
        }
    }
    out
}
