use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use debias_core::embedding_io::{extract_pairs, load_grouped, load_projection, EmbeddingMatrix};
use debias_core::projection::{calibrated_projection, orthogonal_projection, SpuriousBasis};
use debias_core::zeroshot::{bias_probe, build_classifier, group_report, BiasProbe, GroupReport};
use debias_core::Role;
use nalgebra::DMatrix;
use serde::Serialize;

use super::{csv_field, load_prompts, out_path, role, write_report, write_text, Outcome, DISCRIMINATIVE_LAMBDA};
use crate::config::Settings;

#[derive(Debug, Serialize)]
struct Row {
    method: String,
    lambda: Option<f64>,
    #[serde(flatten)]
    report: GroupReport,
    #[serde(skip)]
    probe: Option<BiasProbe>,
}

#[derive(Debug, Serialize)]
struct Report {
    classes: Vec<String>,
    attributes: Vec<String>,
    rows: Vec<Row>,
}

/// Method, λ and projection; no projection is the undebiased classifier.
type Variant = (&'static str, Option<f64>, Option<DMatrix<f64>>);

fn label(method: &str, lambda: Option<f64>) -> String {
    match lambda {
        Some(l) => format!("{method} lambda={l}"),
        None => method.to_string(),
    }
}

/// Class prompt columns reordered to match the sidecar's class indices.
fn class_matrix(
    entries: &[debias_core::ManifestEntry],
    emb: &EmbeddingMatrix,
    class_names: &[String],
) -> Result<EmbeddingMatrix> {
    let mut order = Vec::with_capacity(class_names.len());
    for name in class_names {
        let found: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.class_label.as_deref() == Some(name.as_str()))
            .map(|(i, _)| i)
            .collect();
        match found.as_slice() {
            [i] => order.push(*i),
            [] => bail!("no class prompt with class_label {name:?}"),
            _ => bail!("several class prompts with class_label {name:?}"),
        }
    }
    Ok(emb.select(&order)?)
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let prompts = s.require(&s.prompts, "prompts")?;
    let images = s.require(&s.images, "images")?;
    let renormalize = s.renormalize.unwrap_or(true);

    let (manifest, emb) = load_prompts(prompts)?;
    let (_, eval_set, sidecar) =
        load_grouped(images).with_context(|| format!("loading {}", images.display()))?;
    let (class_entries, class_emb) = role(&manifest, &emb, Role::Class)?;
    let classes = class_matrix(&class_entries, &class_emb, &sidecar.class_names)?;
    if classes.dim() != eval_set.embeddings().dim() {
        bail!(
            "prompt dim {} does not match image dim {}",
            classes.dim(),
            eval_set.embeddings().dim()
        );
    }
    let (spurious_entries, spurious) = role(&manifest, &emb, Role::Spurious)?;
    let spurious_names: Vec<String> = spurious_entries.iter().map(|e| e.text.clone()).collect();

    let mut variants: Vec<Variant> = vec![("zero-shot", None, None)];
    if let Some(proj) = &s.projection {
        if s.lambdas.is_some() {
            bail!("lambda is fixed by the projection file; drop --lambda or --projection");
        }
        let (meta, result) =
            load_projection(proj).with_context(|| format!("loading projection {}", proj.display()))?;
        if meta.skip_p0 {
            variants.push(("cali-only", Some(meta.lambda), Some(result.p_star)));
        } else {
            variants.push(("orth-proj", None, Some(result.p0)));
            variants.push(("orth-cali", Some(meta.lambda), Some(result.p_star)));
        }
    } else {
        let skip_p0 = s.skip_p0.unwrap_or(false);
        let p0 = if skip_p0 {
            DMatrix::identity(emb.dim(), emb.dim())
        } else {
            if spurious.count() == 0 {
                bail!("{} has no spurious entries (pass --skip-p0 for calibration only)", prompts.display());
            }
            let p0 = orthogonal_projection(&SpuriousBasis::from_embeddings(&spurious)?);
            variants.push(("orth-proj", None, Some(p0.clone())));
            p0
        };
        let pairs = extract_pairs(&manifest, &emb)?;
        if pairs.is_empty() {
            bail!("{} has no pair_left/pair_right entries", prompts.display());
        }
        let method = if skip_p0 { "cali-only" } else { "orth-cali" };
        for lambda in s.lambdas_or(DISCRIMINATIVE_LAMBDA) {
            let result = calibrated_projection(&p0, &pairs, lambda)?;
            variants.push((method, Some(lambda), Some(result.p_star)));
        }
    }

    let mut rows = Vec::with_capacity(variants.len());
    for (method, lambda, proj) in variants {
        let name = label(method, lambda);
        let mut weights = build_classifier(&classes, &sidecar.class_names, proj.as_ref(), renormalize)
            .map_err(|e| anyhow!("{name}: {e}"))?;
        if let Some(l) = lambda {
            weights = weights.with_lambda(l);
        }
        let report = group_report(&weights, &eval_set).map_err(|e| anyhow!("{name}: {e}"))?;
        let probe = if spurious.count() > 0 {
            Some(bias_probe(&weights, &spurious, &spurious_names)?)
        } else {
            None
        };
        rows.push(Row {
            method: method.to_string(),
            lambda,
            report,
            probe,
        });
    }

    print!("{}", table(&rows));
    if let Some(out) = &s.out {
        if rows.iter().any(|r| r.probe.is_some()) {
            write_text(&out_path(out, ".probe.csv"), &probe_csv(&rows))?;
        }
        let report = Report {
            classes: sidecar.class_names.clone(),
            attributes: sidecar.attribute_names.clone(),
            rows,
        };
        write_report(out, &report)?;
    }
    Ok(Outcome::Success)
}

/// Worst-group, average and gap in percent, one line per method.
fn table(rows: &[Row]) -> String {
    let width = rows
        .iter()
        .map(|r| label(&r.method, r.lambda).len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:>7}  {:>8}", "method", "WG", "Avg", "Gap", "excluded");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>8}",
            label(&r.method, r.lambda),
            100.0 * r.report.worst_group,
            100.0 * r.report.average,
            100.0 * r.report.gap,
            r.report.excluded_count
        );
    }
    out
}

fn probe_csv(rows: &[Row]) -> String {
    let mut out = String::new();
    let mut header_done = false;
    for r in rows {
        let Some(p) = &r.probe else { continue };
        if !header_done {
            out.push_str("method,class");
            for n in &p.spurious_names {
                out.push(',');
                out.push_str(&csv_field(n));
            }
            out.push('\n');
            header_done = true;
        }
        let name = label(&r.method, r.lambda);
        for (class, values) in p.class_names.iter().zip(&p.values) {
            let _ = write!(out, "{},{}", csv_field(&name), csv_field(class));
            for v in values {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
    }
    out
}
