use std::fmt::Write as _;

use anyhow::{bail, Result};
use debias_core::embedding_io::{binary_path, extract_pairs, save_embeddings, save_projection, EmbeddingMatrix};
use debias_core::fairness::pair_gap;
use debias_core::projection::{
    calibrated_projection, orthogonal_projection, Equalizer, PositivePairSet, SpuriousBasis,
};
use debias_core::Role;
use nalgebra::DMatrix;
use serde::Serialize;

use super::{load_prompts, load_raw, role, write_report, Outcome, GENERATIVE_LAMBDA};
use crate::config::Settings;

#[derive(Debug, Serialize)]
struct Split {
    split: String,
    pairs: usize,
    before: f64,
    after: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    lambda: f64,
    lambda_prime: f64,
    skip_p0: bool,
    renormalize: bool,
    targets: usize,
    zero_columns: Vec<String>,
    pair_gap: Vec<Split>,
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let pairs_path = s.require(&s.pairs, "pairs")?;
    let targets_path = s.require(&s.targets, "targets")?;
    let out = s.require(&s.out, "out")?;
    let lambda = s.single_lambda(GENERATIVE_LAMBDA)?;
    let skip_p0 = s.skip_p0.unwrap_or(true);
    let renormalize = s.renormalize.unwrap_or(false);

    let (manifest, emb) = load_prompts(pairs_path)?;
    let pairs = extract_pairs(&manifest, &emb)?;
    if pairs.is_empty() {
        bail!("{} has no pair_left/pair_right entries", pairs_path.display());
    }
    let heldout = match &s.heldout {
        Some(p) => {
            let (m, e) = load_prompts(p)?;
            let h = extract_pairs(&m, &e)?;
            if h.dim() != pairs.dim() {
                bail!("held-out pair dim {} does not match {}", h.dim(), pairs.dim());
            }
            Some(h)
        }
        None => None,
    };
    // targets are passed through untouched apart from the debiasing itself
    let (target_manifest, targets) = load_raw(targets_path)?;
    if targets.dim() != pairs.dim() {
        bail!("target dim {} does not match pair dim {}", targets.dim(), pairs.dim());
    }

    let d = pairs.dim();
    let p0 = if skip_p0 {
        DMatrix::identity(d, d)
    } else {
        let (_, spurious) = role(&manifest, &emb, Role::Spurious)?;
        if spurious.count() == 0 {
            bail!("{} has no spurious entries for the orthogonal projection", pairs_path.display());
        }
        orthogonal_projection(&SpuriousBasis::from_embeddings(&spurious)?)
    };
    let result = calibrated_projection(&p0, &pairs, lambda)?;

    let mut debiased = Equalizer::new(&pairs, lambda)?.equalize_all(&targets)?.into_matrix();
    if !skip_p0 {
        debiased = &p0 * debiased;
    }
    let mut zero_columns = Vec::new();
    for (j, mut col) in debiased.column_iter_mut().enumerate() {
        let n = col.norm();
        if n == 0.0 {
            zero_columns.push(target_manifest.entries[j].id.clone());
        } else if renormalize {
            col /= n;
        }
    }
    save_embeddings(&EmbeddingMatrix::new(debiased)?, &target_manifest, out)?;
    save_projection(&result, skip_p0, renormalize, out)?;

    let identity = DMatrix::identity(d, d);
    let mut splits = vec![gap_row("train", &identity, &result.p_star, &pairs)?];
    if let Some(h) = &heldout {
        if !h.is_empty() {
            splits.push(gap_row("held-out", &identity, &result.p_star, h)?);
        }
    }
    let report = Report {
        lambda,
        lambda_prime: result.lambda_prime,
        skip_p0,
        renormalize,
        targets: targets.count(),
        zero_columns,
        pair_gap: splits,
    };
    print!("{}", table(&report));
    println!("wrote {}", binary_path(out).display());
    write_report(out, &report)?;
    Ok(Outcome::Success)
}

fn gap_row(split: &str, before: &DMatrix<f64>, after: &DMatrix<f64>, pairs: &PositivePairSet) -> Result<Split> {
    Ok(Split {
        split: split.to_string(),
        pairs: pairs.len(),
        before: pair_gap(before, pairs)?,
        after: pair_gap(after, pairs)?,
    })
}

/// Mean pair distance before and after debiasing, per split.
fn table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pair gap (lambda={})", report.lambda);
    let _ = writeln!(out, "{:<9}  {:>6}  {:>8}  {:>8}", "split", "pairs", "before", "after");
    for s in &report.pair_gap {
        let _ = writeln!(out, "{:<9}  {:>6}  {:>8.4}  {:>8.4}", s.split, s.pairs, s.before, s.after);
    }
    if !report.zero_columns.is_empty() {
        let _ = writeln!(out, "annihilated targets: {}", report.zero_columns.join(", "));
    }
    out
}
