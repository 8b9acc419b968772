use anyhow::{Context, Result};
use debias_core::embedding_io::{binary_path, load_projection, save_embeddings};
use debias_core::projection::apply_projection;

use super::{load_prompts, Outcome};
use crate::config::Settings;

pub fn run(s: &Settings) -> Result<Outcome> {
    let proj = s.require(&s.projection, "projection")?;
    let input = s.require(&s.input, "input")?;
    let out = s.require(&s.out, "out")?;
    let (meta, result) =
        load_projection(proj).with_context(|| format!("loading projection {}", proj.display()))?;
    let (manifest, emb) = load_prompts(input)?;
    let renormalize = s.renormalize.unwrap_or(meta.renormalize);
    let projected = apply_projection(&emb, &result.p_star, renormalize)?;
    save_embeddings(&projected.embeddings, &manifest, out)?;

    println!("entries         {}", emb.count());
    println!("renormalized    {renormalize}");
    if projected.zero_columns.is_empty() {
        println!("annihilated     0");
    } else {
        let ids: Vec<&str> = projected
            .zero_columns
            .iter()
            .map(|&j| manifest.entries[j].id.as_str())
            .collect();
        println!("annihilated     {} ({})", ids.len(), ids.join(", "));
    }
    println!("wrote           {}", binary_path(out).display());
    Ok(Outcome::Success)
}
