use anyhow::{bail, Result};
use debias_core::embedding_io::{extract_pairs, projection_binary_path, projection_meta_path, save_projection};
use debias_core::projection::{calibrated_projection, orthogonal_projection, SpuriousBasis};
use debias_core::Role;

use super::{load_prompts, role, Outcome, DISCRIMINATIVE_LAMBDA};
use crate::config::Settings;

pub fn run(s: &Settings) -> Result<Outcome> {
    let prompts = s.require(&s.prompts, "prompts")?;
    let out = s.require(&s.out, "out")?;
    let lambda = s.single_lambda(DISCRIMINATIVE_LAMBDA)?;
    let skip_p0 = s.skip_p0.unwrap_or(false);
    let renormalize = s.renormalize.unwrap_or(true);

    let (manifest, emb) = load_prompts(prompts)?;
    let pairs = extract_pairs(&manifest, &emb)?;
    if pairs.is_empty() {
        bail!("{} has no pair_left/pair_right entries", prompts.display());
    }
    let basis = if skip_p0 {
        SpuriousBasis::empty(emb.dim())?
    } else {
        let (_, spurious) = role(&manifest, &emb, Role::Spurious)?;
        if spurious.count() == 0 {
            bail!("{} has no spurious entries (pass --skip-p0 for calibration only)", prompts.display());
        }
        let basis = SpuriousBasis::from_embeddings(&spurious)?;
        if basis.effective_rank() == 0 {
            bail!("spurious embeddings have rank 0");
        }
        basis
    };
    let p0 = orthogonal_projection(&basis);
    let result = calibrated_projection(&p0, &pairs, lambda)?;
    save_projection(&result, skip_p0, renormalize, out)?;

    println!("pairs           {}", result.pair_count);
    if skip_p0 {
        println!("spurious rank   skipped (P0 = I)");
    } else {
        println!("spurious rank   {} of {}", basis.effective_rank(), basis.count());
    }
    println!("lambda          {}", result.lambda);
    println!("lambda'         {}", result.lambda_prime);
    println!("wrote           {}", projection_binary_path(out).display());
    println!("                {}", projection_meta_path(out).display());
    Ok(Outcome::Success)
}
