pub mod apply;
pub mod build;
pub mod discrepancy;
pub mod generative;
pub mod groups;
pub mod skew;
pub mod verify;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use debias_core::embedding_io::{self, select_role, EmbeddingMatrix, ManifestEntry, PromptManifest, Role};
use debias_core::projection::prepare_prompts;
use serde::Serialize;

pub const DISCRIMINATIVE_LAMBDA: f64 = 1000.0;
pub const GENERATIVE_LAMBDA: f64 = 500.0;
pub const DEFAULT_K: usize = 1000;

pub enum Outcome {
    Success,
    ChecksFailed,
}

/// Loads a prompt set and applies the ingestion normalization for its encoder.
pub fn load_prompts(prefix: &Path) -> Result<(PromptManifest, EmbeddingMatrix)> {
    let (manifest, matrix) = load_raw(prefix)?;
    let matrix = prepare_prompts(&matrix, &manifest.encoder_tag);
    Ok((manifest, matrix))
}

pub fn load_raw(prefix: &Path) -> Result<(PromptManifest, EmbeddingMatrix)> {
    embedding_io::load_prefix(prefix).with_context(|| format!("loading {}", prefix.display()))
}

pub fn role(
    manifest: &PromptManifest,
    matrix: &EmbeddingMatrix,
    role: Role,
) -> Result<(Vec<ManifestEntry>, EmbeddingMatrix)> {
    Ok(select_role(manifest, matrix, role)?)
}

pub fn out_path(prefix: &Path, suffix: &str) -> PathBuf {
    embedding_io::with_suffix(prefix, suffix)
}

pub fn write_report<T: Serialize>(prefix: &Path, value: &T) -> Result<PathBuf> {
    let path = out_path(prefix, ".report.json");
    embedding_io::write_json(&path, value)?;
    Ok(path)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(embedding_io::write_atomic(path, text.as_bytes())?)
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Ok(embedding_io::write_json(path, value)?)
}
