//! Embedding interchange format.
//!
//! An embedding set `<name>` is stored as two files:
//!
//! * `<name>.manifest.json`: a [`PromptManifest`] describing each column;
//! * `<name>.f32`: little-endian binary32 values, entry after entry (entry 0's
//!   `dim` floats, then entry 1's, ...).
//!
//! Grouped evaluation sets add `<name>.labels.json` ([`LabelsSidecar`]) and
//! projections are stored as `<name>.proj.f32` + `<name>.proj.json`.

mod grouped;
mod manifest;
mod matrix;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use grouped::{AttributeFamily, GroupedEvalSet, LabelsSidecar};
pub use manifest::{ManifestEntry, PromptManifest, Role};
pub use matrix::EmbeddingMatrix;

use crate::error::{Error, Result};
use crate::projection::{PositivePairSet, ProjectionResult};

/// `<prefix><suffix>` without touching any existing extension of `prefix`.
pub fn with_suffix(prefix: impl AsRef<Path>, suffix: &str) -> PathBuf {
    let mut s: OsString = prefix.as_ref().as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".manifest.json")
}

pub fn binary_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".f32")
}

pub fn labels_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".labels.json")
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<PromptManifest> {
    let manifest: PromptManifest = read_json(path)?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a manifest and its binary payload.
///
/// The dimension comes from the manifest's `dim` when present, otherwise it is
/// inferred from the payload length. Any length mismatch is an error.
pub fn load_embeddings(
    manifest_path: impl AsRef<Path>,
    binary_path: impl AsRef<Path>,
) -> Result<(PromptManifest, EmbeddingMatrix)> {
    let manifest = read_manifest(manifest_path)?;
    let binary_path = binary_path.as_ref();
    let bytes = std::fs::read(binary_path).map_err(|e| Error::io(binary_path, e))?;
    let count = manifest.len();
    let dim = match manifest.dim {
        Some(d) => d,
        None if count == 0 => {
            return Err(Error::Manifest(
                "an empty manifest must declare dim".to_string(),
            ))
        }
        None => {
            let per_entry = bytes.len() / count;
            if per_entry * count != bytes.len() || per_entry % 4 != 0 {
                return Err(Error::SizeMismatch {
                    expected: ((per_entry / 4).max(1) * count * 4) as u64,
                    found: bytes.len() as u64,
                });
            }
            per_entry / 4
        }
    };
    let matrix = EmbeddingMatrix::from_f32_le(dim, count, &bytes)?;
    Ok((manifest, matrix))
}

/// Loads `<prefix>.manifest.json` + `<prefix>.f32`.
pub fn load_prefix(prefix: impl AsRef<Path>) -> Result<(PromptManifest, EmbeddingMatrix)> {
    let prefix = prefix.as_ref();
    load_embeddings(manifest_path(prefix), binary_path(prefix))
}

/// Writes `<out_prefix>.manifest.json` and `<out_prefix>.f32`.
pub fn save_embeddings(
    matrix: &EmbeddingMatrix,
    manifest: &PromptManifest,
    out_prefix: impl AsRef<Path>,
) -> Result<()> {
    if matrix.dim() == 0 {
        return Err(Error::ZeroDimension);
    }
    if matrix.count() != manifest.len() {
        return Err(Error::CountMismatch {
            matrix: matrix.count(),
            manifest: manifest.len(),
        });
    }
    manifest.validate()?;
    let mut manifest = manifest.clone();
    manifest.dim = Some(matrix.dim());
    let out_prefix = out_prefix.as_ref();
    write_atomic(binary_path(out_prefix), &matrix.to_f32_le())?;
    write_json(manifest_path(out_prefix), &manifest)
}

/// Loads an embedding set together with its `.labels.json` sidecar.
pub fn load_grouped(prefix: impl AsRef<Path>) -> Result<(PromptManifest, GroupedEvalSet, LabelsSidecar)> {
    let prefix = prefix.as_ref();
    let (manifest, matrix) = load_prefix(prefix)?;
    let sidecar: LabelsSidecar = read_json(labels_path(prefix))?;
    let set = GroupedEvalSet::from_sidecar(matrix, &sidecar)?;
    for (name, fam) in &sidecar.families {
        if fam.values.len() != set.len() {
            return Err(Error::Invalid(format!(
                "attribute family {name:?} has {} values for {} items",
                fam.values.len(),
                set.len()
            )));
        }
    }
    Ok((manifest, set, sidecar))
}

/// Collects positive pairs, ordered lexicographically by `pair_id`.
pub fn extract_pairs(manifest: &PromptManifest, matrix: &EmbeddingMatrix) -> Result<PositivePairSet> {
    if matrix.count() != manifest.len() {
        return Err(Error::CountMismatch {
            matrix: matrix.count(),
            manifest: manifest.len(),
        });
    }
    let members = manifest.pair_members()?;
    let pairs = members
        .values()
        .map(|&(l, r)| (matrix.column(l).into_owned(), matrix.column(r).into_owned()))
        .collect();
    PositivePairSet::new(matrix.dim(), pairs)
}

/// Columns whose manifest entry has `role`, along with the matching entries.
pub fn select_role(
    manifest: &PromptManifest,
    matrix: &EmbeddingMatrix,
    role: Role,
) -> Result<(Vec<ManifestEntry>, EmbeddingMatrix)> {
    if matrix.count() != manifest.len() {
        return Err(Error::CountMismatch {
            matrix: matrix.count(),
            manifest: manifest.len(),
        });
    }
    let idx = manifest.indices_with_role(role);
    let entries = idx.iter().map(|&i| manifest.entries[i].clone()).collect();
    Ok((entries, matrix.select(&idx)?))
}

/// Metadata stored next to a projection's three matrix blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub dim: usize,
    pub lambda: f64,
    pub pair_count: usize,
    pub skip_p0: bool,
    pub renormalize: bool,
}

pub fn projection_binary_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".proj.f32")
}

pub fn projection_meta_path(prefix: impl AsRef<Path>) -> PathBuf {
    with_suffix(prefix, ".proj.json")
}

/// Writes `p0`, `calibration` and `p_star` (each d×d, row-major f32) to
/// `<prefix>.proj.f32` and the metadata to `<prefix>.proj.json`.
pub fn save_projection(
    result: &ProjectionResult,
    skip_p0: bool,
    renormalize: bool,
    prefix: impl AsRef<Path>,
) -> Result<()> {
    let prefix = prefix.as_ref();
    let d = result.p0.nrows();
    let mut bytes = Vec::with_capacity(3 * d * d * 4);
    for block in [&result.p0, &result.calibration, &result.p_star] {
        for i in 0..d {
            for j in 0..d {
                bytes.extend_from_slice(&(block[(i, j)] as f32).to_le_bytes());
            }
        }
    }
    let meta = ProjectionMeta {
        dim: d,
        lambda: result.lambda,
        pair_count: result.pair_count,
        skip_p0,
        renormalize,
    };
    write_atomic(projection_binary_path(prefix), &bytes)?;
    write_json(projection_meta_path(prefix), &meta)
}

/// Reads a projection back; values are widened from f32.
pub fn load_projection(prefix: impl AsRef<Path>) -> Result<(ProjectionMeta, ProjectionResult)> {
    let prefix = prefix.as_ref();
    let meta: ProjectionMeta = read_json(projection_meta_path(prefix))?;
    let d = meta.dim;
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    let path = projection_binary_path(prefix);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = 3 * (d as u64) * (d as u64) * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        let within = pos % (d * d);
        return Err(Error::NonFinite {
            column: within % d,
            row: within / d,
        });
    }
    let block = |k: usize| DMatrix::from_row_slice(d, d, &values[k * d * d..(k + 1) * d * d]);
    let result = ProjectionResult {
        p0: block(0),
        calibration: block(1),
        p_star: block(2),
        lambda: meta.lambda,
        pair_count: meta.pair_count,
        lambda_prime: crate::projection::lambda_prime(meta.lambda, meta.pair_count),
    };
    Ok((meta, result))
}
