//! Debiasing of vision-language text embeddings by projecting out spurious
//! directions, with a calibration step that keeps paired prompts aligned.

pub mod embedding_io;
pub mod error;
pub mod fairness;
pub mod oracle;
pub mod projection;
pub mod zeroshot;

pub use error::{Error, Result};
pub use embedding_io::{EmbeddingMatrix, GroupedEvalSet, ManifestEntry, PromptManifest, Role};
pub use projection::{PositivePairSet, ProjectionResult, SpuriousBasis};
