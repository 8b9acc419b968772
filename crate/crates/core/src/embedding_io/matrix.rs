use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};

/// A d×n column stack of embeddings held in f64.
///
/// Column `i` is the embedding of entry `i`. Values are always finite and
/// `dim >= 1`; `count` may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::ZeroDimension);
        }
        check_finite(&data)?;
        Ok(Self { data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(dim, 0))
    }

    pub fn from_columns(dim: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        for c in columns {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        Self::new(DMatrix::from_vec(dim, columns.len(), flat))
    }

    pub fn from_vectors(dim: usize, columns: &[DVector<f64>]) -> Result<Self> {
        let cols: Vec<Vec<f64>> = columns.iter().map(|c| c.iter().copied().collect()).collect();
        Self::from_columns(dim, &cols)
    }

    /// Decodes a little-endian f32 payload laid out entry after entry.
    pub fn from_f32_le(dim: usize, count: usize, bytes: &[u8]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        let expected = (dim as u64) * (count as u64) * 4;
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
        Self::new(DMatrix::from_vec(dim, count, values))
    }

    /// Encodes to the on-disk payload, rounding each value to f32.
    pub fn to_f32_le(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in self.data.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Columns at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.count()) {
            return Err(Error::OutOfRange {
                what: "embedding column",
                index: bad,
                size: self.count(),
            });
        }
        Ok(Self {
            data: self.data.select_columns(indices),
        })
    }

    /// Scales every nonzero column to unit L2 norm; zero columns stay zero.
    pub fn normalized(&self) -> Self {
        let mut data = self.data.clone();
        for mut col in data.column_iter_mut() {
            let n = col.norm();
            if n > 0.0 {
                col /= n;
            }
        }
        Self { data }
    }
}

fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    for (j, col) in data.column_iter().enumerate() {
        if let Some(i) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { column: j, row: i });
        }
    }
    Ok(())
}
