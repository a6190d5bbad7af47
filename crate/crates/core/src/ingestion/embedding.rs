//! Row-aligned embedding matrices and the `RVHE` binary container.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RVHE"
//! 4       4     u32 version (= 1)
//! 8       4     u32 count
//! 12      4     u32 dim
//! 16      4*count*dim  f32 row-major payload
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::math;

pub const RVHE_MAGIC: &[u8; 4] = b"RVHE";
pub const RVHE_VERSION: u32 = 1;
pub const RVHE_HEADER_LEN: usize = 16;

const UNIT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowWarning {
    /// The row is all zeros (e.g. empty text).
    ZeroVector,
    /// The row is non-zero but not unit length.
    NotUnitNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    warnings: Vec<Option<RowWarning>>,
}

impl EmbeddingMatrix {
    /// L2-normalizes every row and stores it at `f32` precision. Zero rows
    /// stay zero and carry [`RowWarning::ZeroVector`].
    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut warnings = Vec::with_capacity(rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("embedding row"));
            }
            let mut v = row.to_vec();
            let nonzero = math::normalize_in_place(&mut v);
            warnings.push((!nonzero).then_some(RowWarning::ZeroVector));
            data.extend(v.iter().map(|&x| x as f32));
        }
        Ok(EmbeddingMatrix {
            dim,
            data,
            warnings,
        })
    }

    /// Wraps stored values as-is, flagging rows that are zero or off the unit
    /// sphere.
    fn from_stored(dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding payload"));
        }
        let warnings = data
            .chunks_exact(dim)
            .map(|row| {
                let n = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
                if n == 0.0 {
                    Some(RowWarning::ZeroVector)
                } else if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    Some(RowWarning::NotUnitNorm)
                } else {
                    None
                }
            })
            .collect();
        Ok(EmbeddingMatrix {
            dim,
            data,
            warnings,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.warnings.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    /// Rows at `indices`, widened to `f64`.
    pub fn gather(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.row_f64(i)).collect()
    }

    pub fn warning(&self, i: usize) -> Option<RowWarning> {
        self.warnings[i]
    }

    pub fn warning_count(&self) -> usize {
        self.warnings.iter().filter(|w| w.is_some()).count()
    }

    pub fn as_f32_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RVHE_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(RVHE_MAGIC);
        out.extend_from_slice(&RVHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedFile {
                needed: RVHE_HEADER_LEN,
                available: bytes.len(),
            });
        }
        if &bytes[..4] != RVHE_MAGIC {
            return Err(Error::BadMagic { expected: "RVHE" });
        }
        if bytes.len() < RVHE_HEADER_LEN {
            return Err(Error::TruncatedFile {
                needed: RVHE_HEADER_LEN,
                available: bytes.len(),
            });
        }
        let version = read_u32(bytes, 4);
        if version != RVHE_VERSION {
            return Err(Error::VersionMismatch {
                expected: RVHE_VERSION,
                found: version,
            });
        }
        let count = read_u32(bytes, 8) as usize;
        let dim = read_u32(bytes, 12) as usize;
        if dim == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "embedding dim is zero".into(),
            });
        }
        let needed = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(RVHE_HEADER_LEN))
            .ok_or(Error::TruncatedFile {
                needed: usize::MAX,
                available: bytes.len(),
            })?;
        if bytes.len() < needed {
            return Err(Error::TruncatedFile {
                needed,
                available: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(Error::TrailingBytes(bytes.len() - needed));
        }
        let data = bytes[RVHE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_stored(dim, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}
