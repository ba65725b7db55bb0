//! The `FMAT` feature-matrix container.
//!
//! Layout: magic `PGCNFMAT` (8 bytes), rows (u32 LE), cols (u32 LE), then
//! `rows * cols` little-endian f32 values in row-major order.

use std::path::Path;

use crate::error::{Error, Result};

pub const FMAT_MAGIC: &[u8; 8] = b"PGCNFMAT";
const HEADER_LEN: usize = 16;

/// Per-patch feature vectors, one row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "feature_matrix",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Stacks matrices vertically. All inputs must share a column count.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut iter = parts.into_iter().peekable();
        let cols = iter.peek().map_or(0, |m| m.cols);
        let mut rows = 0;
        let mut data = Vec::new();
        for m in iter {
            if m.cols != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    left: (rows, cols),
                    right: (m.rows, m.cols),
                });
            }
            rows += m.rows;
            data.extend_from_slice(&m.data);
        }
        Ok(Self { rows, cols, data })
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FMAT_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..8] != FMAT_MAGIC {
            return Err(Error::Format("bad FMAT magic bytes".into()));
        }
        let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Format(format!("FMAT header {rows}x{cols} overflows")))?;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format(format!(
                "FMAT payload has {} trailing bytes",
                bytes.len() - expected
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, cols, data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    FeatureMatrix::read(path)
}

pub fn write_feature_matrix(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    matrix.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fmat");
        let m = FeatureMatrix::new(3, 4, (0..12).map(|v| v as f32 * 0.5 - 2.0).collect()).unwrap();
        write_feature_matrix(&m, &path).unwrap();
        assert_eq!(read_feature_matrix(&path).unwrap(), m);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"PGCNFMAT");
        assert_eq!(&bytes[8..16], &[3, 0, 0, 0, 4, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 48);
    }

    #[test]
    fn truncated_payload() {
        let m = FeatureMatrix::new(3, 4, vec![1.0; 12]).unwrap();
        let bytes = m.to_bytes();
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::Truncated { expected: 64, found: 60 })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = FeatureMatrix::zeros(1, 1).to_bytes();
        bytes[0] = b'X';
        assert!(matches!(FeatureMatrix::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload() {
        let mut bytes = FeatureMatrix::zeros(2, 2).to_bytes();
        bytes[16 + 12..16 + 16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeatureMatrix::from_bytes(&bytes),
            Err(Error::NonFinite { row: 1, col: 1 })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(rows in 0usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 7) as u32 & 0xff7f_ffff))
                .collect();
            let m = FeatureMatrix::new(rows, cols, data).unwrap();
            let back = FeatureMatrix::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
