//! Little-endian binary formats for feature matrices and label vectors.
//!
//! Feature file: `SADV`, version `u32 = 1`, rows `u64`, cols `u64`, then
//! `rows * cols` `f32` values row-major. Label file: `SADL`, version `u32 = 1`,
//! count `u64`, then `count` `u32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMatrix;

pub const FEATURE_MAGIC: [u8; 4] = *b"SADV";
pub const LABEL_MAGIC: [u8; 4] = *b"SADL";
pub const FORMAT_VERSION: u32 = 1;

/// Sequential little-endian reader over an in-memory buffer.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Length(format!(
                "need {} bytes at offset {}, only {} available",
                n,
                self.pos,
                self.buf.len() - self.pos
            ))),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Length("payload size overflows".into()))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let got = self
            .take(4)
            .map_err(|_| Error::Format("file too short for magic".into()))?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = self
            .u32()
            .map_err(|_| Error::Format("file too short for version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Length(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn to_count(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Length(format!("count {v} does not fit in memory")))
}

pub fn encode_feature_matrix(matrix: &FeatureMatrix) -> Result<Vec<u8>> {
    if let Some(pos) = matrix.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite value at row {}, col {}",
            pos / matrix.cols().max(1),
            pos % matrix.cols().max(1)
        )));
    }
    let mut out = Vec::with_capacity(24 + matrix.data().len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    for v in matrix.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_feature_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = ByteReader::new(bytes);
    r.header(FEATURE_MAGIC)?;
    let rows = to_count(r.u64()?)?;
    let cols = to_count(r.u64()?)?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Length(format!("{rows}x{cols} overflows")))?;
    let data = r.f32s(count)?;
    r.finish()?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("feature file contains non-finite values".into()));
    }
    FeatureMatrix::from_vec(rows, cols, data)
}

pub fn read_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_matrix(&bytes)
}

/// Writes `matrix`; nothing is written if it contains a non-finite value.
pub fn write_feature_matrix(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_feature_matrix(matrix)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_labels(labels: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + labels.len() * 4);
    out.extend_from_slice(&LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u32>> {
    let mut r = ByteReader::new(bytes);
    r.header(LABEL_MAGIC)?;
    let count = to_count(r.u64()?)?;
    let raw = r.take(
        count
            .checked_mul(4)
            .ok_or_else(|| Error::Length("label count overflows".into()))?,
    )?;
    r.finish()?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes)
}

pub fn write_labels(labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_matrix_keeps_cols() {
        let m = FeatureMatrix::zeros(0, 7);
        let back = decode_feature_matrix(&encode_feature_matrix(&m).unwrap()).unwrap();
        assert_eq!(back.rows(), 0);
        assert_eq!(back.cols(), 7);
    }

    #[test]
    fn truncated_payload_is_length_error() {
        let m = FeatureMatrix::from_vec(2, 3, vec![1.0; 6]).unwrap();
        let bytes = encode_feature_matrix(&m).unwrap();
        let err = decode_feature_matrix(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Length(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let m = FeatureMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut bytes = encode_feature_matrix(&m).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_feature_matrix(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_feature_matrix(&m).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_feature_matrix(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode_feature_matrix(b"SA"), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_is_data_error() {
        let m = FeatureMatrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_feature_matrix(&m).unwrap();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_feature_matrix(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn writing_nan_fails_without_creating_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sadv");
        let m = FeatureMatrix::from_vec(1, 2, vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(write_feature_matrix(&m, &path), Err(Error::Data(_))));
        assert!(!path.exists());
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = FeatureMatrix::from_vec(2, 1, vec![1.0, -2.0]).unwrap();
        let bytes = encode_feature_matrix(&m).unwrap();
        assert_eq!(&bytes[0..4], b"SADV");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn truncated_labels_are_length_errors() {
        let bytes = encode_labels(&[1, 2, 3]);
        assert!(matches!(decode_labels(&bytes[..bytes.len() - 2]), Err(Error::Length(_))));
    }

    proptest! {
        #[test]
        fn feature_round_trip_is_bit_exact(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut state = seed;
            let data: Vec<f32> = (0..rows * cols).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((state >> 33) as u32) & 0x7f7f_ffff) * if state & 1 == 0 { 1.0 } else { -1.0 }
            }).collect();
            let m = FeatureMatrix::from_vec(rows, cols, data).unwrap();
            let bytes = encode_feature_matrix(&m).unwrap();
            let back = decode_feature_matrix(&bytes).unwrap();
            prop_assert_eq!(back.rows(), rows);
            prop_assert_eq!(back.cols(), cols);
            let same_bits = back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(encode_feature_matrix(&back).unwrap(), bytes);
        }

        #[test]
        fn label_round_trip(labels in proptest::collection::vec(any::<u32>(), 0..40)) {
            prop_assert_eq!(decode_labels(&encode_labels(&labels)).unwrap(), labels);
        }
    }
}
