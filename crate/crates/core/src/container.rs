//! Named-tensor container shared by model and predictor checkpoints.
//!
//! Layout (little-endian): 4-byte magic, `u32` version (1), `u64` tensor
//! count, then for each tensor: `u32` name length, UTF-8 name bytes, `u32`
//! rank, `rank` x `u64` dims, and `prod(dims)` `f32` values.

use std::fs;
use std::path::Path;

use crate::data_io::{to_count, ByteReader, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f32) -> Self {
        Self::new(name, vec![1], vec![v])
    }
}

/// Ordered tensor collection with by-name lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorBundle {
    pub tensors: Vec<NamedTensor>,
}

impl TensorBundle {
    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn push_matrix<T: Real>(&mut self, name: impl Into<String>, m: &Matrix<T>) {
        let data = m.data().iter().map(|v| v.to_f64_lossy() as f32).collect();
        self.push(NamedTensor::new(name, vec![m.rows(), m.cols()], data));
    }

    pub fn push_vector<T: Real>(&mut self, name: impl Into<String>, v: &[T]) {
        let data = v.iter().map(|x| x.to_f64_lossy() as f32).collect();
        self.push(NamedTensor::new(name, vec![v.len()], data));
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name:?}")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix<f32>> {
        let t = self.get(name)?;
        if t.shape.len() != 2 {
            return Err(Error::Format(format!("tensor {name:?} is not a matrix")));
        }
        Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone())
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f32>> {
        let t = self.get(name)?;
        if t.shape.len() != 1 {
            return Err(Error::Format(format!("tensor {name:?} is not a vector")));
        }
        Ok(t.data.clone())
    }

    pub fn scalar(&self, name: &str) -> Result<f32> {
        let v = self.vector(name)?;
        if v.len() != 1 {
            return Err(Error::Format(format!("tensor {name:?} is not a scalar")));
        }
        Ok(v[0])
    }

    pub fn encode(&self, magic: [u8; 4]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(magic)?;
        let count = to_count(r.u64()?)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(to_count(r.u64()?)?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Length(format!("tensor {name:?} size overflows")))?;
            let data = r.f32s(len)?;
            tensors.push(NamedTensor { name, shape, data });
        }
        r.finish()?;
        Ok(Self { tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>, magic: [u8; 4]) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode(magic)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, magic: [u8; 4]) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, magic)
    }
}

/// Encodes a count as an `f32` scalar, refusing values that would not round-trip.
pub(crate) fn count_to_f32(name: &str, v: u64) -> Result<f32> {
    if v > (1 << 24) {
        return Err(Error::Data(format!("{name} = {v} cannot be stored exactly")));
    }
    Ok(v as f32)
}

pub(crate) fn f32_to_count(name: &str, v: f32) -> Result<u64> {
    if !(v >= 0.0 && v.fract() == 0.0 && v <= (1u64 << 24) as f32) {
        return Err(Error::Format(format!("{name} = {v} is not a valid count")));
    }
    Ok(v as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut b = TensorBundle::default();
        b.push(NamedTensor::new("w", vec![2, 2], vec![1.0, 2.0, 3.0, -0.0]));
        b.push(NamedTensor::scalar("t", 2.5));
        b.push(NamedTensor::new("empty", vec![0, 3], vec![]));
        let bytes = b.encode(*b"SADM");
        let back = TensorBundle::decode(&bytes, *b"SADM").unwrap();
        assert_eq!(back.encode(*b"SADM"), bytes);
        assert_eq!(back.scalar("t").unwrap(), 2.5);
        assert!(matches!(
            TensorBundle::decode(&bytes[..bytes.len() - 3], *b"SADM"),
            Err(Error::Length(_))
        ));
        assert!(matches!(
            TensorBundle::decode(&bytes, *b"SADC"),
            Err(Error::Format(_))
        ));
    }
}
