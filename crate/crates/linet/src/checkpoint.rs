//! Binary checkpoints of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   7 bytes   "LINET\x00\x01"
//! count   u32       number of parameters
//! per parameter:
//!   name_len u32, name UTF-8 bytes
//!   width    u8     element bytes (4 | 8)
//!   rank     u8
//!   extents  rank x u32
//!   data     numel x width, row-major
//! ```
//!
//! Round trips are bit-exact: save then load reproduces every element.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::Forecaster;

const MAGIC: &[u8; 7] = b"LINET\x00\x01";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data(format!(
                "checkpoint truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Serializes named tensors in the order given.
pub fn serialize<T: Scalar>(params: &[(String, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, params.len() as u32);
    for (name, tensor) in params {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        out.push(T::WIDTH);
        out.push(tensor.rank() as u8);
        for &d in tensor.shape() {
            put_u32(&mut out, d as u32);
        }
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Parses a checkpoint back into named tensors.
pub fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(7)? != MAGIC {
        return Err(Error::data("bad checkpoint magic".to_string()));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|e| Error::data(format!("bad parameter name: {e}")))?;
        let width = c.u8()?;
        if width != T::WIDTH {
            return Err(Error::data(format!(
                "parameter {name} stored at {width} bytes/element, expected {}",
                T::WIDTH
            )));
        }
        let rank = c.u8()? as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::data(format!("parameter {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(numel * T::WIDTH as usize)?;
        let data: Vec<T> = raw
            .chunks_exact(T::WIDTH as usize)
            .map(T::read_le)
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::data(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

/// Writes a model checkpoint.
pub fn save<T: Scalar>(path: &Path, model: &Forecaster<T>) -> Result<()> {
    let named = model.named_params();
    let bytes = serialize(&named);
    std::fs::write(path, bytes)
        .map_err(|e| Error::io(format!("cannot write {}: {e}", path.display())))
}

/// Loads a checkpoint into a model with matching parameter names and shapes.
pub fn load_into<T: Scalar>(path: &Path, model: &mut Forecaster<T>) -> Result<()> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io(format!("cannot read {}: {e}", path.display())))?;
    let stored = deserialize::<T>(&bytes)?;
    let mut targets = model.named_params_mut();
    if stored.len() != targets.len() {
        return Err(Error::data(format!(
            "checkpoint holds {} parameters, model expects {}",
            stored.len(),
            targets.len()
        )));
    }
    for ((name, tensor), (want_name, slot)) in stored.into_iter().zip(targets.iter_mut()) {
        if name != *want_name {
            return Err(Error::data(format!(
                "checkpoint parameter {name:?} does not match expected {want_name:?}"
            )));
        }
        if tensor.shape() != slot.shape() {
            return Err(Error::data(format!(
                "parameter {name}: stored shape {:?} does not match model shape {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        **slot = tensor;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::<f64>::new(&[2, 3], vec![1.5, -2.25, 3.125, 0.1, 1e-300, -0.0]).unwrap();
        let b = Tensor::<f64>::from_slice(&[f64::MIN_POSITIVE, 42.0]).unwrap();
        let named = vec![("layer.weight".to_string(), &a), ("layer.bias".to_string(), &b)];
        let bytes = serialize(&named);
        let back = deserialize::<f64>(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "layer.weight");
        assert_eq!(back[0].1.data(), a.data());
        assert_eq!(back[0].1.shape(), a.shape());
        assert_eq!(back[1].1.data(), b.data());
    }

    #[test]
    fn f32_round_trip() {
        let a = Tensor::<f32>::from_slice(&[1.0, -2.5, 3.25e-20]).unwrap();
        let named = vec![("w".to_string(), &a)];
        let back = deserialize::<f32>(&serialize(&named)).unwrap();
        assert_eq!(back[0].1.data(), a.data());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = deserialize::<f64>(b"NOTLINET").unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let a = Tensor::<f32>::from_slice(&[1.0]).unwrap();
        let bytes = serialize(&[("w".to_string(), &a)]);
        assert!(deserialize::<f64>(&bytes).is_err());
    }

    #[test]
    fn truncation_is_detected() {
        let a = Tensor::<f64>::from_slice(&[1.0, 2.0]).unwrap();
        let bytes = serialize(&[("w".to_string(), &a)]);
        assert!(deserialize::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}
