//! `.svt` tensor files: magic, version, dtype, rank, extents, row-major data.

use std::path::{Path, PathBuf};

use swtensor::{numel, DType, Element, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SVTENSOR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum SvtData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl SvtData {
    pub fn dtype(&self) -> DType {
        match self {
            SvtData::U8(_) => DType::U8,
            SvtData::F32(_) => DType::F32,
            SvtData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SvtData::U8(v) => v.len(),
            SvtData::F32(v) => v.len(),
            SvtData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvtTensor {
    pub shape: Vec<usize>,
    pub data: SvtData,
}

impl SvtTensor {
    pub fn u8(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        check_len(shape, data.len())?;
        Ok(SvtTensor {
            shape: shape.to_vec(),
            data: SvtData::U8(data),
        })
    }

    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => SvtData::F32(t.data().iter().map(|v| v.to_f32().unwrap()).collect()),
            _ => SvtData::F64(t.data().iter().map(|v| v.to_f64().unwrap()).collect()),
        };
        SvtTensor {
            shape: t.shape().to_vec(),
            data,
        }
    }

    /// Converts float data to a tensor of element type `T`; exact when dtypes agree.
    pub fn to_tensor<T: Element>(&self) -> Result<Tensor<T>> {
        let v: Vec<T> = match &self.data {
            SvtData::U8(_) => return Err(Error::Format("expected a float tensor, found u8".into())),
            SvtData::F32(v) => v.iter().map(|&x| T::c(x as f64)).collect(),
            SvtData::F64(v) => v.iter().map(|&x| T::c(x)).collect(),
        };
        Ok(Tensor::new(&self.shape, v)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        encode_body(&mut out, &self.shape, &self.data);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8).ok() != Some(&MAGIC[..]) {
            return Err(Error::BadMagic { path: path.into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                path: path.into(),
                version,
            });
        }
        let t = decode_body(&mut r)?;
        if r.remaining() != 0 {
            return Err(Error::SizeMismatch {
                path: path.into(),
                expected: r.pos as u64,
                actual: bytes.len() as u64,
            });
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SvtTensor::decode(&bytes, path)
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    if numel(shape) != len {
        return Err(Error::Dimension(format!(
            "shape {shape:?} needs {} values, got {len}",
            numel(shape)
        )));
    }
    Ok(())
}

/// dtype, rank, extents and data, shared with the checkpoint format.
pub(crate) fn encode_body(out: &mut Vec<u8>, shape: &[usize], data: &SvtData) {
    out.push(data.dtype().code());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match data {
        SvtData::U8(v) => out.extend_from_slice(v),
        SvtData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        SvtData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

pub(crate) fn decode_body(r: &mut Reader<'_>) -> Result<SvtTensor> {
    let code = r.u8()?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
    let ndim = r.u8()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u64()? as usize);
    }
    let n = numel(&shape);
    let bytes = r.take(n.checked_mul(dtype.size()).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
    let data = match dtype {
        DType::U8 => SvtData::U8(bytes.to_vec()),
        DType::F32 => SvtData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        DType::F64 => SvtData::F64(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok(SvtTensor { shape, data })
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &Path) -> Self {
        Reader {
            bytes,
            pos: 0,
            path: path.into(),
        }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::SizeMismatch {
                path: self.path.clone(),
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_dtypes() {
        let p = Path::new("mem");
        for t in [
            SvtTensor::u8(&[2, 3], vec![1, 2, 3, 4, 5, 255]).unwrap(),
            SvtTensor {
                shape: vec![3],
                data: SvtData::F32(vec![0.5, -1.25, 3e-8]),
            },
            SvtTensor {
                shape: vec![],
                data: SvtData::F64(vec![std::f64::consts::PI]),
            },
        ] {
            assert_eq!(SvtTensor::decode(&t.encode(), p).unwrap(), t);
        }
    }

    #[test]
    fn header_layout() {
        let b = SvtTensor::u8(&[2], vec![7, 9]).unwrap().encode();
        assert_eq!(&b[..8], b"SVTENSOR");
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(b[12], 0);
        assert_eq!(b[13], 1);
        assert_eq!(&b[14..22], &2u64.to_le_bytes());
        assert_eq!(&b[22..], &[7, 9]);
    }

    #[test]
    fn distinct_error_kinds() {
        let p = Path::new("x.svt");
        let mut b = SvtTensor::u8(&[4], vec![1, 2, 3, 4]).unwrap().encode();
        let trunc = &b[..b.len() - 2];
        match SvtTensor::decode(trunc, p).unwrap_err() {
            Error::SizeMismatch { expected, actual, .. } => {
                assert_eq!((expected, actual), (26, 24));
            }
            e => panic!("unexpected {e}"),
        }
        b[0] = b'X';
        assert!(matches!(SvtTensor::decode(&b, p), Err(Error::BadMagic { .. })));
    }
}
