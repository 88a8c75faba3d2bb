//! `PMTN` binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `PMTN` |
//! | 1 | version (1) |
//! | 1 | dtype: f64=1, f32=2, u8=3, u16=4 |
//! | 1 | rank r (1..=8) |
//! | 4·r | dims, u32 each |
//! | … | payload, row-major |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PMTN";
pub const VERSION: u8 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 1,
    F32 = 2,
    U8 = 3,
    U16 = 4,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
            DType::U8 => 1,
            DType::U16 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => DType::F64,
            2 => DType::F32,
            3 => DType::U8,
            4 => DType::U16,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F64(_) => DType::F64,
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::U16(_) => DType::U16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::U16(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

/// A typed array with its dims, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn new(dims: &[usize], data: TensorData) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Input(format!("rank {} outside 1..={MAX_RANK}", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Input("dimension exceeds u32".into()));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Input(format!("dims {dims:?} do not match {} values", data.len())));
        }
        Ok(TensorFile { dims: dims.to_vec(), data })
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        TensorFile {
            dims: t.dims().to_vec(),
            data: TensorData::F64(t.data().to_vec()),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&self.dims, self.data.to_f64())
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.data.dtype() as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }

    /// Parses one container from the front of `bytes`, requiring it to be
    /// consumed exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let t = Self::decode(&mut cur)?;
        if cur.remaining() != 0 {
            return Err(Error::format(cur.offset(), format!("{} trailing bytes", cur.remaining())));
        }
        Ok(t)
    }

    pub(crate) fn decode(cur: &mut Cursor<'_>) -> Result<Self> {
        let start = cur.offset();
        if cur.take(4)? != MAGIC {
            return Err(Error::format(start, "bad magic, expected PMTN"));
        }
        let at = cur.offset();
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let at = cur.offset();
        let code = cur.u8()?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::format(at, format!("unknown dtype code {code}")))?;
        let at = cur.offset();
        let rank = cur.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(at, format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32()? as usize);
        }
        let at = cur.offset();
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)));
        let (n, nbytes) = len.ok_or_else(|| Error::format(at, "payload size overflows"))?;
        if cur.remaining() < nbytes {
            return Err(Error::format(
                at,
                format!("payload needs {nbytes} bytes, only {} left", cur.remaining()),
            ));
        }
        let raw = cur.take(nbytes)?;
        let data = match dtype {
            DType::F64 => TensorData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F32 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => TensorData::U8(raw.to_vec()),
            DType::U16 => TensorData::U16(raw.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        debug_assert_eq!(data.len(), n);
        Ok(TensorFile { dims, data })
    }
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &TensorFile) -> Result<()> {
    fs::write(path, t.to_bytes())?;
    Ok(())
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<TensorFile> {
    TensorFile::from_bytes(&fs::read(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_tensor_file(path, &TensorFile::from_tensor(t))
}

/// Reads any dtype, widening to f64.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_file(path)?.to_tensor()
}

/// Byte reader that tracks its absolute offset for error messages.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(self.offset(), format!("truncated: need {n} bytes, {} left", self.remaining())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
