//! `PMCK` container: a plain-text block plus named tensors.
//!
//! Layout (little-endian): magic `PMCK`, version byte (1), u32 text length,
//! UTF-8 text, u32 entry count, then per entry a u16 name length, the UTF-8
//! name and one embedded `PMTN` tensor.

use std::fs;
use std::path::Path;

use super::tensor_file::{Cursor, TensorFile};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PMCK";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let text = self.text.as_bytes();
        let text_len = u32::try_from(text.len()).map_err(|_| Error::Input("checkpoint text too long".into()))?;
        out.extend_from_slice(&text_len.to_le_bytes());
        out.extend_from_slice(text);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| Error::Input(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            TensorFile::from_tensor(t).encode(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != MAGIC {
            return Err(Error::format(0, "bad magic, expected PMCK"));
        }
        let at = cur.offset();
        let version = cur.u8()?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let len = cur.u32()? as usize;
        let at = cur.offset();
        let text = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| Error::format(at, "text block is not UTF-8"))?;
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = cur.u16()? as usize;
            let at = cur.offset();
            let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|_| Error::format(at, "tensor name is not UTF-8"))?;
            let at = cur.offset();
            let t = TensorFile::decode(&mut cur)?;
            let t = t.to_tensor().map_err(|e| Error::format(at, e.to_string()))?;
            tensors.push((name, t));
        }
        if cur.remaining() != 0 {
            return Err(Error::format(cur.offset(), format!("{} trailing bytes", cur.remaining())));
        }
        Ok(Checkpoint { text, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bit_exact() {
        let ck = Checkpoint {
            text: "model.task=depth\n".into(),
            tensors: vec![
                ("1.1.weight".into(), Tensor::from_vec(&[2, 1, 1, 1], vec![0.1, -0.0]).unwrap()),
                ("1.1.bias".into(), Tensor::from_vec(&[2], vec![f64::MAX, 1e-310]).unwrap()),
            ],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.text, ck.text);
        for ((na, a), (nb, b)) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn truncation_rejected() {
        let ck = Checkpoint { text: "x".into(), tensors: vec![("a".into(), Tensor::zeros(&[3]))] };
        let bytes = ck.to_bytes().unwrap();
        for cut in [0, 3, 5, 10, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format { .. })));
        }
    }
}
