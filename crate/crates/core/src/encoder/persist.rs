//! Binary model file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "SETADMDL"
//! version    u32
//! d, d_h, heads, depth   u64 each
//! pooling    u8       0 = sum, 1 = max
//! blocks     u32      number of parameter blocks
//! per block: name_len u16, name utf-8, rows u64, cols u64, rows*cols f64
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelMeta, ModelParams, Pooling};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const MAGIC: &[u8; 8] = b"SETADMDL";
pub const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let m = &self.meta;
        for v in [m.d, m.d_h, m.heads, m.depth] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(match m.pooling {
            Pooling::Sum => 0,
            Pooling::Max => 1,
        });
        let blocks = self.blocks();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(b.value.cols() as u64).to_le_bytes());
            for v in b.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic, not a model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let d = r.usize()?;
        let d_h = r.usize()?;
        let heads = r.usize()?;
        let depth = r.usize()?;
        let pooling = match r.u8()? {
            0 => Pooling::Sum,
            1 => Pooling::Max,
            other => return Err(Error::Format(format!("unknown pooling tag {other}"))),
        };
        let meta = ModelMeta {
            d,
            d_h,
            heads,
            depth,
            pooling,
        };
        meta.validate().map_err(|e| Error::Format(e.to_string()))?;
        let expected = ModelParams::block_shapes(&meta);
        let n = r.u32()? as usize;
        if n != expected.len() {
            return Err(Error::Format(format!(
                "expected {} blocks, file has {n}",
                expected.len()
            )));
        }
        let mut blocks = Vec::with_capacity(n);
        for (name, _) in &expected {
            let len = r.u16()? as usize;
            let found = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("block name is not utf-8".into()))?;
            if found != name {
                return Err(Error::Format(format!("expected block {name}, found {found}")));
            }
            let rows = r.usize()?;
            let cols = r.usize()?;
            let count = rows
                .checked_mul(cols)
                .filter(|c| c * 8 <= bytes.len())
                .ok_or_else(|| Error::Format(format!("block {name} is implausibly large")))?;
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            blocks.push(Matrix::new(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last block",
                bytes.len() - r.pos
            )));
        }
        ModelParams::from_blocks(meta, blocks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized model, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let p = ModelParams::init(1, 3, 4, 2).unwrap();
        let b = p.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 3);
        assert_eq!(b[44], 0);
    }

    #[test]
    fn corrupt_files_rejected() {
        let p = ModelParams::init(1, 3, 4, 2).unwrap();
        let b = p.to_bytes();
        assert!(ModelParams::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(ModelParams::from_bytes(&bad), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), d in 1usize..6, heads in 1usize..4,
                                 per_head in 1usize..4, depth in 1usize..3, max in any::<bool>()) {
            let meta = ModelMeta {
                d, d_h: heads * per_head, heads, depth,
                pooling: if max { Pooling::Max } else { Pooling::Sum },
            };
            let mut p = ModelParams::init_with(seed, meta).unwrap();
            p.head_bias = Matrix::scalar(-0.0);
            let bytes = p.to_bytes();
            let q = ModelParams::from_bytes(&bytes).unwrap();
            prop_assert_eq!(q.to_bytes(), bytes);
            prop_assert_eq!(q.meta, p.meta);
        }
    }
}
