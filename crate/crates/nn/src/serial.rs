//! Binary layout of a network state:
//!
//! ```text
//! "RFNN" | u32 version | u8 element width (4 or 8) | u32 tensor count
//! per tensor: u32 name length | name bytes | u64 value count | values (LE)
//! ```

use crate::{NnError, Scalar};

const MAGIC: &[u8; 4] = b"RFNN";
const VERSION: u32 = 1;

pub fn encode_state<T: Scalar>(state: &[(String, Vec<T>)]) -> Vec<u8> {
    let width = std::mem::size_of::<T>() as u8;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(width);
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for (name, values) in state {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            match width {
                4 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_state<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Vec<T>)>, NnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Malformed("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::Malformed(format!("unsupported version {version}")));
    }
    let width = r.take(1)?[0];
    if width != 4 && width != 8 {
        return Err(NnError::Malformed(format!("element width {width}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| NnError::Malformed(e.to_string()))?
            .to_string();
        let len = r.u64()? as usize;
        let raw = r.take(len.checked_mul(width as usize).ok_or_else(|| NnError::Malformed("length overflow".into()))?)?;
        let values = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect()
        };
        out.push((name, values));
    }
    if r.pos != bytes.len() {
        return Err(NnError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}
