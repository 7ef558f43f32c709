//! Flat named-tensor container.
//!
//! Layout (little-endian): magic `ARDW`, `u32` version, `u32` tensor count,
//! then per tensor a `u16` name length, the UTF-8 name, a `u8` rank, one
//! `u32` per extent and the raw `f32` payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::{ArdError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ARDW";
const VERSION: u32 = 1;

pub type Checkpoint = Vec<(String, Tensor<f32>)>;

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = u32::try_from(tensors.len()).map_err(|_| ArdError::Format("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| ArdError::Format(format!("tensor name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let rank = u8::try_from(t.rank()).map_err(|_| ArdError::Format("rank above 255".into()))?;
        w.write_all(&[rank])?;
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| ArdError::Format("extent above u32".into()))?;
            w.write_all(&e.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| ArdError::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let magic: [u8; 4] = read_exact(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ArdError::Format("not a weights file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != VERSION {
        return Err(ArdError::Format(format!("unsupported weights version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| ArdError::Format(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|e| ArdError::Format(e.to_string()))?;
        let [rank] = read_exact::<_, 1>(&mut r)?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|e| ArdError::Format(format!("truncated payload of {name}: {e}")))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}
