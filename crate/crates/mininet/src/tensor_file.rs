//! Single-tensor files: `MINITNSR`, dtype byte (0 = f32, 1 = f64), u32 rank,
//! u64 dims, little-endian payload. Nothing follows the payload.

use std::path::Path;

use mininet_core::{Scalar, Tensor};

use crate::error::{Error, IoContext, Result};
use crate::wire::{put_tensor, AnyTensor, Reader};

pub const MAGIC: &[u8; 8] = b"MINITNSR";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 1 + 4 + 8 * t.rank() + t.numel() * T::DTYPE.size_of());
    out.extend_from_slice(MAGIC);
    put_tensor(&mut out, t);
    out
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let mut r = Reader::new(bytes);
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a tensor file (bad magic)".into()));
    }
    let t = r.tensor()?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after the payload", r.remaining())));
    }
    Ok(t)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).at(path)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).at(path)?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
