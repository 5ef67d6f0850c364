//! Parameter-blob layout and digest.
//!
//! Layout: magic `GICB`, version u32 LE, then one block per parameter:
//! name length u16 LE, name bytes, rank u8, dims u32 LE × rank, values
//! IEEE-754 32-bit LE. The backend digest is SHA-256 over the whole
//! blob.

use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 4] = b"GICB";
pub const VERSION: u32 = 1;

/// Incremental writer for the parameter blob.
pub struct BlobWriter {
    buf: Vec<u8>,
}

impl BlobWriter {
    pub fn new() -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        BlobWriter { buf }
    }

    /// Appends one named parameter block. Values are written at f32
    /// precision regardless of the in-memory scalar type.
    pub fn push_f32(&mut self, name: &str, dims: &[usize], values: impl Iterator<Item = f32>) {
        let name_bytes = name.as_bytes();
        assert!(name_bytes.len() <= u16::MAX as usize);
        assert!(dims.len() <= u8::MAX as usize);
        self.buf
            .extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        self.buf.extend_from_slice(name_bytes);
        self.buf.push(dims.len() as u8);
        for &d in dims {
            self.buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut count = 0usize;
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
            count += 1;
        }
        debug_assert_eq!(count, dims.iter().product::<usize>());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

impl Default for BlobWriter {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}
