//! Canonical byte encoding.
//!
//! Every value that is signed, hashed or written to a trace is first turned
//! into bytes with the rules below. The encoding is deterministic: set
//! elements are emitted sorted by their own encoded bytes, so two equal values
//! always encode identically regardless of in-memory order.
//!
//! ```text
//! top-level   := VERSION body                  VERSION = 0x01
//! body        := tag payload
//! u32, u64    := big-endian
//! bytes       := u32:len raw
//! set<T>      := u32:count { bytes(T) }*        sorted by bytes(T)
//!
//! 0x10 FinSet        set<u64>
//! 0x11 Configuration set<update>    update := polarity(b'+' | b'-') bytes(process-id)
//! 0x12 HistValue     set<body(Configuration)>
//! 0x20..0x3f         protocol message payloads (see `protocol::SignedTag`)
//! ```

use sha2::{Digest as _, Sha256};

/// Version byte prepended to every top-level canonical encoding.
pub const ENCODING_VERSION: u8 = 0x01;

pub const TAG_FINSET: u8 = 0x10;
pub const TAG_CONFIG: u8 = 0x11;
pub const TAG_HIST: u8 = 0x12;

/// A 32-byte SHA-256 digest.
pub type Digest = [u8; 32];

/// Types with a canonical body encoding (tag + payload, no version byte).
pub trait Canonical {
    fn encode_body(&self, out: &mut Vec<u8>);

    /// Versioned top-level encoding.
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = vec![ENCODING_VERSION];
        self.encode_body(&mut out);
        out
    }

    fn digest(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

/// Small helper for building encodings field by field.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tag(tag: u8) -> Self {
        Self { buf: vec![ENCODING_VERSION, tag] }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    /// Emits a set of already-encoded elements, sorted by their bytes.
    pub fn sorted_set(&mut self, mut elems: Vec<Vec<u8>>) -> &mut Self {
        elems.sort();
        self.u32(elems.len() as u32);
        for e in &elems {
            self.bytes(e);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.buf)
    }
}

/// Writes a sorted, length-prefixed set into `out`.
pub fn put_sorted_set(out: &mut Vec<u8>, mut elems: Vec<Vec<u8>>) {
    elems.sort();
    out.extend_from_slice(&(elems.len() as u32).to_be_bytes());
    for e in elems {
        out.extend_from_slice(&(e.len() as u32).to_be_bytes());
        out.extend_from_slice(&e);
    }
}

pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_set_is_order_independent() {
        let mut a = Encoder::new();
        a.sorted_set(vec![vec![2], vec![1, 1], vec![0]]);
        let mut b = Encoder::new();
        b.sorted_set(vec![vec![1, 1], vec![0], vec![2]]);
        assert_eq!(a.finish(), b.finish());
    }

    #[test]
    fn bytes_are_length_prefixed() {
        let mut e = Encoder::new();
        e.bytes(b"ab");
        assert_eq!(e.finish(), vec![0, 0, 0, 2, b'a', b'b']);
    }
}
