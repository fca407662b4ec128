//! SHA-256 content digests over length-prefixed fields.

use sha2::{Digest, Sha256};

/// Incremental digest builder. Every field is length-prefixed so that
/// `("ab", "c")` and `("a", "bc")` hash differently.
#[derive(Clone, Default)]
pub struct FieldHasher {
    inner: Sha256,
}

impl FieldHasher {
    pub fn new(domain: &str) -> Self {
        let mut h = Self::default();
        h.field(domain.as_bytes());
        h
    }

    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.inner.update((bytes.len() as u64).to_le_bytes());
        self.inner.update(bytes);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.field(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.field(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.field(&v.to_bits().to_le_bytes())
    }

    /// Lower-case hex of the 256-bit digest.
    pub fn hex(self) -> String {
        to_hex(self.inner.finalize().as_slice())
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Plain SHA-256 hex digest of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    to_hex(Sha256::digest(bytes).as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fields_are_framed() {
        let mut a = FieldHasher::new("t");
        a.str("ab").str("c");
        let mut b = FieldHasher::new("t");
        b.str("a").str("bc");
        assert_ne!(a.hex(), b.hex());
    }
}
