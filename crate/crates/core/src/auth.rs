//! Hash-fingerprint authentication with one-time-pad encrypted digests.
//!
//! A sender hashes the payload and XORs the digest with the next unused
//! bits of the key left over from an earlier key exchange. The span of key
//! bits used travels in the clear with the ciphertext. A [`KeyLedger`]
//! never hands out the same bit twice.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256, Sha512};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("key exhausted: need {needed} bits, {available} left")]
    KeyExhausted { needed: u64, available: u64 },
    #[error("span {offset}+{length} lies outside the {len}-bit ledger")]
    UnknownSpan { offset: u64, length: u64, len: u64 },
    #[error("span {offset}+{length} reuses key bits below {consumed}")]
    SpanReuse { offset: u64, length: u64, consumed: u64 },
    #[error("malformed tag: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashAlgorithm {
    #[default]
    Sha256,
    Sha512,
}

impl HashAlgorithm {
    pub fn digest_len(self) -> usize {
        match self {
            HashAlgorithm::Sha256 => 32,
            HashAlgorithm::Sha512 => 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Digest(pub Vec<u8>);

impl Digest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, AuthError> {
        hex::decode(s)
            .map(Digest)
            .map_err(|e| AuthError::Malformed(e.to_string()))
    }
}

pub fn hash_message(payload: &[u8]) -> Digest {
    hash_with(HashAlgorithm::default(), payload)
}

pub fn hash_with(algorithm: HashAlgorithm, payload: &[u8]) -> Digest {
    match algorithm {
        HashAlgorithm::Sha256 => Digest(Sha256::digest(payload).to_vec()),
        HashAlgorithm::Sha512 => Digest(Sha512::digest(payload).to_vec()),
    }
}

/// A contiguous run of key bits, `[offset, offset + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeySpan {
    pub offset: u64,
    pub length: u64,
}

impl KeySpan {
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }

    pub fn overlaps(&self, other: &KeySpan) -> bool {
        self.offset < other.end() && other.offset < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthTag {
    pub ciphertext: Vec<u8>,
    pub span: KeySpan,
}

impl AuthTag {
    /// Ciphertext octets followed by offset and length as big-endian u64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.ciphertext.clone();
        out.extend_from_slice(&self.span.offset.to_be_bytes());
        out.extend_from_slice(&self.span.length.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuthError> {
        if bytes.len() < 16 {
            return Err(AuthError::Malformed(format!("{} octets", bytes.len())));
        }
        let (ct, tail) = bytes.split_at(bytes.len() - 16);
        let offset = u64::from_be_bytes(tail[..8].try_into().expect("8 octets"));
        let length = u64::from_be_bytes(tail[8..].try_into().expect("8 octets"));
        if length != 8 * ct.len() as u64 {
            return Err(AuthError::Malformed(format!(
                "span length {length} does not cover {} ciphertext octets",
                ct.len()
            )));
        }
        Ok(Self {
            ciphertext: ct.to_vec(),
            span: KeySpan { offset, length },
        })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, AuthError> {
        let bytes = hex::decode(s).map_err(|e| AuthError::Malformed(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

/// Shared secret bits from the previous key exchange plus a monotone
/// consumption counter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyLedger {
    key: Vec<u8>,
    len_bits: u64,
    consumed: u64,
    issued: Vec<KeySpan>,
}

impl KeyLedger {
    pub fn from_bytes(key: Vec<u8>) -> Self {
        let len_bits = 8 * key.len() as u64;
        Self {
            key,
            len_bits,
            consumed: 0,
            issued: Vec::new(),
        }
    }

    /// Packs bits MSB first; a trailing partial octet is zero padded but
    /// not counted.
    pub fn from_bits(bits: &[u8]) -> Self {
        let mut key = vec![0u8; bits.len().div_ceil(8)];
        for (i, &b) in bits.iter().enumerate() {
            if b & 1 == 1 {
                key[i / 8] |= 0x80 >> (i % 8);
            }
        }
        Self {
            key,
            len_bits: bits.len() as u64,
            consumed: 0,
            issued: Vec::new(),
        }
    }

    pub fn len_bits(&self) -> u64 {
        self.len_bits
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn remaining(&self) -> u64 {
        self.len_bits - self.consumed
    }

    pub fn issued(&self) -> &[KeySpan] {
        &self.issued
    }

    fn bit(&self, index: u64) -> u8 {
        (self.key[(index / 8) as usize] >> (7 - index % 8)) & 1
    }

    /// Key bits of `span` packed MSB first.
    pub fn pad(&self, span: KeySpan) -> Result<Vec<u8>, AuthError> {
        if span.end() > self.len_bits || !span.length.is_multiple_of(8) {
            return Err(AuthError::UnknownSpan {
                offset: span.offset,
                length: span.length,
                len: self.len_bits,
            });
        }
        let mut out = vec![0u8; (span.length / 8) as usize];
        for i in 0..span.length {
            out[(i / 8) as usize] |= self.bit(span.offset + i) << (7 - i % 8);
        }
        Ok(out)
    }

    /// Takes the next `length` unused bits.
    pub fn take(&mut self, length: u64) -> Result<KeySpan, AuthError> {
        if self.remaining() < length {
            return Err(AuthError::KeyExhausted {
                needed: length,
                available: self.remaining(),
            });
        }
        let span = KeySpan {
            offset: self.consumed,
            length,
        };
        self.consumed += length;
        self.issued.push(span);
        Ok(span)
    }

    /// Records a span consumed by the other party. Spans must arrive in
    /// ledger order without reusing bits.
    pub fn commit(&mut self, span: KeySpan) -> Result<(), AuthError> {
        if span.end() > self.len_bits {
            return Err(AuthError::UnknownSpan {
                offset: span.offset,
                length: span.length,
                len: self.len_bits,
            });
        }
        if span.offset < self.consumed {
            return Err(AuthError::SpanReuse {
                offset: span.offset,
                length: span.length,
                consumed: self.consumed,
            });
        }
        self.consumed = span.end();
        self.issued.push(span);
        Ok(())
    }

    /// True when no two issued spans share a bit.
    pub fn audit(&self) -> bool {
        let mut spans = self.issued.clone();
        spans.sort_by_key(|s| s.offset);
        spans.windows(2).all(|w| !w[0].overlaps(&w[1])) && spans.iter().all(|s| s.end() <= self.consumed)
    }
}

fn xor(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(x, y)| x ^ y).collect()
}

/// XORs the digest with the next unused key bits.
pub fn encrypt_digest(digest: &Digest, ledger: &mut KeyLedger) -> Result<AuthTag, AuthError> {
    let span = ledger.take(8 * digest.len() as u64)?;
    let pad = ledger.pad(span)?;
    Ok(AuthTag {
        ciphertext: xor(digest.as_bytes(), &pad),
        span,
    })
}

pub fn decrypt_digest(tag: &AuthTag, ledger: &KeyLedger) -> Result<Digest, AuthError> {
    let pad = ledger.pad(tag.span)?;
    if pad.len() != tag.ciphertext.len() {
        return Err(AuthError::Malformed("ciphertext length does not match span".into()));
    }
    Ok(Digest(xor(&tag.ciphertext, &pad)))
}

/// Hashes and tags a payload in one step.
pub fn sign(payload: &[u8], algorithm: HashAlgorithm, ledger: &mut KeyLedger) -> Result<AuthTag, AuthError> {
    encrypt_digest(&hash_with(algorithm, payload), ledger)
}

/// Checks a tag against the receiver's copy of the ledger without
/// consuming anything.
pub fn verify(payload: &[u8], tag: &AuthTag, ledger: &KeyLedger) -> Result<bool, AuthError> {
    verify_with(HashAlgorithm::default(), payload, tag, ledger)
}

pub fn verify_with(
    algorithm: HashAlgorithm,
    payload: &[u8],
    tag: &AuthTag,
    ledger: &KeyLedger,
) -> Result<bool, AuthError> {
    if tag.ciphertext.len() != algorithm.digest_len() {
        return Ok(false);
    }
    let expected = decrypt_digest(tag, ledger)?;
    Ok(expected == hash_with(algorithm, payload))
}
