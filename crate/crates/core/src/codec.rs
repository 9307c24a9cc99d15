//! Canonical binary encoding.
//!
//! Length-prefixed fields in declaration order, fixed-width big-endian
//! integers, u32 enum variant tags and `0/1` option tags. Every digest over a
//! structured value is computed over this encoding, and decoding rejects
//! trailing bytes so the encoding is injective.

use bincode::Options;
use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

use crate::crypto::{hash_tagged, Digest, Domain};

/// Upper bound for any single decoded value.
const DECODE_LIMIT: u64 = 1 << 30;

#[derive(Debug, Error)]
#[error("canonical decoding failed: {0}")]
pub struct CodecError(String);

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_big_endian()
        .with_fixint_encoding()
        .reject_trailing_bytes()
        .with_limit(DECODE_LIMIT)
}

pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    options()
        .serialize(value)
        .expect("canonical encoding of in-memory values cannot fail")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    options()
        .deserialize(bytes)
        .map_err(|e| CodecError(e.to_string()))
}

/// Digest of the canonical encoding under `domain`.
pub fn digest_of<T: Serialize + ?Sized>(domain: Domain, value: &T) -> Digest {
    hash_tagged(domain, &[&encode(value)])
}
