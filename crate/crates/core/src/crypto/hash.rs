//! Collision-resistant hashing with explicit domain separation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// A 32-byte hash value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }

    /// The lowest `bits` bits of the big-endian reading of the trailing 8 bytes.
    pub fn low_bits(&self, bits: u8) -> u64 {
        let mut tail = [0u8; 8];
        tail.copy_from_slice(&self.0[24..]);
        let v = u64::from_be_bytes(tail);
        if bits >= 64 {
            v
        } else {
            v & ((1u64 << bits) - 1)
        }
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            serializer.serialize_str(&self.to_hex())
        } else {
            self.0.serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        if deserializer.is_human_readable() {
            let s = String::deserialize(deserializer)?;
            Digest::from_hex(&s).map_err(serde::de::Error::custom)
        } else {
            <[u8; 32]>::deserialize(deserializer).map(Digest)
        }
    }
}

/// Hashing contexts. Every digest in the system is computed under exactly one
/// of these tags so that equal payloads in different roles never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    MerkleLeaf,
    MerkleNode,
    NullLeaf,
    EmptyList,
    Utxo,
    MstPosition,
    Nullifier,
    Address,
    McTransaction,
    McBlock,
    McCertificate,
    McRequest,
    FtLeaf,
    BtrLeaf,
    ScLeaf,
    ScTransaction,
    ScBlock,
    ScGenesis,
    OutputNonce,
    BackwardTransfer,
    BtChain,
    Delta,
    State,
    Field,
    ProvingKey,
    VerifyingKey,
    Binding,
    Step,
    SlotSeed,
    SpendAuth,
    Params,
    Witness,
}

impl Domain {
    pub fn tag(self) -> &'static [u8] {
        match self {
            Domain::MerkleLeaf => b"mht.leaf",
            Domain::MerkleNode => b"mht.node",
            Domain::NullLeaf => b"mht.null",
            Domain::EmptyList => b"mht.empty",
            Domain::Utxo => b"utxo",
            Domain::MstPosition => b"mst.position",
            Domain::Nullifier => b"nullifier",
            Domain::Address => b"address",
            Domain::McTransaction => b"mc.tx",
            Domain::McBlock => b"mc.block",
            Domain::McCertificate => b"mc.wcert",
            Domain::McRequest => b"mc.request",
            Domain::FtLeaf => b"sctx.ft",
            Domain::BtrLeaf => b"sctx.btr",
            Domain::ScLeaf => b"sctx.sc",
            Domain::ScTransaction => b"sc.tx",
            Domain::ScBlock => b"sc.block",
            Domain::ScGenesis => b"sc.genesis",
            Domain::OutputNonce => b"sc.nonce",
            Domain::BackwardTransfer => b"bt",
            Domain::BtChain => b"bt.chain",
            Domain::Delta => b"mst.delta",
            Domain::State => b"sc.state",
            Domain::Field => b"field",
            Domain::ProvingKey => b"pk",
            Domain::VerifyingKey => b"vk",
            Domain::Binding => b"binding",
            Domain::Step => b"step",
            Domain::SlotSeed => b"slot",
            Domain::SpendAuth => b"spend",
            Domain::Params => b"params",
            Domain::Witness => b"witness",
        }
    }
}

/// Plain SHA-256 of `data`.
pub fn hash_bytes(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// `H(len(tag) ∥ tag ∥ parts...)`.
pub fn hash_tagged(domain: Domain, parts: &[&[u8]]) -> Digest {
    let tag = domain.tag();
    let mut h = Sha256::new();
    h.update([tag.len() as u8]);
    h.update(tag);
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

pub fn leaf_hash(d: &Digest) -> Digest {
    hash_tagged(Domain::MerkleLeaf, &[&d.0])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    hash_tagged(Domain::MerkleNode, &[&left.0, &right.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(hash_bytes(b"abc"), hash_bytes(b"abc"));
    }

    #[test]
    fn empty_and_zero_char_differ() {
        assert_ne!(hash_bytes(b""), hash_bytes(b"0"));
        // SHA-256("") is a well-known constant.
        assert_eq!(
            hash_bytes(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn leaf_and_node_domains_differ() {
        let d = hash_bytes(b"payload");
        let payload = [d.0, d.0].concat();
        let as_leaf = hash_tagged(Domain::MerkleLeaf, &[&payload]);
        let as_node = hash_tagged(Domain::MerkleNode, &[&payload]);
        assert_ne!(as_leaf, as_node);
        assert_eq!(as_node, node_hash(&d, &d));
    }

    #[test]
    fn hex_round_trip() {
        let d = hash_bytes(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
    }

    #[test]
    fn low_bits_masks() {
        let mut b = [0u8; 32];
        b[31] = 0b1011_0110;
        let d = Digest(b);
        assert_eq!(d.low_bits(3), 0b110);
        assert_eq!(d.low_bits(8), 0b1011_0110);
    }
}
