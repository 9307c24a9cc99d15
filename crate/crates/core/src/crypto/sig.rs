//! Ed25519 signatures and hash-derived addresses.

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::hash::{hash_tagged, Digest, Domain};

/// Owner address: the tagged hash of a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Address(pub Digest);

impl Address {
    pub const ZERO: Address = Address(Digest::ZERO);
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.0.short())
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey(pub Digest);

impl PublicKey {
    pub fn address(&self) -> Address {
        Address(hash_tagged(Domain::Address, &[&self.0 .0]))
    }

    pub fn verify(&self, msg: &Digest, sig: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0 .0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
        vk.verify(&msg.0, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.0.short())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..4]))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            serializer.serialize_str(&hex::encode(self.0))
        } else {
            let (a, b) = self.0.split_at(32);
            let a: [u8; 32] = a.try_into().unwrap();
            let b: [u8; 32] = b.try_into().unwrap();
            (a, b).serialize(serializer)
        }
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mut out = [0u8; 64];
        if deserializer.is_human_readable() {
            let s = String::deserialize(deserializer)?;
            hex::decode_to_slice(s, &mut out).map_err(serde::de::Error::custom)?;
        } else {
            let (a, b) = <([u8; 32], [u8; 32])>::deserialize(deserializer)?;
            out[..32].copy_from_slice(&a);
            out[32..].copy_from_slice(&b);
        }
        Ok(Signature(out))
    }
}

/// A signing key derived deterministically from a 32-byte seed.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl Keypair {
    pub fn from_seed(seed: &Digest) -> Self {
        Keypair {
            signing: SigningKey::from_bytes(&seed.0),
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(Digest(self.signing.verifying_key().to_bytes()))
    }

    pub fn address(&self) -> Address {
        self.public().address()
    }

    pub fn sign(&self, msg: &Digest) -> Signature {
        Signature(self.signing.sign(&msg.0).to_bytes())
    }
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("public", &self.public()).finish()
    }
}

/// Public key plus signature, as carried by spending inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpendAuth {
    pub pubkey: PublicKey,
    pub signature: Signature,
}

impl SpendAuth {
    pub fn sign(key: &Keypair, msg: &Digest) -> Self {
        SpendAuth {
            pubkey: key.public(),
            signature: key.sign(msg),
        }
    }

    /// Valid iff the key hashes to `owner` and the signature checks out.
    pub fn authorizes(&self, owner: &Address, msg: &Digest) -> bool {
        &self.pubkey.address() == owner && self.pubkey.verify(msg, &self.signature)
    }
}
