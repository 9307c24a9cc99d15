//! Setup/Prove/Verify over named statement predicates.
//!
//! The reference backend is transparent: a proof carries its full witness
//! and verification re-evaluates the statement's predicate. It is sound and
//! complete but neither succinct nor zero-knowledge. Recursive statements
//! verify their sub-proofs through [`ProofContext::verify`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use thiserror::Error;

use crate::codec;
use crate::crypto::{hash_tagged, merkle_root, Digest, Domain, MstDelta};

/// Per-transaction transition kinds, each with its own Base statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TxKind {
    Payment,
    ForwardTransfers,
    BackwardTransfer,
    BtRequests,
    /// Reset of the per-epoch backward transfer list and delta.
    EpochStart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatementId {
    WCert,
    Btr,
    Csw,
    Base(TxKind),
    Merge,
    Block,
    Epoch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Digest,
    Integer,
    Bits,
    Bytes,
}

/// One typed public-input or proofdata value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Field {
    Digest(Digest),
    Integer(u64),
    Bits(MstDelta),
    Bytes(Vec<u8>),
}

impl Field {
    pub fn field_type(&self) -> FieldType {
        match self {
            Field::Digest(_) => FieldType::Digest,
            Field::Integer(_) => FieldType::Integer,
            Field::Bits(_) => FieldType::Bits,
            Field::Bytes(_) => FieldType::Bytes,
        }
    }

    pub fn digest(&self) -> Digest {
        codec::digest_of(Domain::Field, self)
    }

    pub fn as_digest(&self) -> Option<Digest> {
        match self {
            Field::Digest(d) => Some(*d),
            _ => None,
        }
    }

    pub fn as_integer(&self) -> Option<u64> {
        match self {
            Field::Integer(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bits(&self) -> Option<&MstDelta> {
        match self {
            Field::Bits(b) => Some(b),
            _ => None,
        }
    }
}

/// Ordered `(name, type)` list describing a proofdata layout.
pub type ProofdataSchema = Vec<(String, FieldType)>;

pub fn schema_matches(schema: &ProofdataSchema, fields: &[Field]) -> bool {
    schema.len() == fields.len()
        && schema
            .iter()
            .zip(fields)
            .all(|((_, t), f)| *t == f.field_type())
}

/// Merkle root over the digests of the ordered proofdata fields.
pub fn proofdata_root(fields: &[Field]) -> Digest {
    let leaves: Vec<Digest> = fields.iter().map(Field::digest).collect();
    merkle_root(&leaves)
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PublicInput {
    pub fields: Vec<Field>,
}

impl PublicInput {
    pub fn new(fields: Vec<Field>) -> Self {
        PublicInput { fields }
    }

    pub fn digest(&self, i: usize) -> Option<Digest> {
        self.fields.get(i).and_then(Field::as_digest)
    }

    pub fn integer(&self, i: usize) -> Option<u64> {
        self.fields.get(i).and_then(Field::as_integer)
    }
}

/// Statement-specific data, stored in canonical encoding.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(with = "payload_serde")]
    pub payload: Vec<u8>,
}

/// Hex in human-readable formats, raw bytes otherwise.
mod payload_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        if s.is_human_readable() {
            s.serialize_str(&hex::encode(bytes))
        } else {
            bytes.serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        if d.is_human_readable() {
            let s = String::deserialize(d)?;
            hex::decode(s).map_err(serde::de::Error::custom)
        } else {
            Vec::<u8>::deserialize(d)
        }
    }
}

impl Witness {
    pub fn encode<T: Serialize>(value: &T) -> Self {
        Witness {
            payload: codec::encode(value),
        }
    }

    pub fn decode<T: DeserializeOwned>(&self) -> Result<T, String> {
        codec::decode(&self.payload).map_err(|e| format!("malformed witness: {e}"))
    }

    pub fn digest(&self) -> Digest {
        hash_tagged(Domain::Witness, &[&self.payload])
    }
}

impl fmt::Debug for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Witness({} bytes)", self.payload.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerifyingKey {
    pub statement: StatementId,
    pub seed: Digest,
    pub id: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProvingKey {
    pub statement: StatementId,
    pub seed: Digest,
    pub id: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub pk: ProvingKey,
    pub vk: VerifyingKey,
}

fn key_id(domain: Domain, statement: StatementId, seed: &Digest) -> Digest {
    hash_tagged(domain, &[&codec::encode(&statement), &seed.0])
}

/// Deterministic in `(statement, seed)`.
pub fn setup(statement: StatementId, seed: Digest) -> KeyPair {
    KeyPair {
        pk: ProvingKey {
            statement,
            seed,
            id: key_id(Domain::ProvingKey, statement, &seed),
        },
        vk: VerifyingKey {
            statement,
            seed,
            id: key_id(Domain::VerifyingKey, statement, &seed),
        },
    }
}

impl VerifyingKey {
    /// The id matches the claimed statement and seed.
    pub fn is_well_formed(&self) -> bool {
        self.id == key_id(Domain::VerifyingKey, self.statement, &self.seed)
    }
}

impl ProvingKey {
    pub fn verifying_key(&self) -> VerifyingKey {
        setup(self.statement, self.seed).vk
    }
}

pub fn public_binding(vk: &VerifyingKey, public: &PublicInput) -> Digest {
    hash_tagged(Domain::Binding, &[&vk.id.0, &codec::encode(public)])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementProof {
    pub vk_ref: Digest,
    pub public_binding: Digest,
    pub witness: Witness,
}

impl StatementProof {
    /// Builds a proof object without evaluating the predicate. Only useful
    /// for producing invalid proofs on purpose.
    pub fn assemble_unchecked(vk: &VerifyingKey, public: &PublicInput, witness: Witness) -> Self {
        StatementProof {
            vk_ref: vk.id,
            public_binding: public_binding(vk, public),
            witness,
        }
    }

    pub fn digest(&self) -> Digest {
        codec::digest_of(Domain::Witness, self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("no predicate registered for {0:?}")]
    UnknownStatement(StatementId),
    #[error("predicate already registered for {0:?}")]
    DuplicateRegistration(StatementId),
    #[error("unsatisfied {statement:?}: {reason}")]
    Unsatisfied {
        statement: StatementId,
        reason: String,
    },
}

/// Passed to predicates so recursive statements can verify sub-proofs
/// under keys derived from the same setup seed.
pub struct ProofContext<'a> {
    pub system: &'a ProofSystem,
    pub statement: StatementId,
    pub seed: Digest,
}

impl ProofContext<'_> {
    pub fn vk(&self, statement: StatementId) -> VerifyingKey {
        setup(statement, self.seed).vk
    }

    pub fn verify(&self, statement: StatementId, public: &PublicInput, proof: &StatementProof) -> bool {
        self.system.verify(&self.vk(statement), public, proof)
    }
}

pub trait Predicate: Send + Sync {
    fn evaluate(&self, ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String>;
}

impl<F> Predicate for F
where
    F: Fn(&ProofContext<'_>, &PublicInput, &Witness) -> Result<(), String> + Send + Sync,
{
    fn evaluate(&self, ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String> {
        self(ctx, public, witness)
    }
}

/// Predicate registry plus a memo of successful verifications keyed by
/// `(vk, public binding, witness)`. The memo only skips re-evaluation of
/// byte-identical proofs; any changed byte is evaluated afresh.
#[derive(Default)]
pub struct ProofSystem {
    registry: HashMap<StatementId, Arc<dyn Predicate>>,
    verified: Mutex<HashSet<Digest>>,
}

impl fmt::Debug for ProofSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.registry.keys().collect();
        ids.sort();
        f.debug_struct("ProofSystem").field("statements", &ids).finish()
    }
}

impl ProofSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_predicate(
        &mut self,
        statement: StatementId,
        predicate: impl Predicate + 'static,
    ) -> Result<(), ProofError> {
        if self.registry.contains_key(&statement) {
            return Err(ProofError::DuplicateRegistration(statement));
        }
        self.registry.insert(statement, Arc::new(predicate));
        Ok(())
    }

    pub fn is_registered(&self, statement: StatementId) -> bool {
        self.registry.contains_key(&statement)
    }

    fn memo_key(vk: &VerifyingKey, binding: &Digest, witness: &Witness) -> Digest {
        hash_tagged(Domain::Witness, &[&vk.id.0, &binding.0, &witness.digest().0])
    }

    fn evaluate(&self, statement: StatementId, seed: Digest, public: &PublicInput, witness: &Witness) -> Result<(), ProofError> {
        let predicate = self
            .registry
            .get(&statement)
            .ok_or(ProofError::UnknownStatement(statement))?;
        let ctx = ProofContext {
            system: self,
            statement,
            seed,
        };
        predicate
            .evaluate(&ctx, public, witness)
            .map_err(|reason| ProofError::Unsatisfied { statement, reason })
    }

    /// Returns a proof iff the predicate accepts `(public, witness)`.
    pub fn prove(&self, pk: &ProvingKey, public: &PublicInput, witness: Witness) -> Result<StatementProof, ProofError> {
        self.evaluate(pk.statement, pk.seed, public, &witness)?;
        let vk = pk.verifying_key();
        let proof = StatementProof::assemble_unchecked(&vk, public, witness);
        self.remember(&vk, &proof);
        Ok(proof)
    }

    pub fn verify(&self, vk: &VerifyingKey, public: &PublicInput, proof: &StatementProof) -> bool {
        if !vk.is_well_formed() || proof.vk_ref != vk.id || proof.public_binding != public_binding(vk, public) {
            return false;
        }
        let key = Self::memo_key(vk, &proof.public_binding, &proof.witness);
        if self.verified.lock().expect("memo lock").contains(&key) {
            return true;
        }
        let ok = self.evaluate(vk.statement, vk.seed, public, &proof.witness).is_ok();
        if ok {
            self.verified.lock().expect("memo lock").insert(key);
        }
        ok
    }

    /// Like [`verify`](Self::verify) but reports why the predicate failed.
    pub fn explain(&self, vk: &VerifyingKey, public: &PublicInput, proof: &StatementProof) -> Result<(), String> {
        if !vk.is_well_formed() {
            return Err("malformed verifying key".into());
        }
        if proof.vk_ref != vk.id {
            return Err("proof made for a different verifying key".into());
        }
        if proof.public_binding != public_binding(vk, public) {
            return Err("public input binding mismatch".into());
        }
        self.evaluate(vk.statement, vk.seed, public, &proof.witness)
            .map_err(|e| e.to_string())
    }

    fn remember(&self, vk: &VerifyingKey, proof: &StatementProof) {
        let key = Self::memo_key(vk, &proof.public_binding, &proof.witness);
        self.verified.lock().expect("memo lock").insert(key);
    }

    pub fn clear_memo(&self) {
        self.verified.lock().expect("memo lock").clear();
    }
}
