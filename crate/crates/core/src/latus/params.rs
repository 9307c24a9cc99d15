use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::digest_of;
use crate::crypto::{hash_tagged, Address, Digest, Domain, MstDelta};
use crate::mainchain::{LedgerId, SidechainConfig};
use crate::proofsys::{setup, FieldType, KeyPair, ProofdataSchema, StatementId};

/// Genesis parameters of one sidechain. Their digest seeds every proving
/// key, so each sidechain gets its own verifying keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatusParams {
    pub ledger_id: LedgerId,
    /// First mainchain height the sidechain references.
    pub start_block: u64,
    pub epoch_len: u64,
    pub submit_len: u64,
    pub mst_depth: u8,
    /// Length of a consensus epoch in slots.
    pub slots_per_epoch: u64,
    pub genesis_stakes: Vec<(Address, u64)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid sidechain parameters: {0}")]
pub struct ParamsError(pub &'static str);

impl LatusParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.mst_depth == 0 || self.mst_depth > 32 {
            return Err(ParamsError("mst_depth must be in 1..=32"));
        }
        if self.epoch_len < 2 || self.submit_len == 0 || self.submit_len >= self.epoch_len {
            return Err(ParamsError("need epoch_len >= 2 and 1 <= submit_len < epoch_len"));
        }
        if self.start_block == 0 {
            return Err(ParamsError("start_block must be positive"));
        }
        if self.slots_per_epoch == 0 {
            return Err(ParamsError("slots_per_epoch must be positive"));
        }
        if self.genesis_stakes.iter().map(|(_, s)| *s as u128).sum::<u128>() == 0 {
            return Err(ParamsError("genesis stake must be positive"));
        }
        Ok(())
    }

    pub fn digest(&self) -> Digest {
        digest_of(Domain::Params, self)
    }

    pub fn keys(&self, statement: StatementId) -> KeyPair {
        setup(statement, self.digest())
    }

    pub fn genesis_hash(&self) -> Digest {
        hash_tagged(Domain::ScGenesis, &[&self.digest().0])
    }

    pub fn empty_delta(&self) -> MstDelta {
        MstDelta::for_depth(self.mst_depth)
    }

    /// Mainchain registration entry for these parameters.
    pub fn sidechain_config(&self, btr_enabled: bool, csw_enabled: bool) -> SidechainConfig {
        SidechainConfig {
            ledger_id: self.ledger_id,
            start_block: self.start_block,
            epoch_len: self.epoch_len,
            submit_len: self.submit_len,
            wcert_vk: self.keys(StatementId::WCert).vk,
            btr_vk: btr_enabled.then(|| self.keys(StatementId::Btr).vk),
            csw_vk: csw_enabled.then(|| self.keys(StatementId::Csw).vk),
            wcert_proofdata: wcert_proofdata_schema(),
            btr_proofdata: request_proofdata_schema(),
            csw_proofdata: request_proofdata_schema(),
        }
    }

    pub fn is_epoch_last(&self, mc_height: u64) -> bool {
        mc_height >= self.start_block && (mc_height - self.start_block) % self.epoch_len == self.epoch_len - 1
    }

    pub fn epoch_last_height(&self, epoch: u64) -> u64 {
        self.start_block + (epoch + 1) * self.epoch_len - 1
    }

    pub fn mc_epoch_of(&self, mc_height: u64) -> Option<u64> {
        mc_height
            .checked_sub(self.start_block)
            .map(|o| o / self.epoch_len)
    }

    pub fn consensus_epoch(&self, slot: u64) -> u64 {
        slot / self.slots_per_epoch
    }
}

/// `(H(SB_last), MST root, mst_delta)`.
pub fn wcert_proofdata_schema() -> ProofdataSchema {
    vec![
        ("sc_last_block".into(), FieldType::Digest),
        ("mst_root".into(), FieldType::Digest),
        ("mst_delta".into(), FieldType::Bits),
    ]
}

/// The claimed UTXO, field by field.
pub fn request_proofdata_schema() -> ProofdataSchema {
    vec![
        ("utxo_addr".into(), FieldType::Digest),
        ("utxo_amount".into(), FieldType::Integer),
        ("utxo_nonce".into(), FieldType::Digest),
    ]
}

/// Forward transfer metadata: `receiver (32 bytes) ∥ payback (32 bytes)`.
pub fn receiver_metadata(receiver: &Address, payback: &Address) -> Vec<u8> {
    let mut m = Vec::with_capacity(64);
    m.extend_from_slice(&receiver.0 .0);
    m.extend_from_slice(&payback.0 .0);
    m
}

/// `Ok((receiver, payback))` for well-formed metadata, otherwise the
/// address a refund goes to: the payback part when the length is right,
/// the zero address when nothing can be parsed.
pub fn parse_metadata(m: &[u8]) -> Result<(Address, Address), Address> {
    if m.len() != 64 {
        return Err(Address::ZERO);
    }
    let mut r = [0u8; 32];
    let mut p = [0u8; 32];
    r.copy_from_slice(&m[..32]);
    p.copy_from_slice(&m[32..]);
    let (receiver, payback) = (Address(Digest(r)), Address(Digest(p)));
    if receiver == Address::ZERO {
        return Err(payback);
    }
    Ok((receiver, payback))
}
