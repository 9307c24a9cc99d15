use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{digest_of, encode};
use crate::crypto::{hash_tagged, Digest, Domain, Keypair, PublicKey, Signature};

use super::mcref::{verify_mc_reference, McBlockReference};
use super::params::LatusParams;
use super::tx::{ScTransaction, Transition};

/// A mainchain block identified by hash and height.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McPointer {
    pub hash: Digest,
    pub height: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScBlockHeader {
    pub parent: Digest,
    pub height: u64,
    pub slot: u64,
    pub forger: PublicKey,
    pub mc_refs_digest: Digest,
    pub txs_digest: Digest,
    pub state_digest: Digest,
}

impl ScBlockHeader {
    pub fn hash(&self) -> Digest {
        digest_of(Domain::ScBlock, self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScBlock {
    pub header: ScBlockHeader,
    pub mc_refs: Vec<McBlockReference>,
    pub txs: Vec<ScTransaction>,
    pub signature: Signature,
}

pub fn refs_digest(refs: &[McBlockReference]) -> Digest {
    hash_tagged(Domain::ScBlock, &[b"refs", &encode(&refs)])
}

pub fn txs_digest(txs: &[ScTransaction]) -> Digest {
    hash_tagged(Domain::ScBlock, &[b"txs", &encode(&txs)])
}

impl ScBlock {
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    /// Fills the body digests into `header` and signs it.
    pub fn seal(mut header: ScBlockHeader, mc_refs: Vec<McBlockReference>, txs: Vec<ScTransaction>, key: &Keypair) -> Self {
        header.forger = key.public();
        header.mc_refs_digest = refs_digest(&mc_refs);
        header.txs_digest = txs_digest(&txs);
        let signature = key.sign(&header.hash());
        ScBlock {
            header,
            mc_refs,
            txs,
            signature,
        }
    }

    pub fn body_matches_header(&self) -> bool {
        self.header.mc_refs_digest == refs_digest(&self.mc_refs) && self.header.txs_digest == txs_digest(&self.txs)
    }

    pub fn signature_valid(&self) -> bool {
        self.header.forger.verify(&self.hash(), &self.signature)
    }

    /// Every transition the block applies, in order: the epoch reset when
    /// the block opens an epoch, then sync transactions per reference, then
    /// the user transactions.
    pub fn transitions(&self, starts_epoch: bool) -> Vec<Transition> {
        let mut out = Vec::new();
        if starts_epoch {
            out.push(Transition::EpochStart);
        }
        for r in &self.mc_refs {
            out.extend(r.sync_transitions());
        }
        out.extend(self.txs.iter().cloned().map(Transition::Tx));
        out
    }
}

/// What a block proof attests about the block besides the state change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStep {
    pub block_hash: Digest,
    pub parent_hash: Digest,
    pub height: u64,
    pub mc_before: McPointer,
    pub mc_after: McPointer,
    pub starts_epoch: bool,
    pub ends_epoch: bool,
}

impl BlockStep {
    pub fn digest(&self) -> Digest {
        digest_of(Domain::Step, self)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefError {
    #[error("reference {0} does not extend the previous mainchain block")]
    NotContiguous(usize),
    #[error("reference {0} fails verification")]
    Invalid(usize),
    #[error("reference {0} closes an epoch but is not the block's last reference")]
    EpochBoundary(usize),
}

/// Checks that `refs` continue the mainchain from `before`, are each valid
/// and respect the epoch boundary. Returns the new mainchain pointer and
/// whether the block closes a withdrawal epoch.
pub fn check_refs(params: &LatusParams, refs: &[McBlockReference], before: McPointer) -> Result<(McPointer, bool), RefError> {
    let mut cur = before;
    for (i, r) in refs.iter().enumerate() {
        if r.header.prev != cur.hash || r.header.height != cur.height + 1 {
            return Err(RefError::NotContiguous(i));
        }
        let hash = r.hash();
        if !verify_mc_reference(r, &params.ledger_id, &hash) {
            return Err(RefError::Invalid(i));
        }
        if params.is_epoch_last(r.header.height) && i + 1 != refs.len() {
            return Err(RefError::EpochBoundary(i));
        }
        cur = McPointer {
            hash,
            height: r.header.height,
        };
    }
    let ends = !refs.is_empty() && params.is_epoch_last(cur.height);
    Ok((cur, ends))
}
