use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, digest_of};
use crate::crypto::{hash_tagged, merkle_root, Address, Digest, Domain, Keypair, SpendAuth};
use crate::proofsys::{proofdata_root, Field, ProofdataSchema, StatementProof, VerifyingKey};

pub type LedgerId = Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Digest,
    pub index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOut {
    pub addr: Address,
    pub amount: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxIn {
    pub prev: OutPoint,
    pub auth: SpendAuth,
}

/// Coins destroyed on the mainchain and credited to a sidechain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardTransfer {
    pub ledger_id: LedgerId,
    /// Opaque to the mainchain; interpreted by the sidechain.
    pub receiver_metadata: Vec<u8>,
    pub amount: u64,
}

impl ForwardTransfer {
    pub fn digest(&self) -> Digest {
        digest_of(Domain::FtLeaf, self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McTransaction {
    pub inputs: Vec<TxIn>,
    pub outputs: Vec<TxOut>,
    pub forward_transfers: Vec<ForwardTransfer>,
}

impl McTransaction {
    /// Message signed by every input; also the transaction id.
    pub fn sighash(&self) -> Digest {
        let prevs: Vec<OutPoint> = self.inputs.iter().map(|i| i.prev).collect();
        digest_of(Domain::McTransaction, &(prevs, &self.outputs, &self.forward_transfers))
    }

    pub fn txid(&self) -> Digest {
        self.sighash()
    }

    pub fn signed(
        spends: &[(OutPoint, &Keypair)],
        outputs: Vec<TxOut>,
        forward_transfers: Vec<ForwardTransfer>,
    ) -> Self {
        let mut tx = McTransaction {
            inputs: Vec::new(),
            outputs,
            forward_transfers,
        };
        let prevs: Vec<OutPoint> = spends.iter().map(|(p, _)| *p).collect();
        let msg = digest_of(Domain::McTransaction, &(prevs, &tx.outputs, &tx.forward_transfers));
        tx.inputs = spends
            .iter()
            .map(|(prev, key)| TxIn {
                prev: *prev,
                auth: SpendAuth::sign(key, &msg),
            })
            .collect();
        tx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackwardTransfer {
    pub receiver: Address,
    pub amount: u64,
}

impl BackwardTransfer {
    pub fn digest(&self) -> Digest {
        digest_of(Domain::BackwardTransfer, self)
    }
}

pub fn bt_list_root(bts: &[BackwardTransfer]) -> Digest {
    merkle_root(&bts.iter().map(BackwardTransfer::digest).collect::<Vec<_>>())
}

pub fn bt_list_total(bts: &[BackwardTransfer]) -> Option<u64> {
    bts.iter().try_fold(0u64, |acc, bt| acc.checked_add(bt.amount))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalCertificate {
    pub ledger_id: LedgerId,
    pub epoch_id: u64,
    pub quality: u64,
    pub bt_list: Vec<BackwardTransfer>,
    pub proofdata: Vec<Field>,
    pub proof: StatementProof,
}

/// The part of a certificate committed in block headers. Carrying it instead
/// of the full certificate lets a verifier open proofdata without the proof.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSummary {
    pub ledger_id: LedgerId,
    pub epoch_id: u64,
    pub quality: u64,
    pub bt_root: Digest,
    pub proofdata: Vec<Field>,
    pub proof_digest: Digest,
}

impl CertSummary {
    pub fn digest(&self) -> Digest {
        digest_of(Domain::McCertificate, self)
    }
}

impl WithdrawalCertificate {
    pub fn summary(&self) -> CertSummary {
        CertSummary {
            ledger_id: self.ledger_id,
            epoch_id: self.epoch_id,
            quality: self.quality,
            bt_root: bt_list_root(&self.bt_list),
            proofdata: self.proofdata.clone(),
            proof_digest: self.proof.digest(),
        }
    }

    pub fn digest(&self) -> Digest {
        self.summary().digest()
    }

    pub fn proofdata_root(&self) -> Digest {
        proofdata_root(&self.proofdata)
    }
}

/// Shared shape of backward transfer requests and ceased sidechain
/// withdrawals; the two differ only in how the mainchain treats them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalRequest {
    pub ledger_id: LedgerId,
    pub receiver: Address,
    pub amount: u64,
    pub nullifier: Digest,
    pub proofdata: Vec<Field>,
    pub proof: StatementProof,
}

impl WithdrawalRequest {
    pub fn digest(&self) -> Digest {
        digest_of(Domain::McRequest, self)
    }

    pub fn proofdata_root(&self) -> Digest {
        proofdata_root(&self.proofdata)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("height {height} precedes sidechain start {start}")]
pub struct PreActivation {
    pub height: u64,
    pub start: u64,
}

/// Registration parameters fixed at sidechain creation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidechainConfig {
    pub ledger_id: LedgerId,
    pub start_block: u64,
    pub epoch_len: u64,
    pub submit_len: u64,
    pub wcert_vk: VerifyingKey,
    pub btr_vk: Option<VerifyingKey>,
    pub csw_vk: Option<VerifyingKey>,
    pub wcert_proofdata: ProofdataSchema,
    pub btr_proofdata: ProofdataSchema,
    pub csw_proofdata: ProofdataSchema,
}

impl SidechainConfig {
    pub fn digest(&self) -> Digest {
        digest_of(Domain::McTransaction, self)
    }

    /// `(epoch id, index within epoch)` of a mainchain height.
    pub fn epoch_of(&self, height: u64) -> Result<(u64, u64), PreActivation> {
        if height < self.start_block {
            return Err(PreActivation {
                height,
                start: self.start_block,
            });
        }
        let offset = height - self.start_block;
        Ok((offset / self.epoch_len, offset % self.epoch_len))
    }

    pub fn epoch_first_height(&self, epoch: u64) -> u64 {
        self.start_block + epoch * self.epoch_len
    }

    pub fn epoch_last_height(&self, epoch: u64) -> u64 {
        self.start_block + (epoch + 1) * self.epoch_len - 1
    }

    pub fn is_epoch_last(&self, height: u64) -> bool {
        matches!(self.epoch_of(height), Ok((_, i)) if i == self.epoch_len - 1)
    }

    /// First height at which a certificate for `epoch` is no longer accepted.
    pub fn submission_deadline(&self, epoch: u64) -> u64 {
        self.start_block + (epoch + 1) * self.epoch_len + self.submit_len
    }

    /// Latest epoch whose submission window has closed at `height`.
    pub fn last_closed_epoch(&self, height: u64) -> Option<u64> {
        let elapsed = height.checked_sub(self.start_block + self.submit_len)?;
        (elapsed / self.epoch_len).checked_sub(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct McBlockHeader {
    pub prev: Digest,
    pub height: u64,
    pub sc_txs_commitment: Digest,
    pub txs_root: Digest,
    pub nonce: u64,
}

impl McBlockHeader {
    pub fn hash(&self) -> Digest {
        digest_of(Domain::McBlock, self)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McBlockBody {
    /// Newly minted outputs; the simulation's stand-in for block rewards.
    pub coinbase: Vec<TxOut>,
    pub sidechain_creations: Vec<SidechainConfig>,
    pub transactions: Vec<McTransaction>,
    pub certificates: Vec<WithdrawalCertificate>,
    pub btrs: Vec<WithdrawalRequest>,
    pub csws: Vec<WithdrawalRequest>,
}

impl McBlockBody {
    pub fn coinbase_txid(&self, height: u64) -> Digest {
        hash_tagged(
            Domain::McTransaction,
            &[b"coinbase", &height.to_be_bytes(), &codec::encode(&self.coinbase)],
        )
    }

    /// Root over every body item in body order.
    pub fn txs_root(&self, height: u64) -> Digest {
        let mut items = vec![self.coinbase_txid(height)];
        items.extend(self.sidechain_creations.iter().map(SidechainConfig::digest));
        items.extend(self.transactions.iter().map(McTransaction::txid));
        items.extend(self.certificates.iter().map(WithdrawalCertificate::digest));
        items.extend(self.btrs.iter().map(WithdrawalRequest::digest));
        items.extend(self.csws.iter().map(WithdrawalRequest::digest));
        merkle_root(&items)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McBlock {
    pub header: McBlockHeader,
    pub body: McBlockBody,
}

impl McBlock {
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }
}
