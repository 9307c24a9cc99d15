//! Mainchain ledger state and the per-item validation rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::commitment::{build_sctx_commitment, CommitmentError};
use super::types::{
    bt_list_root, bt_list_total, LedgerId, McBlock, McTransaction, OutPoint, SidechainConfig,
    TxOut, WithdrawalCertificate, WithdrawalRequest,
};
use crate::crypto::{Address, Digest};
use crate::proofsys::{schema_matches, Field, ProofSystem, PublicInput, StatementId};

/// Machine-readable rejection codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownSidechain,
    InactiveSidechain,
    SidechainActive,
    DuplicateLedger,
    InvalidParams,
    WrongEpoch,
    WindowClosed,
    QualityLower,
    QualityEqual,
    DuplicateCertInBlock,
    SchemaMismatch,
    Safeguard,
    BadProof,
    WithdrawalsDisabled,
    NoCertificate,
    NullifierUsed,
    MissingInput,
    ImmatureInput,
    BadSignature,
    DoubleSpend,
    InvalidAmount,
    ValueImbalance,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::UnknownSidechain => "unknown_sidechain",
            RejectReason::InactiveSidechain => "inactive_sidechain",
            RejectReason::SidechainActive => "sidechain_active",
            RejectReason::DuplicateLedger => "duplicate_ledger",
            RejectReason::InvalidParams => "invalid_params",
            RejectReason::WrongEpoch => "wrong_epoch",
            RejectReason::WindowClosed => "window_closed",
            RejectReason::QualityLower => "quality_lower",
            RejectReason::QualityEqual => "quality_equal",
            RejectReason::DuplicateCertInBlock => "duplicate_cert_in_block",
            RejectReason::SchemaMismatch => "schema_mismatch",
            RejectReason::Safeguard => "safeguard",
            RejectReason::BadProof => "bad_proof",
            RejectReason::WithdrawalsDisabled => "withdrawals_disabled",
            RejectReason::NoCertificate => "no_certificate",
            RejectReason::NullifierUsed => "nullifier_used",
            RejectReason::MissingInput => "missing_input",
            RejectReason::ImmatureInput => "immature_input",
            RejectReason::BadSignature => "bad_signature",
            RejectReason::DoubleSpend => "double_spend",
            RejectReason::InvalidAmount => "invalid_amount",
            RejectReason::ValueImbalance => "value_imbalance",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidechainStatus {
    Active,
    Ceased,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedCert {
    pub epoch_id: u64,
    pub quality: u64,
    pub cert_hash: Digest,
    pub block_hash: Digest,
    pub block_height: u64,
    pub proofdata_root: Digest,
    pub bt_total: u64,
    pub payouts: Vec<OutPoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidechainEntry {
    pub config: SidechainConfig,
    pub created_at: u64,
    pub balance: u64,
    pub status: SidechainStatus,
    pub ceased_at: Option<u64>,
    pub certs: BTreeMap<u64, AcceptedCert>,
    pub nullifiers: BTreeSet<Digest>,
}

impl SidechainEntry {
    pub fn last_cert(&self) -> Option<&AcceptedCert> {
        self.certs.values().next_back()
    }

    pub fn is_active_at(&self, height: u64) -> bool {
        self.status == SidechainStatus::Active && height >= self.config.start_block
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtxoEntry {
    pub out: TxOut,
    /// First height at which the output may be spent.
    pub spendable_from: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LedgerState {
    pub height: u64,
    pub utxos: BTreeMap<OutPoint, UtxoEntry>,
    pub sidechains: BTreeMap<LedgerId, SidechainEntry>,
}

/// Information about the block being applied that item rules depend on.
pub struct BlockContext<'a> {
    pub proofs: &'a ProofSystem,
    pub height: u64,
    pub block_hash: Digest,
    /// Hash of the block at a given height on this block's branch.
    pub ancestor: &'a dyn Fn(u64) -> Option<Digest>,
}

pub fn wcert_public_input(
    quality: u64,
    bt_root: Digest,
    prev_epoch_last: Digest,
    epoch_last: Digest,
    prev_proofdata_root: Digest,
    proofdata_root: Digest,
) -> PublicInput {
    PublicInput::new(vec![
        Field::Integer(quality),
        Field::Digest(bt_root),
        Field::Digest(prev_epoch_last),
        Field::Digest(epoch_last),
        Field::Digest(prev_proofdata_root),
        Field::Digest(proofdata_root),
    ])
}

pub fn request_public_input(
    cert_block: Digest,
    nullifier: Digest,
    receiver: Address,
    amount: u64,
    proofdata_root: Digest,
) -> PublicInput {
    PublicInput::new(vec![
        Field::Digest(cert_block),
        Field::Digest(nullifier),
        Field::Digest(receiver.0),
        Field::Integer(amount),
        Field::Digest(proofdata_root),
    ])
}

impl LedgerState {
    pub fn sidechain(&self, id: &LedgerId) -> Option<&SidechainEntry> {
        self.sidechains.get(id)
    }

    pub fn balance_of(&self, addr: &Address) -> u64 {
        self.utxos
            .values()
            .filter(|u| u.out.addr == *addr)
            .map(|u| u.out.amount)
            .sum()
    }

    pub fn outputs_of(&self, addr: &Address) -> Vec<(OutPoint, UtxoEntry)> {
        self.utxos
            .iter()
            .filter(|(_, u)| u.out.addr == *addr)
            .map(|(p, u)| (*p, *u))
            .collect()
    }

    /// Moves to `height` and ceases every sidechain with a missed
    /// certificate deadline.
    pub fn begin_block(&mut self, height: u64) -> Vec<LedgerId> {
        self.height = height;
        let mut ceased = Vec::new();
        for (id, sc) in self.sidechains.iter_mut() {
            if sc.status != SidechainStatus::Active {
                continue;
            }
            let Some(due) = sc.config.last_closed_epoch(height) else {
                continue;
            };
            if sc.last_cert().map_or(true, |c| c.epoch_id < due) {
                sc.status = SidechainStatus::Ceased;
                sc.ceased_at = Some(height);
                ceased.push(*id);
            }
        }
        ceased
    }

    pub fn add_coinbase(&mut self, txid: Digest, outputs: &[TxOut]) {
        for (i, out) in outputs.iter().enumerate() {
            self.utxos.insert(
                OutPoint {
                    txid,
                    index: i as u32,
                },
                UtxoEntry {
                    out: *out,
                    spendable_from: self.height,
                },
            );
        }
    }

    pub fn check_creation(&self, cfg: &SidechainConfig) -> Result<(), RejectReason> {
        if self.sidechains.contains_key(&cfg.ledger_id) {
            return Err(RejectReason::DuplicateLedger);
        }
        let vk_ok = |vk: &Option<crate::proofsys::VerifyingKey>, s: StatementId| {
            vk.map_or(true, |vk| vk.statement == s && vk.is_well_formed())
        };
        let valid = cfg.ledger_id != Digest::ZERO
            && cfg.start_block > self.height
            && cfg.epoch_len >= 2
            && cfg.submit_len >= 1
            && cfg.submit_len < cfg.epoch_len
            && cfg.wcert_vk.statement == StatementId::WCert
            && cfg.wcert_vk.is_well_formed()
            && vk_ok(&cfg.btr_vk, StatementId::Btr)
            && vk_ok(&cfg.csw_vk, StatementId::Csw);
        if valid {
            Ok(())
        } else {
            Err(RejectReason::InvalidParams)
        }
    }

    pub fn apply_creation(&mut self, cfg: &SidechainConfig) -> Result<(), RejectReason> {
        self.check_creation(cfg)?;
        self.sidechains.insert(
            cfg.ledger_id,
            SidechainEntry {
                config: cfg.clone(),
                created_at: self.height,
                balance: 0,
                status: SidechainStatus::Active,
                ceased_at: None,
                certs: BTreeMap::new(),
                nullifiers: BTreeSet::new(),
            },
        );
        Ok(())
    }

    pub fn check_transaction(&self, tx: &McTransaction) -> Result<(), RejectReason> {
        let sighash = tx.sighash();
        let mut seen = BTreeSet::new();
        let mut total_in: u64 = 0;
        for input in &tx.inputs {
            if !seen.insert(input.prev) {
                return Err(RejectReason::DoubleSpend);
            }
            let entry = self.utxos.get(&input.prev).ok_or(RejectReason::MissingInput)?;
            if entry.spendable_from > self.height {
                return Err(RejectReason::ImmatureInput);
            }
            if !input.auth.authorizes(&entry.out.addr, &sighash) {
                return Err(RejectReason::BadSignature);
            }
            total_in = total_in.checked_add(entry.out.amount).ok_or(RejectReason::InvalidAmount)?;
        }
        let mut total_out: u64 = 0;
        for out in &tx.outputs {
            if out.amount == 0 {
                return Err(RejectReason::InvalidAmount);
            }
            total_out = total_out.checked_add(out.amount).ok_or(RejectReason::InvalidAmount)?;
        }
        for ft in &tx.forward_transfers {
            if ft.amount == 0 {
                return Err(RejectReason::InvalidAmount);
            }
            let sc = self.sidechains.get(&ft.ledger_id).ok_or(RejectReason::UnknownSidechain)?;
            if !sc.is_active_at(self.height) {
                return Err(RejectReason::InactiveSidechain);
            }
            total_out = total_out.checked_add(ft.amount).ok_or(RejectReason::InvalidAmount)?;
        }
        if total_in < total_out {
            return Err(RejectReason::ValueImbalance);
        }
        Ok(())
    }

    /// Forward transfer outputs are not added to the UTXO set: the coins are
    /// destroyed here and credited to the sidechain balance.
    pub fn apply_transaction(&mut self, tx: &McTransaction) -> Result<(), RejectReason> {
        self.check_transaction(tx)?;
        for input in &tx.inputs {
            self.utxos.remove(&input.prev);
        }
        let txid = tx.txid();
        for (i, out) in tx.outputs.iter().enumerate() {
            self.utxos.insert(
                OutPoint {
                    txid,
                    index: i as u32,
                },
                UtxoEntry {
                    out: *out,
                    spendable_from: self.height,
                },
            );
        }
        for ft in &tx.forward_transfers {
            let sc = self.sidechains.get_mut(&ft.ledger_id).expect("checked above");
            sc.balance += ft.amount;
        }
        Ok(())
    }

    /// The rules of certificate acceptance, in order: active id, epoch and
    /// window, quality, proofdata schema and amounts, safeguard, proof.
    pub fn verify_wcert(&self, ctx: &BlockContext<'_>, cert: &WithdrawalCertificate) -> Result<(), RejectReason> {
        let sc = self
            .sidechains
            .get(&cert.ledger_id)
            .ok_or(RejectReason::UnknownSidechain)?;
        if !sc.is_active_at(ctx.height) {
            return Err(RejectReason::InactiveSidechain);
        }
        let cfg = &sc.config;
        let (current, index) = cfg.epoch_of(ctx.height).map_err(|_| RejectReason::InactiveSidechain)?;
        if cert.epoch_id.checked_add(1) != Some(current) {
            return Err(RejectReason::WrongEpoch);
        }
        if index >= cfg.submit_len {
            return Err(RejectReason::WindowClosed);
        }
        let previous = sc.certs.get(&cert.epoch_id);
        if let Some(prev) = previous {
            if cert.quality < prev.quality {
                return Err(RejectReason::QualityLower);
            }
            if cert.quality == prev.quality {
                return Err(RejectReason::QualityEqual);
            }
        }
        if !schema_matches(&cfg.wcert_proofdata, &cert.proofdata) {
            return Err(RejectReason::SchemaMismatch);
        }
        if cert.bt_list.iter().any(|bt| bt.amount == 0) {
            return Err(RejectReason::InvalidAmount);
        }
        let total = bt_list_total(&cert.bt_list).ok_or(RejectReason::Safeguard)?;
        let available = sc.balance + previous.map_or(0, |p| p.bt_total);
        if total > available {
            return Err(RejectReason::Safeguard);
        }
        let prev_proofdata_root = match cert.epoch_id {
            0 => Digest::ZERO,
            e => sc
                .certs
                .get(&(e - 1))
                .map(|c| c.proofdata_root)
                .ok_or(RejectReason::InactiveSidechain)?,
        };
        let epoch_last = (ctx.ancestor)(cfg.epoch_last_height(cert.epoch_id)).ok_or(RejectReason::WrongEpoch)?;
        let prev_epoch_last = (ctx.ancestor)(cfg.epoch_first_height(cert.epoch_id) - 1).ok_or(RejectReason::WrongEpoch)?;
        let public = wcert_public_input(
            cert.quality,
            bt_list_root(&cert.bt_list),
            prev_epoch_last,
            epoch_last,
            prev_proofdata_root,
            cert.proofdata_root(),
        );
        if !ctx.proofs.verify(&cfg.wcert_vk, &public, &cert.proof) {
            return Err(RejectReason::BadProof);
        }
        Ok(())
    }

    /// Accepts a certificate; a better certificate for the same epoch rolls
    /// back the earlier one's payouts, which are still immature.
    pub fn apply_wcert(&mut self, ctx: &BlockContext<'_>, cert: &WithdrawalCertificate) -> Result<(), RejectReason> {
        self.verify_wcert(ctx, cert)?;
        let sc = self.sidechains.get_mut(&cert.ledger_id).expect("verified");
        if let Some(old) = sc.certs.remove(&cert.epoch_id) {
            for p in &old.payouts {
                let removed = self.utxos.remove(p);
                debug_assert!(removed.is_some(), "immature payout already spent");
            }
            sc.balance += old.bt_total;
        }
        let total = bt_list_total(&cert.bt_list).expect("verified");
        sc.balance -= total;
        let cert_hash = cert.digest();
        let maturity = sc.config.submission_deadline(cert.epoch_id);
        let mut payouts = Vec::with_capacity(cert.bt_list.len());
        for (i, bt) in cert.bt_list.iter().enumerate() {
            let p = OutPoint {
                txid: cert_hash,
                index: i as u32,
            };
            self.utxos.insert(
                p,
                UtxoEntry {
                    out: TxOut {
                        addr: bt.receiver,
                        amount: bt.amount,
                    },
                    spendable_from: maturity,
                },
            );
            payouts.push(p);
        }
        sc.certs.insert(
            cert.epoch_id,
            AcceptedCert {
                epoch_id: cert.epoch_id,
                quality: cert.quality,
                cert_hash,
                block_hash: ctx.block_hash,
                block_height: ctx.height,
                proofdata_root: cert.proofdata_root(),
                bt_total: total,
                payouts,
            },
        );
        Ok(())
    }

    fn check_request_common(
        &self,
        ctx: &BlockContext<'_>,
        req: &WithdrawalRequest,
        statement: StatementId,
    ) -> Result<(), RejectReason> {
        let sc = self
            .sidechains
            .get(&req.ledger_id)
            .ok_or(RejectReason::UnknownSidechain)?;
        let (vk, schema) = match statement {
            StatementId::Btr => {
                if !sc.is_active_at(ctx.height) {
                    return Err(RejectReason::InactiveSidechain);
                }
                (sc.config.btr_vk, &sc.config.btr_proofdata)
            }
            _ => {
                if sc.status != SidechainStatus::Ceased {
                    return Err(RejectReason::SidechainActive);
                }
                (sc.config.csw_vk, &sc.config.csw_proofdata)
            }
        };
        let vk = vk.ok_or(RejectReason::WithdrawalsDisabled)?;
        if req.amount == 0 {
            return Err(RejectReason::InvalidAmount);
        }
        if !schema_matches(schema, &req.proofdata) {
            return Err(RejectReason::SchemaMismatch);
        }
        if sc.nullifiers.contains(&req.nullifier) {
            return Err(RejectReason::NullifierUsed);
        }
        let last = sc.last_cert().ok_or(RejectReason::NoCertificate)?;
        if statement == StatementId::Csw && req.amount > sc.balance {
            return Err(RejectReason::Safeguard);
        }
        let public = request_public_input(
            last.block_hash,
            req.nullifier,
            req.receiver,
            req.amount,
            req.proofdata_root(),
        );
        if !ctx.proofs.verify(&vk, &public, &req.proof) {
            return Err(RejectReason::BadProof);
        }
        Ok(())
    }

    pub fn verify_btr(&self, ctx: &BlockContext<'_>, btr: &WithdrawalRequest) -> Result<(), RejectReason> {
        self.check_request_common(ctx, btr, StatementId::Btr)
    }

    /// Marks the nullifier; no coins move until a certificate pays out.
    pub fn apply_btr(&mut self, ctx: &BlockContext<'_>, btr: &WithdrawalRequest) -> Result<(), RejectReason> {
        self.verify_btr(ctx, btr)?;
        let sc = self.sidechains.get_mut(&btr.ledger_id).expect("verified");
        sc.nullifiers.insert(btr.nullifier);
        Ok(())
    }

    pub fn verify_csw(&self, ctx: &BlockContext<'_>, csw: &WithdrawalRequest) -> Result<(), RejectReason> {
        self.check_request_common(ctx, csw, StatementId::Csw)
    }

    pub fn apply_csw(&mut self, ctx: &BlockContext<'_>, csw: &WithdrawalRequest) -> Result<(), RejectReason> {
        self.verify_csw(ctx, csw)?;
        let sc = self.sidechains.get_mut(&csw.ledger_id).expect("verified");
        sc.nullifiers.insert(csw.nullifier);
        sc.balance -= csw.amount;
        self.utxos.insert(
            OutPoint {
                txid: csw.digest(),
                index: 0,
            },
            UtxoEntry {
                out: TxOut {
                    addr: csw.receiver,
                    amount: csw.amount,
                },
                spendable_from: self.height,
            },
        );
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("unknown parent block")]
    UnknownParent,
    #[error("block already known")]
    Duplicate,
    #[error("height does not follow parent")]
    BadHeight,
    #[error("header commitment does not match body")]
    BadCommitment,
    #[error("txs root does not match body")]
    BadTxsRoot,
    #[error(transparent)]
    Commitment(#[from] CommitmentError),
    #[error("invalid {kind} #{index}: {reason}")]
    InvalidItem {
        kind: &'static str,
        index: usize,
        reason: RejectReason,
    },
}

/// Full validation of a block on top of `parent`, in the fixed item order:
/// ceasing checks, creations, transactions, certificates, BTRs, CSWs.
pub fn apply_block(
    parent: &LedgerState,
    block: &McBlock,
    proofs: &ProofSystem,
    ancestor: &dyn Fn(u64) -> Option<Digest>,
) -> Result<LedgerState, BlockError> {
    let height = block.header.height;
    if height != parent.height + 1 {
        return Err(BlockError::BadHeight);
    }
    if block.header.sc_txs_commitment != build_sctx_commitment(&block.body)? {
        return Err(BlockError::BadCommitment);
    }
    if block.header.txs_root != block.body.txs_root(height) {
        return Err(BlockError::BadTxsRoot);
    }
    let ctx = BlockContext {
        proofs,
        height,
        block_hash: block.hash(),
        ancestor,
    };
    let mut state = parent.clone();
    state.begin_block(height);
    state.add_coinbase(block.body.coinbase_txid(height), &block.body.coinbase);
    let invalid = |kind, index, reason| BlockError::InvalidItem { kind, index, reason };
    for (i, cfg) in block.body.sidechain_creations.iter().enumerate() {
        state.apply_creation(cfg).map_err(|r| invalid("creation", i, r))?;
    }
    for (i, tx) in block.body.transactions.iter().enumerate() {
        state.apply_transaction(tx).map_err(|r| invalid("transaction", i, r))?;
    }
    for (i, btr) in block.body.btrs.iter().enumerate() {
        state.apply_btr(&ctx, btr).map_err(|r| invalid("btr", i, r))?;
    }
    for (i, csw) in block.body.csws.iter().enumerate() {
        state.apply_csw(&ctx, csw).map_err(|r| invalid("csw", i, r))?;
    }
    for (i, cert) in block.body.certificates.iter().enumerate() {
        state.apply_wcert(&ctx, cert).map_err(|r| invalid("certificate", i, r))?;
    }
    Ok(state)
}
