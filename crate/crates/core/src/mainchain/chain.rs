//! Block tree with longest-chain fork choice.
//!
//! Every stored block keeps the ledger state obtained by applying it to its
//! parent's state, so switching branches never replays history.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::commitment::build_sctx_commitment;
use super::ledger::{apply_block, BlockContext, BlockError, LedgerState, RejectReason};
use super::types::{
    McBlock, McBlockBody, McBlockHeader, McTransaction, SidechainConfig, TxOut,
    WithdrawalCertificate, WithdrawalRequest,
};
use crate::crypto::Digest;
use crate::proofsys::ProofSystem;

/// A pending mainchain submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum McItem {
    CreateSidechain(SidechainConfig),
    Transaction(McTransaction),
    Certificate(WithdrawalCertificate),
    Btr(WithdrawalRequest),
    Csw(WithdrawalRequest),
}

impl McItem {
    /// Requests precede certificates: a request's proof names the latest
    /// certificate before its block, never one landing in the same block.
    fn order(&self) -> u8 {
        match self {
            McItem::CreateSidechain(_) => 0,
            McItem::Transaction(_) => 1,
            McItem::Btr(_) => 2,
            McItem::Csw(_) => 3,
            McItem::Certificate(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            McItem::CreateSidechain(_) => "creation",
            McItem::Transaction(_) => "transaction",
            McItem::Certificate(_) => "certificate",
            McItem::Btr(_) => "btr",
            McItem::Csw(_) => "csw",
        }
    }
}

#[derive(Clone, Debug)]
pub struct McEntry {
    pub block: Arc<McBlock>,
    pub state: Arc<LedgerState>,
    /// Arrival order; earlier wins height ties.
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendOutcome {
    pub hash: Digest,
    pub new_tip: bool,
    /// Blocks removed from the active chain by this extension.
    pub orphaned: Vec<Digest>,
}

#[derive(Clone, Debug)]
pub struct Assembled {
    pub block: McBlock,
    /// `(index into the submitted items, reason)` for every dropped item.
    pub rejected: Vec<(usize, RejectReason)>,
}

#[derive(Clone)]
pub struct McChain {
    proofs: Arc<ProofSystem>,
    entries: HashMap<Digest, McEntry>,
    genesis: Digest,
    tip: Digest,
    /// Hashes of the active chain indexed by height.
    active: Vec<Digest>,
    next_seq: u64,
}

impl McChain {
    pub fn new(proofs: Arc<ProofSystem>, premine: Vec<TxOut>) -> Self {
        let body = McBlockBody {
            coinbase: premine,
            ..Default::default()
        };
        let header = McBlockHeader {
            prev: Digest::ZERO,
            height: 0,
            sc_txs_commitment: build_sctx_commitment(&body).expect("empty body"),
            txs_root: body.txs_root(0),
            nonce: 0,
        };
        let block = McBlock { header, body };
        let mut state = LedgerState::default();
        state.add_coinbase(block.body.coinbase_txid(0), &block.body.coinbase);
        let hash = block.hash();
        let mut entries = HashMap::new();
        entries.insert(
            hash,
            McEntry {
                block: Arc::new(block),
                state: Arc::new(state),
                seq: 0,
            },
        );
        McChain {
            proofs,
            entries,
            genesis: hash,
            tip: hash,
            active: vec![hash],
            next_seq: 1,
        }
    }

    pub fn proofs(&self) -> &Arc<ProofSystem> {
        &self.proofs
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn tip(&self) -> Digest {
        self.tip
    }

    pub fn height(&self) -> u64 {
        self.active.len() as u64 - 1
    }

    pub fn tip_state(&self) -> &LedgerState {
        &self.entries[&self.tip].state
    }

    pub fn entry(&self, hash: &Digest) -> Option<&McEntry> {
        self.entries.get(hash)
    }

    pub fn block(&self, hash: &Digest) -> Option<&McBlock> {
        self.entries.get(hash).map(|e| e.block.as_ref())
    }

    pub fn state(&self, hash: &Digest) -> Option<&LedgerState> {
        self.entries.get(hash).map(|e| e.state.as_ref())
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.entries.contains_key(hash)
    }

    pub fn active_hash_at(&self, height: u64) -> Option<Digest> {
        self.active.get(height as usize).copied()
    }

    pub fn active_chain(&self) -> &[Digest] {
        &self.active
    }

    pub fn is_active(&self, hash: &Digest) -> bool {
        self.entries
            .get(hash)
            .is_some_and(|e| self.active_hash_at(e.block.header.height) == Some(*hash))
    }

    pub fn all_blocks(&self) -> impl Iterator<Item = &McEntry> {
        self.entries.values()
    }

    /// Hash of the block at `height` on the branch ending in `from`.
    pub fn ancestor_at(&self, from: &Digest, height: u64) -> Option<Digest> {
        let mut cur = self.entries.get(from)?;
        if cur.block.header.height < height {
            return None;
        }
        if self.is_active(from) {
            return self.active_hash_at(height);
        }
        while cur.block.header.height > height {
            let prev = cur.block.header.prev;
            if self.is_active(&prev) {
                return self.active_hash_at(height);
            }
            cur = self.entries.get(&prev)?;
        }
        Some(cur.block.hash())
    }

    pub fn extend_chain(&mut self, block: McBlock) -> Result<ExtendOutcome, BlockError> {
        let hash = block.hash();
        if self.entries.contains_key(&hash) {
            return Err(BlockError::Duplicate);
        }
        let parent_hash = block.header.prev;
        let parent = self.entries.get(&parent_hash).ok_or(BlockError::UnknownParent)?;
        let ancestor = |h: u64| self.ancestor_at(&parent_hash, h);
        let state = apply_block(&parent.state, &block, &self.proofs, &ancestor)?;
        let height = block.header.height;
        self.entries.insert(
            hash,
            McEntry {
                block: Arc::new(block),
                state: Arc::new(state),
                seq: self.next_seq,
            },
        );
        self.next_seq += 1;
        let mut orphaned = Vec::new();
        let new_tip = height > self.height();
        if new_tip {
            orphaned = self.switch_to(hash);
        }
        Ok(ExtendOutcome {
            hash,
            new_tip,
            orphaned,
        })
    }

    fn switch_to(&mut self, tip: Digest) -> Vec<Digest> {
        let height = self.entries[&tip].block.header.height as usize;
        let mut branch = Vec::new();
        let mut cur = tip;
        loop {
            let h = self.entries[&cur].block.header.height as usize;
            if self.active.get(h) == Some(&cur) {
                break;
            }
            branch.push(cur);
            cur = self.entries[&cur].block.header.prev;
        }
        let fork_height = height + 1 - branch.len();
        let orphaned = self.active.split_off(fork_height);
        self.active.extend(branch.into_iter().rev());
        self.tip = tip;
        orphaned
    }

    /// Builds a valid block on `parent` from the submitted items, dropping
    /// the ones that fail. Items are applied grouped by kind, in the same
    /// order block validation uses.
    pub fn assemble_block(&self, parent: &Digest, items: &[McItem], coinbase: Vec<TxOut>, nonce: u64) -> Option<Assembled> {
        let parent_entry = self.entries.get(parent)?;
        let height = parent_entry.block.header.height + 1;
        let ancestor = |h: u64| self.ancestor_at(parent, h);
        let ctx = BlockContext {
            proofs: &self.proofs,
            height,
            block_hash: Digest::ZERO,
            ancestor: &ancestor,
        };
        let mut state = (*parent_entry.state).clone();
        state.begin_block(height);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by_key(|i| items[*i].order());
        let mut body = McBlockBody {
            coinbase,
            ..Default::default()
        };
        state.add_coinbase(body.coinbase_txid(height), &body.coinbase);
        let mut rejected = Vec::new();
        for i in order {
            let result = match &items[i] {
                McItem::CreateSidechain(cfg) => state.apply_creation(cfg).map(|_| body.sidechain_creations.push(cfg.clone())),
                McItem::Transaction(tx) => state.apply_transaction(tx).map(|_| body.transactions.push(tx.clone())),
                McItem::Certificate(cert) => {
                    if body.certificates.iter().any(|c| c.ledger_id == cert.ledger_id) {
                        Err(RejectReason::DuplicateCertInBlock)
                    } else {
                        state.apply_wcert(&ctx, cert).map(|_| body.certificates.push(cert.clone()))
                    }
                }
                McItem::Btr(r) => state.apply_btr(&ctx, r).map(|_| body.btrs.push(r.clone())),
                McItem::Csw(r) => state.apply_csw(&ctx, r).map(|_| body.csws.push(r.clone())),
            };
            if let Err(reason) = result {
                rejected.push((i, reason));
            }
        }
        rejected.sort_by_key(|(i, _)| *i);
        let header = McBlockHeader {
            prev: *parent,
            height,
            sc_txs_commitment: build_sctx_commitment(&body).expect("one certificate per ledger"),
            txs_root: body.txs_root(height),
            nonce,
        };
        Some(Assembled {
            block: McBlock { header, body },
            rejected,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash_bytes, Keypair};
    use crate::mainchain::types::OutPoint;

    fn chain() -> (McChain, Keypair) {
        let key = Keypair::from_seed(&hash_bytes(b"miner"));
        let c = McChain::new(
            Arc::new(ProofSystem::new()),
            vec![TxOut {
                addr: key.address(),
                amount: 100,
            }],
        );
        (c, key)
    }

    fn empty_block(c: &McChain, parent: Digest, nonce: u64) -> McBlock {
        c.assemble_block(&parent, &[], vec![], nonce).unwrap().block
    }

    #[test]
    fn linear_extension_advances_tip() {
        let (mut c, _) = chain();
        let g = c.tip();
        let b1 = empty_block(&c, g, 0);
        let out = c.extend_chain(b1.clone()).unwrap();
        assert!(out.new_tip);
        assert_eq!(c.tip(), b1.hash());
        assert_eq!(c.height(), 1);
        assert_eq!(c.extend_chain(b1), Err(BlockError::Duplicate));
    }

    #[test]
    fn longer_fork_wins_and_ties_keep_first_seen() {
        let (mut c, _) = chain();
        let g = c.tip();
        let a1 = empty_block(&c, g, 1);
        c.extend_chain(a1.clone()).unwrap();
        let b1 = empty_block(&c, g, 2);
        let out = c.extend_chain(b1.clone()).unwrap();
        assert!(!out.new_tip);
        assert_eq!(c.tip(), a1.hash());
        let b2 = empty_block(&c, b1.hash(), 2);
        let out = c.extend_chain(b2.clone()).unwrap();
        assert!(out.new_tip);
        assert_eq!(out.orphaned, vec![a1.hash()]);
        assert_eq!(c.tip(), b2.hash());
        assert!(c.is_active(&b1.hash()) && !c.is_active(&a1.hash()));
        assert_eq!(c.ancestor_at(&a1.hash(), 0), Some(g));
        assert_eq!(c.ancestor_at(&a1.hash(), 1), Some(a1.hash()));
    }

    #[test]
    fn reorg_drops_orphaned_transaction() {
        let (mut c, key) = chain();
        let g = c.tip();
        let coin = OutPoint {
            txid: c.block(&g).unwrap().body.coinbase_txid(0),
            index: 0,
        };
        let other = Keypair::from_seed(&hash_bytes(b"other"));
        let tx = McTransaction::signed(
            &[(coin, &key)],
            vec![TxOut {
                addr: other.address(),
                amount: 100,
            }],
            vec![],
        );
        let a1 = c.assemble_block(&g, &[McItem::Transaction(tx)], vec![], 1).unwrap();
        assert!(a1.rejected.is_empty());
        c.extend_chain(a1.block).unwrap();
        assert_eq!(c.tip_state().balance_of(&other.address()), 100);
        let b1 = empty_block(&c, g, 2);
        c.extend_chain(b1.clone()).unwrap();
        c.extend_chain(empty_block(&c, b1.hash(), 2)).unwrap();
        assert_eq!(c.tip_state().balance_of(&other.address()), 0);
        assert_eq!(c.tip_state().balance_of(&key.address()), 100);
    }

    #[test]
    fn invalid_blocks_rejected() {
        let (mut c, _) = chain();
        let g = c.tip();
        let mut b = empty_block(&c, g, 0);
        b.header.sc_txs_commitment = Digest::ZERO;
        assert_eq!(c.extend_chain(b), Err(BlockError::BadCommitment));
        let mut b = empty_block(&c, g, 0);
        b.header.height = 5;
        assert_eq!(c.extend_chain(b), Err(BlockError::BadHeight));
        let mut b = empty_block(&c, g, 0);
        b.header.prev = Digest([7; 32]);
        assert_eq!(c.extend_chain(b), Err(BlockError::UnknownParent));
    }
}
