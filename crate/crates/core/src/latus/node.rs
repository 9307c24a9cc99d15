//! A sidechain node: block validation, forging, fork choice bound to the
//! mainchain, and certificate generation.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{hash_tagged, Address, Digest, Domain, Keypair, Utxo};
use crate::mainchain::{McChain, WithdrawalCertificate, WithdrawalRequest};
use crate::proofsys::{Field, ProofSystem};
use crate::transition::{BlockContextInfo, ProveError, TransitionProof, TransitionProver};

use super::block::{check_refs, BlockStep, McPointer, RefError, ScBlock, ScBlockHeader};
use super::consensus::{slot_leader, StakeDistribution};
use super::mcref::{make_mc_reference, McRefError};
use super::params::{LatusParams, ParamsError};
use super::state::{OverlayStore, ScState, TxError};
use super::tx::{ScTransaction, Transition};
use super::withdrawal::{build_request, RequestError, RequestKind};

#[derive(Clone, Debug)]
pub struct ScEntry {
    /// `None` for genesis.
    pub block: Option<Arc<ScBlock>>,
    pub hash: Digest,
    pub parent: Digest,
    pub height: u64,
    pub slot: u64,
    pub state: Arc<ScState>,
    pub mc_before: McPointer,
    pub mc_after: McPointer,
    pub starts_epoch: bool,
    pub ends_epoch: bool,
    /// Withdrawal epoch the block belongs to; `None` for genesis.
    pub epoch: Option<u64>,
    seq: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScBlockError {
    #[error("block already known")]
    Duplicate,
    #[error("unknown parent")]
    UnknownParent,
    #[error("height does not follow the parent")]
    BadHeight,
    #[error("slot does not advance")]
    BadSlot,
    #[error("forger signature invalid")]
    BadSignature,
    #[error("body does not match the header")]
    BadBody,
    #[error("forger is not the slot leader")]
    NotLeader,
    #[error("reference to unknown mainchain block")]
    UnknownMcBlock,
    #[error(transparent)]
    Refs(#[from] RefError),
    #[error("transition {index} invalid: {error}")]
    Transition { index: usize, error: TxError },
    #[error("header state digest mismatch")]
    BadState,
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("key is not the leader of slot {0}")]
    NotLeader(u64),
    #[error("slot {0} does not follow the tip")]
    StaleSlot(u64),
    #[error("tip references a mainchain block that is no longer active")]
    DetachedTip,
    #[error(transparent)]
    Reference(#[from] McRefError),
    #[error(transparent)]
    Block(#[from] ScBlockError),
}

#[derive(Debug, Error)]
pub enum CertError {
    #[error("epoch {0} is not closed on the current chain")]
    EpochNotClosed(u64),
    #[error(transparent)]
    Prove(#[from] ProveError),
}

#[derive(Debug)]
pub struct Forged {
    pub hash: Digest,
    pub block: Arc<ScBlock>,
    /// Submitted transactions left out, with the reason.
    pub dropped: Vec<(usize, TxError)>,
}

#[derive(Clone)]
pub struct LatusNode {
    params: LatusParams,
    proofs: Arc<ProofSystem>,
    entries: HashMap<Digest, ScEntry>,
    genesis: Digest,
    tip: Digest,
    next_seq: u64,
    block_proofs: HashMap<Digest, (TransitionProof, BlockStep)>,
    stakes: HashMap<Digest, Arc<StakeDistribution>>,
}

impl LatusNode {
    /// `genesis_mc` is the mainchain block right before `start_block`.
    pub fn new(params: LatusParams, proofs: Arc<ProofSystem>, genesis_mc: McPointer) -> Result<Self, ParamsError> {
        params.validate()?;
        let genesis = params.genesis_hash();
        let state = ScState::genesis(params.mst_depth).map_err(|_| ParamsError("mst_depth"))?;
        let entry = ScEntry {
            block: None,
            hash: genesis,
            parent: Digest::ZERO,
            height: 0,
            slot: 0,
            state: Arc::new(state),
            mc_before: genesis_mc,
            mc_after: genesis_mc,
            starts_epoch: false,
            ends_epoch: true,
            epoch: None,
            seq: 0,
        };
        Ok(LatusNode {
            params,
            proofs,
            entries: HashMap::from([(genesis, entry)]),
            genesis,
            tip: genesis,
            next_seq: 1,
            block_proofs: HashMap::new(),
            stakes: HashMap::new(),
        })
    }

    pub fn params(&self) -> &LatusParams {
        &self.params
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn tip(&self) -> Digest {
        self.tip
    }

    pub fn tip_entry(&self) -> &ScEntry {
        &self.entries[&self.tip]
    }

    pub fn tip_state(&self) -> &ScState {
        &self.entries[&self.tip].state
    }

    pub fn entry(&self, hash: &Digest) -> Option<&ScEntry> {
        self.entries.get(hash)
    }

    pub fn entries(&self) -> impl Iterator<Item = &ScEntry> {
        self.entries.values()
    }

    pub fn utxos_of(&self, addr: &Address) -> Vec<Utxo> {
        self.tip_state().mst.utxos().filter(|u| u.addr == *addr).copied().collect()
    }

    /// Hashes from genesis to the tip.
    pub fn chain(&self) -> Vec<Digest> {
        let mut out = vec![self.tip];
        let mut cur = &self.entries[&self.tip];
        while cur.hash != self.genesis {
            out.push(cur.parent);
            cur = &self.entries[&cur.parent];
        }
        out.reverse();
        out
    }

    fn ancestor_before_slot(&self, from: &Digest, bound: u64) -> Digest {
        let mut cur = &self.entries[from];
        while cur.slot >= bound && cur.hash != self.genesis {
            cur = &self.entries[&cur.parent];
        }
        cur.hash
    }

    /// Leader of `slot` for a block extending `parent`. Randomness comes
    /// from the last block before the slot's consensus epoch; stake from
    /// the last block two epochs back, on top of the genesis stakes.
    pub fn leader_for(&mut self, parent: &Digest, slot: u64) -> Option<Address> {
        let k = self.params.slots_per_epoch;
        let ce = self.params.consensus_epoch(slot);
        let rand_block = if ce == 0 {
            self.genesis
        } else {
            self.ancestor_before_slot(parent, ce * k)
        };
        let rand = hash_tagged(Domain::SlotSeed, &[&rand_block.0, &ce.to_be_bytes()]);
        let stake_block = if ce >= 2 {
            self.ancestor_before_slot(parent, (ce - 1) * k)
        } else {
            self.genesis
        };
        let stakes = match self.stakes.get(&stake_block) {
            Some(s) => s.clone(),
            None => {
                let state = (stake_block != self.genesis).then(|| &*self.entries[&stake_block].state);
                let s = Arc::new(StakeDistribution::snapshot(&self.params.genesis_stakes, state));
                self.stakes.insert(stake_block, s.clone());
                s
            }
        };
        slot_leader(&stakes, &rand, slot)
    }

    fn is_candidate(&self, e: &ScEntry, mc: &McChain) -> bool {
        e.hash == self.genesis || mc.is_active(&e.mc_after.hash)
    }

    /// Highest block whose mainchain references are all on the active
    /// mainchain; first seen wins ties.
    pub fn select_tip(&mut self, mc: &McChain) -> Digest {
        let best = self
            .entries
            .values()
            .filter(|e| self.is_candidate(e, mc))
            .max_by(|a, b| a.height.cmp(&b.height).then(b.seq.cmp(&a.seq)))
            .map(|e| e.hash)
            .unwrap_or(self.genesis);
        self.tip = best;
        best
    }

    /// Validates and stores a block, then re-runs fork choice.
    pub fn receive_block(&mut self, mc: &McChain, block: ScBlock) -> Result<Digest, ScBlockError> {
        let hash = block.hash();
        if self.entries.contains_key(&hash) {
            return Err(ScBlockError::Duplicate);
        }
        let parent = self
            .entries
            .get(&block.header.parent)
            .ok_or(ScBlockError::UnknownParent)?
            .clone();
        if block.header.height != parent.height + 1 {
            return Err(ScBlockError::BadHeight);
        }
        if block.header.slot <= parent.slot {
            return Err(ScBlockError::BadSlot);
        }
        if !block.body_matches_header() {
            return Err(ScBlockError::BadBody);
        }
        if !block.signature_valid() {
            return Err(ScBlockError::BadSignature);
        }
        if self.leader_for(&parent.hash, block.header.slot) != Some(block.header.forger.address()) {
            return Err(ScBlockError::NotLeader);
        }
        if block.mc_refs.iter().any(|r| !mc.contains(&r.hash())) {
            return Err(ScBlockError::UnknownMcBlock);
        }
        let (mc_after, ends_epoch) = check_refs(&self.params, &block.mc_refs, parent.mc_after)?;
        let starts_epoch = parent.ends_epoch;
        let mut state = (*parent.state).clone();
        for (index, t) in block.transitions(starts_epoch).iter().enumerate() {
            state
                .apply(t)
                .map_err(|error| ScBlockError::Transition { index, error })?;
        }
        if state.digest() != block.header.state_digest {
            return Err(ScBlockError::BadState);
        }
        let epoch = match parent.epoch {
            None => 0,
            Some(e) if parent.ends_epoch => e + 1,
            Some(e) => e,
        };
        let entry = ScEntry {
            hash,
            parent: parent.hash,
            height: block.header.height,
            slot: block.header.slot,
            block: Some(Arc::new(block)),
            state: Arc::new(state),
            mc_before: parent.mc_after,
            mc_after,
            starts_epoch,
            ends_epoch,
            epoch: Some(epoch),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.entries.insert(hash, entry);
        self.select_tip(mc);
        Ok(hash)
    }

    /// Forges a block on the current tip at `slot`, referencing every
    /// active mainchain block not yet referenced (up to the next epoch end)
    /// and including the valid subset of `txs`.
    pub fn forge(&mut self, mc: &McChain, slot: u64, key: &Keypair, txs: &[ScTransaction]) -> Result<Forged, ForgeError> {
        let tip = self.select_tip(mc);
        let parent = self.entries[&tip].clone();
        if slot <= parent.slot {
            return Err(ForgeError::StaleSlot(slot));
        }
        if self.leader_for(&tip, slot) != Some(key.address()) {
            return Err(ForgeError::NotLeader(slot));
        }
        if mc.active_hash_at(parent.mc_after.height) != Some(parent.mc_after.hash) {
            return Err(ForgeError::DetachedTip);
        }
        let mut work = (*parent.state).clone();
        if parent.ends_epoch {
            work.apply(&Transition::EpochStart).expect("epoch start cannot fail");
        }
        let mut refs = Vec::new();
        for h in parent.mc_after.height + 1..=mc.height() {
            let hash = mc.active_hash_at(h).expect("height within the active chain");
            let block = mc.block(&hash).expect("active block is stored");
            let mut overlay = OverlayStore::new(&work);
            let r = make_mc_reference(block, &self.params.ledger_id, &mut overlay)?;
            let changes = overlay.into_changes();
            work.apply_changes(changes);
            refs.push(r);
            if self.params.is_epoch_last(h) {
                break;
            }
        }
        let mut included = Vec::new();
        let mut dropped = Vec::new();
        for (i, tx) in txs.iter().enumerate() {
            match work.apply(&Transition::Tx(tx.clone())) {
                Ok(()) => included.push(tx.clone()),
                Err(e) => dropped.push((i, e)),
            }
        }
        let header = ScBlockHeader {
            parent: tip,
            height: parent.height + 1,
            slot,
            forger: key.public(),
            mc_refs_digest: Digest::ZERO,
            txs_digest: Digest::ZERO,
            state_digest: work.digest(),
        };
        let block = ScBlock::seal(header, refs, included, key);
        let hash = self.receive_block(mc, block)?;
        let block = self.entries[&hash].block.clone().expect("forged block stored");
        Ok(Forged { hash, block, dropped })
    }

    /// Validity proof of a stored block, cached per block.
    pub fn block_proof(&mut self, hash: &Digest) -> Result<(TransitionProof, BlockStep), ProveError> {
        if let Some(p) = self.block_proofs.get(hash) {
            return Ok(p.clone());
        }
        let entry = self.entries.get(hash).ok_or(ProveError::Empty)?;
        let block = entry.block.clone().ok_or(ProveError::Empty)?;
        let parent = &self.entries[&entry.parent];
        let info = BlockContextInfo {
            parent_height: parent.height,
            mc_before: parent.mc_after,
            starts_epoch: entry.starts_epoch,
        };
        let prover = TransitionProver::new(&self.proofs, &self.params);
        let (proof, step, state) = prover.prove_block(&block, &info, &parent.state)?;
        debug_assert_eq!(state.digest(), entry.state.digest());
        self.block_proofs.insert(*hash, (proof.clone(), step.clone()));
        Ok((proof, step))
    }

    /// First and last block of withdrawal epoch `epoch` on the current
    /// chain, if the epoch is closed.
    pub fn epoch_boundary(&self, epoch: u64) -> Option<(Digest, Digest)> {
        let blocks = self.epoch_blocks(epoch);
        let last = *blocks.last()?;
        self.entries[&last].ends_epoch.then(|| (blocks[0], last))
    }

    fn epoch_blocks(&self, epoch: u64) -> Vec<Digest> {
        self.chain()
            .into_iter()
            .filter(|h| self.entries[h].epoch == Some(epoch))
            .collect()
    }

    /// Highest withdrawal epoch closed on the current chain.
    pub fn last_closed_epoch(&self) -> Option<u64> {
        let mut cur = &self.entries[&self.tip];
        loop {
            if cur.ends_epoch {
                return cur.epoch;
            }
            cur = &self.entries[&cur.parent];
        }
    }

    /// Certificate for a closed epoch of the current chain.
    pub fn generate_wcert(&mut self, epoch: u64) -> Result<WithdrawalCertificate, CertError> {
        let blocks = self.epoch_blocks(epoch);
        let last = *blocks.last().ok_or(CertError::EpochNotClosed(epoch))?;
        if !self.entries[&last].ends_epoch {
            return Err(CertError::EpochNotClosed(epoch));
        }
        let anchor = self.entries[&self.entries[&blocks[0]].parent].clone();
        let prev_proofdata = (epoch > 0).then(|| {
            vec![
                Field::Digest(anchor.hash),
                Field::Digest(anchor.state.mst.root()),
                Field::Bits(anchor.state.epoch_delta.clone()),
            ]
        });
        let mut proofs = Vec::with_capacity(blocks.len());
        for h in &blocks {
            proofs.push(self.block_proof(h)?);
        }
        let prover = TransitionProver::new(&self.proofs, &self.params);
        let epoch_proof = prover.prove_epoch(proofs)?;
        let end = self.entries[&last].state.clone();
        Ok(prover.prove_wcert(epoch, epoch_proof, prev_proofdata, anchor.state.bt_chain, &end)?)
    }

    /// Builds a BTR or CSW for `utxo`, anchored at `anchor_epoch` or at the
    /// latest certified epoch.
    pub fn build_request(
        &self,
        mc: &McChain,
        kind: RequestKind,
        utxo: &Utxo,
        owner: &Keypair,
        receiver: Address,
        anchor_epoch: Option<u64>,
    ) -> Result<WithdrawalRequest, RequestError> {
        let sc = mc
            .tip_state()
            .sidechain(&self.params.ledger_id)
            .ok_or(RequestError::UnknownSidechain)?;
        let latest = sc.last_cert().ok_or(RequestError::NoCertificate)?;
        let epoch = anchor_epoch.unwrap_or(latest.epoch_id);
        let anchor_block = self
            .certified_block(mc, epoch)
            .ok_or(RequestError::StateMismatch)?;
        let mst = &self.entries[&anchor_block].state.mst;
        build_request(&self.proofs, &self.params, mc, kind, utxo, owner, receiver, epoch, mst)
    }

    /// Sidechain block whose state the mainchain certified for `epoch`.
    pub fn certified_block(&self, mc: &McChain, epoch: u64) -> Option<Digest> {
        let sc = mc.tip_state().sidechain(&self.params.ledger_id)?;
        let accepted = sc.certs.get(&epoch)?;
        let block = mc.block(&accepted.block_hash)?;
        let cert = block.body.certificates.iter().find(|c| c.ledger_id == self.params.ledger_id)?;
        let sc_last = cert.proofdata.first()?.as_digest()?;
        self.entries.contains_key(&sc_last).then_some(sc_last)
    }
}
