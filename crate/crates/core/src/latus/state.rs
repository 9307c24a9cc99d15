//! Sidechain state and the transition rules.
//!
//! The rules are written once against [`UtxoStore`]. Nodes run them over an
//! [`OverlayStore`] on a full state; the transaction proof predicate runs
//! them over a [`PathStore`] rebuilt from slot openings.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::encode;
use crate::crypto::{
    empty_subtree, hash_tagged, mst_position, node_hash, slot_node, Digest, Domain, MerkleStateTree,
    MstDelta, Utxo,
};
use crate::mainchain::BackwardTransfer;

use super::tx::{ft_output, ft_refund, request_utxo, BtrTx, FtTx, ScTransaction, Transition};

pub fn bt_chain_next(prev: &Digest, bt: &BackwardTransfer) -> Digest {
    hash_tagged(Domain::BtChain, &[&prev.0, &encode(bt)])
}

pub fn bt_chain_of(bts: &[BackwardTransfer]) -> Digest {
    bts.iter().fold(Digest::ZERO, |acc, bt| bt_chain_next(&acc, bt))
}

/// Commitment to a full sidechain state.
pub fn state_digest(mst_root: &Digest, bt_chain: &Digest, delta: &MstDelta) -> Digest {
    hash_tagged(Domain::State, &[&mst_root.0, &bt_chain.0, &delta.digest().0])
}

/// MST plus the epoch's backward transfers and touched-slot bitvector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScState {
    pub mst: MerkleStateTree,
    pub backward_transfers: Vec<BackwardTransfer>,
    pub bt_chain: Digest,
    pub epoch_delta: MstDelta,
}

impl ScState {
    pub fn genesis(depth: u8) -> Result<Self, crate::crypto::MstError> {
        Ok(ScState {
            mst: MerkleStateTree::new(depth)?,
            backward_transfers: Vec::new(),
            bt_chain: Digest::ZERO,
            epoch_delta: MstDelta::for_depth(depth),
        })
    }

    pub fn digest(&self) -> Digest {
        state_digest(&self.mst.root(), &self.bt_chain, &self.epoch_delta)
    }

    pub fn apply_changes(&mut self, changes: Changes) {
        if changes.epoch_reset {
            self.backward_transfers.clear();
            self.bt_chain = Digest::ZERO;
            self.epoch_delta = MstDelta::for_depth(self.mst.depth());
        }
        for (slot, value) in changes.writes {
            self.mst
                .set_slot(slot, value)
                .expect("overlay writes are position-checked");
            self.epoch_delta.set(slot);
        }
        for bt in changes.bts {
            self.bt_chain = bt_chain_next(&self.bt_chain, &bt);
            self.backward_transfers.push(bt);
        }
    }

    /// Applies one transition in place; on error the state is unchanged.
    pub fn apply(&mut self, t: &Transition) -> Result<(), TxError> {
        let mut overlay = OverlayStore::new(self);
        apply_transition(&mut overlay, t)?;
        let changes = overlay.into_changes();
        self.apply_changes(changes);
        Ok(())
    }

    /// Applies `t` and returns the openings a transaction proof needs.
    pub fn apply_with_openings(&mut self, t: &Transition) -> Result<Vec<SlotOpening>, TxError> {
        let mut overlay = OverlayStore::new(self);
        apply_transition(&mut overlay, t)?;
        let openings = overlay.openings();
        let changes = overlay.into_changes();
        self.apply_changes(changes);
        Ok(openings)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxError {
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("input at slot {slot} is not in the state")]
    MissingInput { slot: u64 },
    #[error("input spent twice")]
    DuplicateInput,
    #[error("authorization count or signature invalid")]
    BadSignature,
    #[error("zero amount or overflow")]
    InvalidAmount,
    #[error("inputs and outputs do not balance")]
    ValueImbalance,
    #[error("output slot {slot} is occupied")]
    Collision { slot: u64 },
    #[error("sync transaction does not match the mainchain data: {0}")]
    SyncMismatch(&'static str),
    #[error("slot {0} is not covered by the witness")]
    MissingOpening(u64),
}

impl TxError {
    /// Machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            TxError::NoInputs => "no_inputs",
            TxError::MissingInput { .. } => "missing_input",
            TxError::DuplicateInput => "duplicate_input",
            TxError::BadSignature => "bad_signature",
            TxError::InvalidAmount => "invalid_amount",
            TxError::ValueImbalance => "value_imbalance",
            TxError::Collision { .. } => "slot_collision",
            TxError::SyncMismatch(_) => "sync_mismatch",
            TxError::MissingOpening(_) => "missing_opening",
        }
    }
}

/// Slot-level access to a state.
pub trait UtxoStore {
    fn depth(&self) -> u8;
    fn get(&mut self, slot: u64) -> Result<Option<Utxo>, TxError>;
    fn put(&mut self, slot: u64, value: Option<Utxo>) -> Result<(), TxError>;
    fn push_bt(&mut self, bt: BackwardTransfer);
    fn start_epoch(&mut self);
}

fn insert<S: UtxoStore>(store: &mut S, utxo: Utxo) -> Result<(), TxError> {
    let slot = mst_position(&utxo, store.depth());
    if store.get(slot)?.is_some() {
        return Err(TxError::Collision { slot });
    }
    store.put(slot, Some(utxo))
}

fn remove<S: UtxoStore>(store: &mut S, utxo: &Utxo) -> Result<(), TxError> {
    let slot = mst_position(utxo, store.depth());
    if store.get(slot)?.as_ref() != Some(utxo) {
        return Err(TxError::MissingInput { slot });
    }
    store.put(slot, None)
}

fn checked_sum(amounts: impl Iterator<Item = u64>) -> Result<u64, TxError> {
    let mut total = 0u64;
    for a in amounts {
        if a == 0 {
            return Err(TxError::InvalidAmount);
        }
        total = total.checked_add(a).ok_or(TxError::InvalidAmount)?;
    }
    Ok(total)
}

fn spend_inputs<S: UtxoStore>(
    store: &mut S,
    inputs: &[Utxo],
    auths: &[crate::crypto::SpendAuth],
    sighash: &Digest,
    outgoing: u64,
) -> Result<(), TxError> {
    if inputs.is_empty() {
        return Err(TxError::NoInputs);
    }
    if auths.len() != inputs.len() {
        return Err(TxError::BadSignature);
    }
    let distinct: BTreeSet<_> = inputs.iter().map(|u| mst_position(u, store.depth())).collect();
    if distinct.len() != inputs.len() {
        return Err(TxError::DuplicateInput);
    }
    for (u, a) in inputs.iter().zip(auths) {
        if !a.authorizes(&u.addr, sighash) {
            return Err(TxError::BadSignature);
        }
    }
    let incoming = checked_sum(inputs.iter().map(|u| u.amount))?;
    if incoming != outgoing {
        return Err(TxError::ValueImbalance);
    }
    for u in inputs {
        remove(store, u)?;
    }
    Ok(())
}

/// Outputs and refunds the forward transfers of `tx` produce against the
/// store. Writes the outputs.
pub fn process_fts<S: UtxoStore>(
    store: &mut S,
    tx: &FtTx,
) -> Result<(Vec<Utxo>, Vec<BackwardTransfer>), TxError> {
    let mut outputs = Vec::new();
    let mut rejected = Vec::new();
    for (i, ft) in tx.fts.iter().enumerate() {
        match ft_output(&tx.mcid, i as u64, ft) {
            Some(out) => {
                let slot = mst_position(&out, store.depth());
                if store.get(slot)?.is_none() {
                    store.put(slot, Some(out))?;
                    outputs.push(out);
                } else {
                    rejected.push(ft_refund(ft));
                }
            }
            None => rejected.push(ft_refund(ft)),
        }
    }
    for bt in &rejected {
        store.push_bt(*bt);
    }
    Ok((outputs, rejected))
}

/// Removes every UTXO claimed by a request that is still present and
/// matches the claimed amount, emitting the corresponding backward transfer.
pub fn process_btrs<S: UtxoStore>(
    store: &mut S,
    tx: &BtrTx,
) -> Result<(Vec<Utxo>, Vec<BackwardTransfer>), TxError> {
    let mut inputs = Vec::new();
    let mut bts = Vec::new();
    for req in &tx.btrs {
        let Some(utxo) = request_utxo(req) else {
            continue;
        };
        if utxo.amount != req.amount {
            continue;
        }
        let slot = mst_position(&utxo, store.depth());
        if store.get(slot)? != Some(utxo) {
            continue;
        }
        store.put(slot, None)?;
        let bt = BackwardTransfer {
            receiver: req.receiver,
            amount: req.amount,
        };
        store.push_bt(bt);
        inputs.push(utxo);
        bts.push(bt);
    }
    Ok((inputs, bts))
}

/// The state transition function. On error the store may hold partial
/// writes and must be discarded.
pub fn apply_transition<S: UtxoStore>(store: &mut S, t: &Transition) -> Result<(), TxError> {
    match t {
        Transition::EpochStart => {
            store.start_epoch();
            Ok(())
        }
        Transition::Tx(ScTransaction::Payment(tx)) => {
            let outputs = tx.output_utxos();
            let outgoing = checked_sum(outputs.iter().map(|u| u.amount))?;
            spend_inputs(store, &tx.inputs, &tx.auths, &tx.sighash(), outgoing)?;
            for out in outputs {
                insert(store, out)?;
            }
            Ok(())
        }
        Transition::Tx(ScTransaction::Backward(tx)) => {
            let outgoing = checked_sum(tx.bts.iter().map(|b| b.amount))?;
            spend_inputs(store, &tx.inputs, &tx.auths, &tx.sighash(), outgoing)?;
            for bt in &tx.bts {
                store.push_bt(*bt);
            }
            Ok(())
        }
        Transition::Tx(ScTransaction::ForwardTransfers(tx)) => {
            let (outputs, rejected) = process_fts(store, tx)?;
            if outputs != tx.outputs || rejected != tx.rejected {
                return Err(TxError::SyncMismatch("forward transfer outcome"));
            }
            Ok(())
        }
        Transition::Tx(ScTransaction::BtRequests(tx)) => {
            let (inputs, bts) = process_btrs(store, tx)?;
            if inputs != tx.inputs || bts != tx.bts {
                return Err(TxError::SyncMismatch("backward transfer request outcome"));
            }
            Ok(())
        }
    }
}

/// Pending writes over a full state.
#[derive(Clone, Debug, Default)]
pub struct Changes {
    pub writes: BTreeMap<u64, Option<Utxo>>,
    pub bts: Vec<BackwardTransfer>,
    pub epoch_reset: bool,
}

pub struct OverlayStore<'a> {
    base: &'a ScState,
    changes: Changes,
    touched: BTreeSet<u64>,
}

impl<'a> OverlayStore<'a> {
    pub fn new(base: &'a ScState) -> Self {
        OverlayStore {
            base,
            changes: Changes::default(),
            touched: BTreeSet::new(),
        }
    }

    /// Pre-state openings of every slot read or written.
    pub fn openings(&self) -> Vec<SlotOpening> {
        self.touched
            .iter()
            .map(|&slot| SlotOpening {
                slot,
                value: self.base.mst.get(slot).copied(),
                siblings: self.base.mst.prove_slot(slot).siblings,
            })
            .collect()
    }

    pub fn into_changes(self) -> Changes {
        self.changes
    }
}

impl UtxoStore for OverlayStore<'_> {
    fn depth(&self) -> u8 {
        self.base.mst.depth()
    }

    fn get(&mut self, slot: u64) -> Result<Option<Utxo>, TxError> {
        self.touched.insert(slot);
        Ok(match self.changes.writes.get(&slot) {
            Some(v) => *v,
            None => self.base.mst.get(slot).copied(),
        })
    }

    fn put(&mut self, slot: u64, value: Option<Utxo>) -> Result<(), TxError> {
        self.touched.insert(slot);
        self.changes.writes.insert(slot, value);
        Ok(())
    }

    fn push_bt(&mut self, bt: BackwardTransfer) {
        self.changes.bts.push(bt);
    }

    fn start_epoch(&mut self) {
        self.changes.epoch_reset = true;
        self.changes.bts.clear();
    }
}

/// A slot's pre-state content with its sibling path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotOpening {
    pub slot: u64,
    pub value: Option<Utxo>,
    pub siblings: Vec<Digest>,
}

/// The part of an MST covered by a set of verified openings.
#[derive(Clone, Debug)]
pub struct PartialTree {
    depth: u8,
    nodes: HashMap<(u8, u64), Digest>,
    slots: BTreeMap<u64, Option<Utxo>>,
}

impl PartialTree {
    /// Checks each opening against `root` and merges them. Openings must
    /// agree wherever their paths overlap.
    pub fn from_openings(root: &Digest, depth: u8, openings: &[SlotOpening]) -> Option<Self> {
        if depth == 0 || depth > 32 {
            return None;
        }
        let mut t = PartialTree {
            depth,
            nodes: HashMap::new(),
            slots: BTreeMap::new(),
        };
        for o in openings {
            if o.siblings.len() != depth as usize || o.slot >> depth != 0 {
                return None;
            }
            if let Some(u) = &o.value {
                if mst_position(u, depth) != o.slot {
                    return None;
                }
            }
            if t.slots.insert(o.slot, o.value).is_some() {
                return None;
            }
            let mut acc = slot_node(o.value.as_ref());
            let mut index = o.slot;
            for (level, sib) in o.siblings.iter().enumerate() {
                let level = level as u8;
                if !t.merge_node(level, index, acc) || !t.merge_node(level, index ^ 1, *sib) {
                    return None;
                }
                acc = if index & 1 == 1 {
                    node_hash(sib, &acc)
                } else {
                    node_hash(&acc, sib)
                };
                index >>= 1;
            }
            if acc != *root || !t.merge_node(depth, 0, acc) {
                return None;
            }
        }
        if openings.is_empty() {
            t.nodes.insert((depth, 0), *root);
        }
        Some(t)
    }

    fn merge_node(&mut self, level: u8, index: u64, value: Digest) -> bool {
        *self.nodes.entry((level, index)).or_insert(value) == value
    }

    pub fn root(&self) -> Digest {
        self.nodes
            .get(&(self.depth, 0))
            .copied()
            .unwrap_or_else(|| empty_subtree(self.depth))
    }

    pub fn get(&self, slot: u64) -> Option<&Option<Utxo>> {
        self.slots.get(&slot)
    }

    fn set(&mut self, slot: u64, value: Option<Utxo>) -> Result<(), TxError> {
        if !self.slots.contains_key(&slot) {
            return Err(TxError::MissingOpening(slot));
        }
        self.slots.insert(slot, value);
        let mut acc = slot_node(value.as_ref());
        let mut index = slot;
        self.nodes.insert((0, index), acc);
        for level in 0..self.depth {
            let sib = self.nodes[&(level, index ^ 1)];
            acc = if index & 1 == 1 {
                node_hash(&sib, &acc)
            } else {
                node_hash(&acc, &sib)
            };
            index >>= 1;
            self.nodes.insert((level + 1, index), acc);
        }
        Ok(())
    }
}

/// State reconstructed from openings, for proof predicates.
#[derive(Clone, Debug)]
pub struct PathStore {
    pub tree: PartialTree,
    pub bt_chain: Digest,
    pub delta: MstDelta,
}

impl PathStore {
    pub fn digest(&self) -> Digest {
        state_digest(&self.tree.root(), &self.bt_chain, &self.delta)
    }
}

impl UtxoStore for PathStore {
    fn depth(&self) -> u8 {
        self.tree.depth
    }

    fn get(&mut self, slot: u64) -> Result<Option<Utxo>, TxError> {
        self.tree
            .get(slot)
            .copied()
            .ok_or(TxError::MissingOpening(slot))
    }

    fn put(&mut self, slot: u64, value: Option<Utxo>) -> Result<(), TxError> {
        self.tree.set(slot, value)?;
        self.delta.set(slot);
        Ok(())
    }

    fn push_bt(&mut self, bt: BackwardTransfer) {
        self.bt_chain = bt_chain_next(&self.bt_chain, &bt);
    }

    fn start_epoch(&mut self) {
        self.bt_chain = Digest::ZERO;
        self.delta = MstDelta::for_depth(self.tree.depth);
    }
}
