//! Fixed-depth Merkle State Tree holding the sidechain UTXO set.
//!
//! Each of the `2^depth` leaves is a slot that is either empty or holds one
//! UTXO. A UTXO's slot is a pure function of its fields
//! ([`mst_position`]); the tree never relocates entries, so two UTXOs that
//! map to the same slot cannot coexist.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::delta::MstDelta;
use super::hash::{hash_tagged, leaf_hash, node_hash, Digest, Domain};
use super::merkle::{mht_verify, null_leaf, MerkleProof};
use super::sig::Address;
use crate::codec;

pub const MAX_MST_DEPTH: u8 = 32;

/// An unspent output `(addr, amount, nonce)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Utxo {
    pub addr: Address,
    pub amount: u64,
    pub nonce: Digest,
}

impl Utxo {
    /// `addr ∥ amount (8 bytes, big-endian) ∥ nonce`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn digest(&self) -> Digest {
        hash_tagged(Domain::Utxo, &[&self.canonical_bytes()])
    }

    pub fn nullifier(&self) -> Digest {
        hash_tagged(Domain::Nullifier, &[&self.canonical_bytes()])
    }
}

/// Slot of `utxo` in a tree of the given depth: the low `depth` bits of a
/// tagged hash of the UTXO fields.
pub fn mst_position(utxo: &Utxo, depth: u8) -> u64 {
    hash_tagged(Domain::MstPosition, &[&utxo.canonical_bytes()]).low_bits(depth)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MstError {
    #[error("MST depth {0} outside 1..={MAX_MST_DEPTH}")]
    InvalidDepth(u8),
    #[error("slot {slot} already occupied")]
    Collision { slot: u64 },
    #[error("utxo not found at slot {slot}")]
    NotFound { slot: u64 },
    #[error("utxo does not belong to slot {slot}")]
    WrongSlot { slot: u64 },
    #[error("depth mismatch: {0} vs {1}")]
    DepthMismatch(u8, u8),
}

/// Digests of all-empty subtrees, indexed by level (0 = leaf nodes).
pub fn empty_subtree(level: u8) -> Digest {
    static TABLE: OnceLock<Vec<Digest>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut v = Vec::with_capacity(MAX_MST_DEPTH as usize + 1);
        v.push(leaf_hash(&null_leaf()));
        for l in 0..MAX_MST_DEPTH as usize {
            let e = v[l];
            v.push(node_hash(&e, &e));
        }
        v
    })[level as usize]
}

/// The leaf-node digest stored for a slot.
pub fn slot_node(value: Option<&Utxo>) -> Digest {
    match value {
        Some(u) => leaf_hash(&u.digest()),
        None => empty_subtree(0),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MstRepr", into = "MstRepr")]
pub struct MerkleStateTree {
    depth: u8,
    slots: BTreeMap<u64, Utxo>,
    /// Non-empty nodes keyed by `(level, index)`; absent means empty subtree.
    nodes: HashMap<(u8, u64), Digest>,
}

#[derive(Serialize, Deserialize)]
struct MstRepr {
    depth: u8,
    utxos: Vec<Utxo>,
}

impl From<MerkleStateTree> for MstRepr {
    fn from(t: MerkleStateTree) -> Self {
        MstRepr {
            depth: t.depth,
            utxos: t.slots.into_values().collect(),
        }
    }
}

impl TryFrom<MstRepr> for MerkleStateTree {
    type Error = MstError;

    fn try_from(r: MstRepr) -> Result<Self, MstError> {
        let mut t = MerkleStateTree::new(r.depth)?;
        for u in r.utxos {
            t.insert(u)?;
        }
        Ok(t)
    }
}

impl PartialEq for MerkleStateTree {
    fn eq(&self, other: &Self) -> bool {
        self.depth == other.depth && self.slots == other.slots
    }
}

impl Eq for MerkleStateTree {}

impl MerkleStateTree {
    pub fn new(depth: u8) -> Result<Self, MstError> {
        if depth == 0 || depth > MAX_MST_DEPTH {
            return Err(MstError::InvalidDepth(depth));
        }
        Ok(MerkleStateTree {
            depth,
            slots: BTreeMap::new(),
            nodes: HashMap::new(),
        })
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn capacity(&self) -> u64 {
        1u64 << self.depth
    }

    pub fn root(&self) -> Digest {
        self.node(self.depth, 0)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn position(&self, utxo: &Utxo) -> u64 {
        mst_position(utxo, self.depth)
    }

    pub fn get(&self, slot: u64) -> Option<&Utxo> {
        self.slots.get(&slot)
    }

    pub fn contains(&self, utxo: &Utxo) -> bool {
        self.get(self.position(utxo)) == Some(utxo)
    }

    pub fn occupancy(&self) -> Vec<u64> {
        self.slots.keys().copied().collect()
    }

    pub fn utxos(&self) -> impl Iterator<Item = &Utxo> {
        self.slots.values()
    }

    pub fn insert(&mut self, utxo: Utxo) -> Result<u64, MstError> {
        let slot = self.position(&utxo);
        if self.slots.contains_key(&slot) {
            return Err(MstError::Collision { slot });
        }
        self.write_slot(slot, Some(utxo));
        Ok(slot)
    }

    pub fn remove(&mut self, utxo: &Utxo) -> Result<u64, MstError> {
        let slot = self.position(utxo);
        if self.slots.get(&slot) != Some(utxo) {
            return Err(MstError::NotFound { slot });
        }
        self.write_slot(slot, None);
        Ok(slot)
    }

    /// Overwrite a slot. A UTXO may only be written into its own slot.
    pub fn set_slot(&mut self, slot: u64, value: Option<Utxo>) -> Result<(), MstError> {
        if slot >= self.capacity() {
            return Err(MstError::WrongSlot { slot });
        }
        if let Some(u) = &value {
            if self.position(u) != slot {
                return Err(MstError::WrongSlot { slot });
            }
        }
        self.write_slot(slot, value);
        Ok(())
    }

    /// Sibling path of a slot (occupied or not), leaf-to-root.
    pub fn prove_slot(&self, slot: u64) -> MerkleProof {
        let siblings = (0..self.depth)
            .map(|level| self.node(level, (slot >> level) ^ 1))
            .collect();
        MerkleProof {
            leaf_index: slot,
            siblings,
        }
    }

    pub fn prove_inclusion(&self, utxo: &Utxo) -> Result<MerkleProof, MstError> {
        let slot = self.position(utxo);
        if self.slots.get(&slot) != Some(utxo) {
            return Err(MstError::NotFound { slot });
        }
        Ok(self.prove_slot(slot))
    }

    fn node(&self, level: u8, index: u64) -> Digest {
        self.nodes
            .get(&(level, index))
            .copied()
            .unwrap_or_else(|| empty_subtree(level))
    }

    fn write_slot(&mut self, slot: u64, value: Option<Utxo>) {
        match value {
            Some(u) => {
                self.nodes.insert((0, slot), slot_node(Some(&u)));
                self.slots.insert(slot, u);
            }
            None => {
                self.nodes.remove(&(0, slot));
                self.slots.remove(&slot);
            }
        }
        let mut index = slot;
        for level in 0..self.depth {
            let left = self.node(level, index & !1);
            let right = self.node(level, index | 1);
            let parent = node_hash(&left, &right);
            index >>= 1;
            if parent == empty_subtree(level + 1) {
                self.nodes.remove(&(level + 1, index));
            } else {
                self.nodes.insert((level + 1, index), parent);
            }
        }
    }
}

pub fn mst_insert(mst: &MerkleStateTree, utxo: Utxo) -> Result<MerkleStateTree, MstError> {
    let mut next = mst.clone();
    next.insert(utxo)?;
    Ok(next)
}

pub fn mst_remove(mst: &MerkleStateTree, utxo: &Utxo) -> Result<MerkleStateTree, MstError> {
    let mut next = mst.clone();
    next.remove(utxo)?;
    Ok(next)
}

pub fn mst_prove_inclusion(mst: &MerkleStateTree, utxo: &Utxo) -> Result<MerkleProof, MstError> {
    mst.prove_inclusion(utxo)
}

/// Checks the path length and that the proof sits at the UTXO's own slot.
pub fn mst_verify_inclusion(root: &Digest, utxo: &Utxo, proof: &MerkleProof) -> bool {
    let depth = proof.siblings.len();
    if depth == 0 || depth > MAX_MST_DEPTH as usize {
        return false;
    }
    proof.leaf_index == mst_position(utxo, depth as u8) && mht_verify(root, &utxo.digest(), proof)
}

/// Slots whose content differs between two trees of equal depth.
pub fn delta_compute(before: &MerkleStateTree, after: &MerkleStateTree) -> Result<MstDelta, MstError> {
    if before.depth != after.depth {
        return Err(MstError::DepthMismatch(before.depth, after.depth));
    }
    let mut delta = MstDelta::for_depth(before.depth);
    for slot in before.slots.keys().chain(after.slots.keys()) {
        if before.slots.get(slot) != after.slots.get(slot) {
            delta.set(*slot);
        }
    }
    Ok(delta)
}

/// True iff `utxo` is proven in the anchor state and its slot is untouched in
/// every later delta.
pub fn prove_unspent_since(
    utxo: &Utxo,
    anchor_state_root: &Digest,
    anchor_inclusion_proof: &MerkleProof,
    deltas: &[MstDelta],
) -> bool {
    if !mst_verify_inclusion(anchor_state_root, utxo, anchor_inclusion_proof) {
        return false;
    }
    let depth = anchor_inclusion_proof.siblings.len() as u8;
    let slot = anchor_inclusion_proof.leaf_index;
    deltas
        .iter()
        .all(|d| d.len() == 1u64 << depth && !d.get(slot))
}
