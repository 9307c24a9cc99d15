//! Variable-size binary Merkle hash trees.
//!
//! Leaves are digests of data blocks. A leaf node holds `leaf_hash(leaf)`,
//! internal nodes hold `node_hash(left, right)`. Leaf lists are padded to the
//! next power of two with [`null_leaf`], so a single-leaf tree has root
//! `leaf_hash(leaf)` and an empty sibling list.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hash::{hash_tagged, leaf_hash, node_hash, Digest, Domain};

/// Longest sibling path accepted by verification.
pub const MAX_PROOF_DEPTH: usize = 48;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree from zero leaves")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {len} leaves")]
    IndexOutOfRange { index: u64, len: u64 },
}

/// Padding leaf used for odd leaf counts and for empty state-tree slots.
pub fn null_leaf() -> Digest {
    static NULL: OnceLock<Digest> = OnceLock::new();
    *NULL.get_or_init(|| hash_tagged(Domain::NullLeaf, &[]))
}

/// Root of a list that may be empty; the empty list maps to a fixed digest.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    match MerkleTree::build(leaves) {
        Ok(tree) => tree.root(),
        Err(_) => empty_list_root(),
    }
}

pub fn empty_list_root() -> Digest {
    static EMPTY: OnceLock<Digest> = OnceLock::new();
    *EMPTY.get_or_init(|| hash_tagged(Domain::EmptyList, &[]))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleTree {
    leaves: Vec<Digest>,
    /// `levels[0]` are leaf nodes (padded), the last level is `[root]`.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(leaves: &[Digest]) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::EmptyLeaves);
        }
        let width = leaves.len().next_power_of_two();
        let mut level: Vec<Digest> = leaves
            .iter()
            .copied()
            .chain(std::iter::repeat(null_leaf()).take(width - leaves.len()))
            .map(|d| leaf_hash(&d))
            .collect();
        let mut levels = Vec::new();
        while level.len() > 1 {
            let next = level
                .chunks(2)
                .map(|pair| node_hash(&pair[0], &pair[1]))
                .collect();
            levels.push(std::mem::replace(&mut level, next));
        }
        levels.push(level);
        Ok(MerkleTree {
            leaves: leaves.to_vec(),
            levels,
        })
    }

    pub fn root(&self) -> Digest {
        self.levels.last().expect("non-empty tree")[0]
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.leaves
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Internal node at `level` (0 = leaf nodes) and position `index`.
    pub fn node(&self, level: usize, index: usize) -> Option<Digest> {
        self.levels.get(level).and_then(|l| l.get(index)).copied()
    }

    pub fn prove(&self, index: u64) -> Result<MerkleProof, MerkleError> {
        if index >= self.leaves.len() as u64 {
            return Err(MerkleError::IndexOutOfRange {
                index,
                len: self.leaves.len() as u64,
            });
        }
        Ok(self.prove_padded(index as usize))
    }

    /// Proof for any position of the padded leaf layer, padding included.
    pub fn prove_padded(&self, index: usize) -> MerkleProof {
        let mut siblings = Vec::with_capacity(self.depth());
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            siblings.push(level[i ^ 1]);
            i >>= 1;
        }
        MerkleProof {
            leaf_index: index as u64,
            siblings,
        }
    }

    pub fn padded_width(&self) -> usize {
        self.levels[0].len()
    }
}

/// Sibling path from a leaf to the root, ordered leaf-to-root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<Digest>,
}

impl MerkleProof {
    /// Root reached from an already-hashed leaf node, or `None` when the
    /// index does not fit the path length.
    pub fn root_from_node(&self, leaf_node: Digest) -> Option<Digest> {
        if self.siblings.len() > MAX_PROOF_DEPTH {
            return None;
        }
        if self.siblings.len() < 64 && self.leaf_index >> self.siblings.len() != 0 {
            return None;
        }
        let mut acc = leaf_node;
        for (level, sib) in self.siblings.iter().enumerate() {
            acc = if (self.leaf_index >> level) & 1 == 1 {
                node_hash(sib, &acc)
            } else {
                node_hash(&acc, sib)
            };
        }
        Some(acc)
    }

    pub fn root_from_leaf(&self, leaf: &Digest) -> Option<Digest> {
        self.root_from_node(leaf_hash(leaf))
    }
}

pub fn mht_build(leaves: &[Digest]) -> Result<MerkleTree, MerkleError> {
    MerkleTree::build(leaves)
}

pub fn mht_prove(tree: &MerkleTree, index: u64) -> Result<MerkleProof, MerkleError> {
    tree.prove(index)
}

pub fn mht_verify(root: &Digest, leaf: &Digest, proof: &MerkleProof) -> bool {
    proof.root_from_leaf(leaf).is_some_and(|r| &r == root)
}
