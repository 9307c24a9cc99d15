//! The per-block commitment to all sidechain-related actions.
//!
//! Each sidechain with activity in a block contributes one leaf
//! `H(ledgerId ∥ node(FTHash, BTRHash) ∥ WCertHash)`. Leaves are ordered by
//! ledger id and combined into a Merkle tree; a block without activity
//! commits to the empty-list digest. Ordering makes absence provable with
//! two adjacent leaves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{
    CertSummary, ForwardTransfer, LedgerId, McBlockBody, WithdrawalCertificate, WithdrawalRequest,
};
use crate::crypto::{
    empty_list_root, hash_tagged, merkle_root, node_hash, null_leaf, Digest, Domain, MerkleProof,
    MerkleTree,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitmentError {
    #[error("more than one certificate for sidechain {0}")]
    DuplicateCertificate(LedgerId),
}

pub fn ft_root(fts: &[ForwardTransfer]) -> Digest {
    merkle_root(&fts.iter().map(ForwardTransfer::digest).collect::<Vec<_>>())
}

pub fn btr_root(btrs: &[WithdrawalRequest]) -> Digest {
    merkle_root(&btrs.iter().map(WithdrawalRequest::digest).collect::<Vec<_>>())
}

/// `ZERO` stands for "no certificate".
pub fn wcert_hash(cert: Option<&CertSummary>) -> Digest {
    cert.map(CertSummary::digest).unwrap_or(Digest::ZERO)
}

pub fn txs_hash(ft_root: &Digest, btr_root: &Digest) -> Digest {
    node_hash(ft_root, btr_root)
}

pub fn sc_leaf(ledger_id: &LedgerId, txs_hash: &Digest, wcert_hash: &Digest) -> Digest {
    hash_tagged(Domain::ScLeaf, &[&ledger_id.0, &txs_hash.0, &wcert_hash.0])
}

/// Everything one block carries for one sidechain, in block order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LedgerActivity {
    pub fts: Vec<ForwardTransfer>,
    pub btrs: Vec<WithdrawalRequest>,
    pub wcert: Option<WithdrawalCertificate>,
}

impl LedgerActivity {
    pub fn leaf(&self, ledger_id: &LedgerId) -> Digest {
        let summary = self.wcert.as_ref().map(WithdrawalCertificate::summary);
        sc_leaf(
            ledger_id,
            &txs_hash(&ft_root(&self.fts), &btr_root(&self.btrs)),
            &wcert_hash(summary.as_ref()),
        )
    }
}

/// Groups a body's sidechain actions by ledger id. CSWs are not synced to
/// sidechains and are not committed here.
pub fn ledger_activity(body: &McBlockBody) -> Result<BTreeMap<LedgerId, LedgerActivity>, CommitmentError> {
    let mut out: BTreeMap<LedgerId, LedgerActivity> = BTreeMap::new();
    for tx in &body.transactions {
        for ft in &tx.forward_transfers {
            out.entry(ft.ledger_id).or_default().fts.push(ft.clone());
        }
    }
    for btr in &body.btrs {
        out.entry(btr.ledger_id).or_default().btrs.push(btr.clone());
    }
    for cert in &body.certificates {
        let slot = &mut out.entry(cert.ledger_id).or_default().wcert;
        if slot.is_some() {
            return Err(CommitmentError::DuplicateCertificate(cert.ledger_id));
        }
        *slot = Some(cert.clone());
    }
    Ok(out)
}

/// An opened leaf: enough to recompute it and check its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafOpening {
    pub ledger_id: LedgerId,
    pub txs_hash: Digest,
    pub wcert_hash: Digest,
    pub proof: MerkleProof,
}

impl LeafOpening {
    fn verify(&self, root: &Digest) -> bool {
        let leaf = sc_leaf(&self.ledger_id, &self.txs_hash, &self.wcert_hash);
        self.proof.root_from_leaf(&leaf).is_some_and(|r| &r == root)
    }
}

/// What bounds the gap on the right of the queried id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RightBound {
    Leaf(LeafOpening),
    /// The slot right after the left neighbour is padding.
    Padding(MerkleProof),
}

/// Absence of a ledger id: its would-be neighbours are adjacent. Both
/// `None` means the commitment is the empty-list digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoDataProof {
    pub left: Option<LeafOpening>,
    pub right: Option<RightBound>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScTxsProof {
    Present(MerkleProof),
    Absent(NoDataProof),
}

#[derive(Clone, Debug)]
pub struct ScTxsTree {
    ids: Vec<LedgerId>,
    txs_hashes: Vec<Digest>,
    wcert_hashes: Vec<Digest>,
    tree: Option<MerkleTree>,
}

impl ScTxsTree {
    pub fn build(body: &McBlockBody) -> Result<Self, CommitmentError> {
        let activity = ledger_activity(body)?;
        let mut t = ScTxsTree {
            ids: Vec::new(),
            txs_hashes: Vec::new(),
            wcert_hashes: Vec::new(),
            tree: None,
        };
        let mut leaves = Vec::new();
        for (id, a) in &activity {
            let summary = a.wcert.as_ref().map(WithdrawalCertificate::summary);
            let th = txs_hash(&ft_root(&a.fts), &btr_root(&a.btrs));
            let wh = wcert_hash(summary.as_ref());
            leaves.push(sc_leaf(id, &th, &wh));
            t.ids.push(*id);
            t.txs_hashes.push(th);
            t.wcert_hashes.push(wh);
        }
        t.tree = MerkleTree::build(&leaves).ok();
        Ok(t)
    }

    pub fn root(&self) -> Digest {
        self.tree.as_ref().map(MerkleTree::root).unwrap_or_else(empty_list_root)
    }

    pub fn ledgers(&self) -> &[LedgerId] {
        &self.ids
    }

    fn opening(&self, tree: &MerkleTree, i: usize) -> LeafOpening {
        LeafOpening {
            ledger_id: self.ids[i],
            txs_hash: self.txs_hashes[i],
            wcert_hash: self.wcert_hashes[i],
            proof: tree.prove_padded(i),
        }
    }

    pub fn prove(&self, ledger_id: &LedgerId) -> ScTxsProof {
        let Some(tree) = &self.tree else {
            return ScTxsProof::Absent(NoDataProof {
                left: None,
                right: None,
            });
        };
        match self.ids.binary_search(ledger_id) {
            Ok(i) => ScTxsProof::Present(tree.prove_padded(i)),
            Err(pos) => {
                let left = pos.checked_sub(1).map(|i| self.opening(tree, i));
                let right = if pos < self.ids.len() {
                    Some(RightBound::Leaf(self.opening(tree, pos)))
                } else if pos < tree.padded_width() {
                    Some(RightBound::Padding(tree.prove_padded(pos)))
                } else {
                    None
                };
                ScTxsProof::Absent(NoDataProof { left, right })
            }
        }
    }
}

pub fn build_sctx_commitment(body: &McBlockBody) -> Result<Digest, CommitmentError> {
    Ok(ScTxsTree::build(body)?.root())
}

/// Checks that the ledger's leaf, rebuilt from its parts, sits under `root`.
pub fn verify_present(
    root: &Digest,
    ledger_id: &LedgerId,
    txs_hash: &Digest,
    wcert_hash: &Digest,
    proof: &MerkleProof,
) -> bool {
    let leaf = sc_leaf(ledger_id, txs_hash, wcert_hash);
    proof.root_from_leaf(&leaf).is_some_and(|r| &r == root)
}

pub fn verify_absent(root: &Digest, ledger_id: &LedgerId, proof: &NoDataProof) -> bool {
    match (&proof.left, &proof.right) {
        (None, None) => *root == empty_list_root(),
        (None, Some(RightBound::Leaf(r))) => {
            r.proof.leaf_index == 0 && r.ledger_id > *ledger_id && r.verify(root)
        }
        (None, Some(RightBound::Padding(_))) => false,
        (Some(l), right) => {
            if !(l.ledger_id < *ledger_id && l.verify(root)) {
                return false;
            }
            let depth = l.proof.siblings.len();
            let next = l.proof.leaf_index + 1;
            match right {
                None => depth < 64 && next == 1u64 << depth,
                Some(RightBound::Leaf(r)) => {
                    r.proof.siblings.len() == depth
                        && r.proof.leaf_index == next
                        && r.ledger_id > *ledger_id
                        && r.verify(root)
                }
                Some(RightBound::Padding(p)) => {
                    p.siblings.len() == depth
                        && p.leaf_index == next
                        && p.root_from_leaf(&null_leaf()).is_some_and(|r| &r == root)
                }
            }
        }
    }
}

pub fn verify_sctxs_proof(
    root: &Digest,
    ledger_id: &LedgerId,
    txs_hash: &Digest,
    wcert_hash: &Digest,
    proof: &ScTxsProof,
) -> bool {
    match proof {
        ScTxsProof::Present(p) => verify_present(root, ledger_id, txs_hash, wcert_hash, p),
        ScTxsProof::Absent(p) => verify_absent(root, ledger_id, p),
    }
}
