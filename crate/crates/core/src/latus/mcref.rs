//! Mainchain block references: a header plus everything the sidechain needs
//! from that block, with a proof that nothing was left out.

use serde::{Deserialize, Serialize};

use crate::crypto::{Digest, MerkleProof};
use crate::mainchain::commitment::{btr_root, ft_root, txs_hash, wcert_hash};
use crate::mainchain::{
    ledger_activity, verify_absent, verify_present, CertSummary, LedgerId, McBlock, McBlockHeader,
    NoDataProof, ScTxsProof, ScTxsTree, WithdrawalCertificate,
};

use super::state::{process_btrs, process_fts, UtxoStore};
use super::tx::{BtrTx, FtTx, ScTransaction, Transition};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McBlockReference {
    pub header: McBlockHeader,
    pub mproof: Option<MerkleProof>,
    pub proof_of_no_data: Option<NoDataProof>,
    pub forward_transfers: Option<FtTx>,
    pub bt_requests: Option<BtrTx>,
    /// Certificates are carried as summaries so references stay small.
    pub wcert: Option<CertSummary>,
}

impl McBlockReference {
    pub fn hash(&self) -> Digest {
        self.header.hash()
    }

    /// Sync transactions the reference contributes, in block order.
    pub fn sync_transitions(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        if let Some(ft) = &self.forward_transfers {
            out.push(Transition::Tx(ScTransaction::ForwardTransfers(ft.clone())));
        }
        if let Some(btr) = &self.bt_requests {
            out.push(Transition::Tx(ScTransaction::BtRequests(btr.clone())));
        }
        out
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum McRefError {
    #[error("mainchain block has conflicting certificates")]
    Commitment,
    #[error(transparent)]
    Tx(#[from] super::state::TxError),
}

/// Builds the reference for `block`, running its sync transactions against
/// `store` so the outputs reflect current slot occupancy.
pub fn make_mc_reference<S: UtxoStore>(
    block: &McBlock,
    ledger_id: &LedgerId,
    store: &mut S,
) -> Result<McBlockReference, McRefError> {
    let mcid = block.hash();
    let tree = ScTxsTree::build(&block.body).map_err(|_| McRefError::Commitment)?;
    let mut activity = ledger_activity(&block.body).map_err(|_| McRefError::Commitment)?;
    let mut r = McBlockReference {
        header: block.header.clone(),
        mproof: None,
        proof_of_no_data: None,
        forward_transfers: None,
        bt_requests: None,
        wcert: None,
    };
    match tree.prove(ledger_id) {
        ScTxsProof::Absent(p) => r.proof_of_no_data = Some(p),
        ScTxsProof::Present(p) => {
            r.mproof = Some(p);
            let a = activity.remove(ledger_id).unwrap_or_default();
            if !a.fts.is_empty() {
                let mut tx = FtTx {
                    mcid,
                    fts: a.fts,
                    outputs: vec![],
                    rejected: vec![],
                };
                (tx.outputs, tx.rejected) = process_fts(store, &tx)?;
                r.forward_transfers = Some(tx);
            }
            if !a.btrs.is_empty() {
                let mut tx = BtrTx {
                    mcid,
                    btrs: a.btrs,
                    inputs: vec![],
                    bts: vec![],
                };
                (tx.inputs, tx.bts) = process_btrs(store, &tx)?;
                r.bt_requests = Some(tx);
            }
            r.wcert = a.wcert.as_ref().map(WithdrawalCertificate::summary);
        }
    }
    Ok(r)
}

/// State-free validity: the header hashes to `expected`, the sidechain data
/// is complete per the block's commitment, and the sync transactions are
/// consistent with it.
pub fn verify_mc_reference(r: &McBlockReference, ledger_id: &LedgerId, expected: &Digest) -> bool {
    let mcid = r.header.hash();
    if mcid != *expected {
        return false;
    }
    let root = &r.header.sc_txs_commitment;
    match (&r.mproof, &r.proof_of_no_data) {
        (Some(p), None) => {
            let fts = r.forward_transfers.as_ref().map(|t| t.fts.as_slice()).unwrap_or(&[]);
            let btrs = r.bt_requests.as_ref().map(|t| t.btrs.as_slice()).unwrap_or(&[]);
            if r.forward_transfers.as_ref().is_some_and(|t| t.fts.is_empty())
                || r.bt_requests.as_ref().is_some_and(|t| t.btrs.is_empty())
            {
                return false;
            }
            if r.wcert.as_ref().is_some_and(|s| s.ledger_id != *ledger_id) {
                return false;
            }
            let th = txs_hash(&ft_root(fts), &btr_root(btrs));
            if !verify_present(root, ledger_id, &th, &wcert_hash(r.wcert.as_ref()), p) {
                return false;
            }
        }
        (None, Some(p)) => {
            if r.forward_transfers.is_some() || r.bt_requests.is_some() || r.wcert.is_some() {
                return false;
            }
            if !verify_absent(root, ledger_id, p) {
                return false;
            }
        }
        _ => return false,
    }
    if let Some(ft) = &r.forward_transfers {
        if ft.mcid != mcid || !ft.is_consistent() {
            return false;
        }
    }
    if let Some(btr) = &r.bt_requests {
        if btr.mcid != mcid || !btr.is_consistent() {
            return false;
        }
    }
    true
}
