//! Mainchain node: UTXO ledger, sidechain registry, certificate and
//! withdrawal-request processing, and longest-chain fork choice.

pub mod chain;
pub mod commitment;
pub mod ledger;
pub mod types;

pub use chain::{Assembled, ExtendOutcome, McChain, McEntry, McItem};
pub use commitment::{
    build_sctx_commitment, ledger_activity, verify_absent, verify_present, verify_sctxs_proof,
    CommitmentError, LeafOpening, LedgerActivity, NoDataProof, RightBound, ScTxsProof, ScTxsTree,
};
pub use ledger::{
    apply_block, request_public_input, wcert_public_input, AcceptedCert, BlockContext, BlockError,
    LedgerState, RejectReason, SidechainEntry, SidechainStatus, UtxoEntry,
};
pub use types::{
    bt_list_root, bt_list_total, BackwardTransfer, CertSummary, ForwardTransfer, LedgerId,
    McBlock, McBlockBody, McBlockHeader, McTransaction, OutPoint, SidechainConfig, TxIn, TxOut,
    WithdrawalCertificate, WithdrawalRequest,
};
