//! The sidechain: UTXO state in a fixed-depth Merkle state tree, forward
//! and backward transfers, mainchain references, stake-based forging and
//! certificate generation.

pub mod block;
pub mod consensus;
pub mod mcref;
pub mod node;
pub mod params;
pub mod state;
pub mod tx;
pub mod withdrawal;

pub use block::{check_refs, BlockStep, McPointer, RefError, ScBlock, ScBlockHeader};
pub use consensus::{select_slot_leaders, slot_leader, StakeDistribution};
pub use mcref::{make_mc_reference, verify_mc_reference, McBlockReference, McRefError};
pub use node::{CertError, ForgeError, Forged, LatusNode, ScBlockError, ScEntry};
pub use params::{parse_metadata, receiver_metadata, LatusParams, ParamsError};
pub use state::{apply_transition, bt_chain_of, state_digest, ScState, SlotOpening, TxError, UtxoStore};
pub use tx::{BtTx, BtrTx, FtTx, PaymentTx, ScTransaction, Transition};
pub use withdrawal::{build_request, request_auth_message, RequestError, RequestKind};

use crate::proofsys::{ProofError, ProofSystem};

/// A proof system with every sidechain statement registered.
pub fn proof_system() -> ProofSystem {
    let mut ps = ProofSystem::new();
    register_predicates(&mut ps).expect("fresh registry");
    ps
}

pub fn register_predicates(ps: &mut ProofSystem) -> Result<(), ProofError> {
    crate::transition::register_predicates(ps)?;
    withdrawal::register_predicates(ps)
}
