//! Hashing, Merkle trees, the Merkle State Tree and signatures.

pub mod delta;
pub mod hash;
pub mod merkle;
pub mod mst;
pub mod sig;

pub use delta::{delta_or, DeltaError, MstDelta};
pub use hash::{hash_bytes, hash_tagged, leaf_hash, node_hash, Digest, Domain};
pub use merkle::{
    empty_list_root, merkle_root, mht_build, mht_prove, mht_verify, null_leaf, MerkleError,
    MerkleProof, MerkleTree,
};
pub use mst::{
    empty_subtree, slot_node,
    delta_compute, mst_insert, mst_position, mst_prove_inclusion, mst_remove,
    mst_verify_inclusion, prove_unspent_since, MerkleStateTree, MstError, Utxo,
};
pub use sig::{Address, Keypair, PublicKey, Signature, SpendAuth};
