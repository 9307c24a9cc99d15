pub mod codec;
pub mod crypto;
pub mod latus;
pub mod mainchain;
pub mod proofsys;
pub mod transition;
