//! The four sidechain transaction types.

use serde::{Deserialize, Serialize};

use crate::codec::digest_of;
use crate::crypto::{hash_tagged, Digest, Domain, Keypair, SpendAuth, Utxo};
use crate::mainchain::{BackwardTransfer, ForwardTransfer, TxOut, WithdrawalRequest};
use crate::proofsys::{Field, TxKind};

use super::params::parse_metadata;

/// Nonce of the `ordinal`-th output created under `seed`.
pub fn output_nonce(seed: &Digest, ordinal: u64) -> Digest {
    hash_tagged(Domain::OutputNonce, &[&seed.0, &ordinal.to_be_bytes()])
}

/// Nonce seed of the `index`-th forward transfer of a mainchain block.
pub fn ft_nonce_seed(mcid: &Digest, index: u64, ft: &ForwardTransfer) -> Digest {
    hash_tagged(Domain::OutputNonce, &[&mcid.0, &index.to_be_bytes(), &ft.digest().0])
}

/// The UTXO a well-formed forward transfer creates.
pub fn ft_output(mcid: &Digest, index: u64, ft: &ForwardTransfer) -> Option<Utxo> {
    let (receiver, _) = parse_metadata(&ft.receiver_metadata).ok()?;
    Some(Utxo {
        addr: receiver,
        amount: ft.amount,
        nonce: output_nonce(&ft_nonce_seed(mcid, index, ft), 0),
    })
}

/// Backward transfer returning a failed forward transfer.
pub fn ft_refund(ft: &ForwardTransfer) -> BackwardTransfer {
    let to = match parse_metadata(&ft.receiver_metadata) {
        Ok((_, payback)) => payback,
        Err(refund) => refund,
    };
    BackwardTransfer {
        receiver: to,
        amount: ft.amount,
    }
}

/// The UTXO a request claims, decoded from its proofdata.
pub fn request_utxo(req: &WithdrawalRequest) -> Option<Utxo> {
    match req.proofdata.as_slice() {
        [Field::Digest(addr), Field::Integer(amount), Field::Digest(nonce)] => Some(Utxo {
            addr: crate::crypto::Address(*addr),
            amount: *amount,
            nonce: *nonce,
        }),
        _ => None,
    }
}

pub fn request_proofdata(utxo: &Utxo) -> Vec<Field> {
    vec![
        Field::Digest(utxo.addr.0),
        Field::Integer(utxo.amount),
        Field::Digest(utxo.nonce),
    ]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentTx {
    pub inputs: Vec<Utxo>,
    pub auths: Vec<SpendAuth>,
    pub outputs: Vec<TxOut>,
}

impl PaymentTx {
    pub fn sighash(&self) -> Digest {
        digest_of(Domain::ScTransaction, &("payment", &self.inputs, &self.outputs))
    }

    pub fn signed(inputs: &[(Utxo, &Keypair)], outputs: Vec<TxOut>) -> Self {
        let mut tx = PaymentTx {
            inputs: inputs.iter().map(|(u, _)| *u).collect(),
            auths: Vec::new(),
            outputs,
        };
        let msg = tx.sighash();
        tx.auths = inputs.iter().map(|(_, k)| SpendAuth::sign(k, &msg)).collect();
        tx
    }

    pub fn output_utxos(&self) -> Vec<Utxo> {
        let seed = self.sighash();
        self.outputs
            .iter()
            .enumerate()
            .map(|(i, o)| Utxo {
                addr: o.addr,
                amount: o.amount,
                nonce: output_nonce(&seed, i as u64),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BtTx {
    pub inputs: Vec<Utxo>,
    pub auths: Vec<SpendAuth>,
    pub bts: Vec<BackwardTransfer>,
}

impl BtTx {
    pub fn sighash(&self) -> Digest {
        digest_of(Domain::ScTransaction, &("backward", &self.inputs, &self.bts))
    }

    pub fn signed(inputs: &[(Utxo, &Keypair)], bts: Vec<BackwardTransfer>) -> Self {
        let mut tx = BtTx {
            inputs: inputs.iter().map(|(u, _)| *u).collect(),
            auths: Vec::new(),
            bts,
        };
        let msg = tx.sighash();
        tx.auths = inputs.iter().map(|(_, k)| SpendAuth::sign(k, &msg)).collect();
        tx
    }
}

/// Forward transfers of one mainchain block: one output per accepted
/// transfer, one refund per failed one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtTx {
    pub mcid: Digest,
    pub fts: Vec<ForwardTransfer>,
    pub outputs: Vec<Utxo>,
    pub rejected: Vec<BackwardTransfer>,
}

impl FtTx {
    /// State-free consistency: each transfer is either its derived output
    /// or its refund, in order. Which one depends on slot occupancy and is
    /// checked when the transaction is applied.
    pub fn is_consistent(&self) -> bool {
        let mut outs = self.outputs.iter().peekable();
        let mut rej = self.rejected.iter().peekable();
        for (i, ft) in self.fts.iter().enumerate() {
            let refund = ft_refund(ft);
            match ft_output(&self.mcid, i as u64, ft) {
                Some(out) if outs.peek() == Some(&&out) => {
                    outs.next();
                }
                _ if rej.peek() == Some(&&refund) => {
                    rej.next();
                }
                _ => return false,
            }
        }
        outs.next().is_none() && rej.next().is_none()
    }
}

/// Backward transfer requests of one mainchain block. Requests whose UTXO
/// is no longer present are skipped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BtrTx {
    pub mcid: Digest,
    pub btrs: Vec<WithdrawalRequest>,
    pub inputs: Vec<Utxo>,
    pub bts: Vec<BackwardTransfer>,
}

impl BtrTx {
    pub fn is_consistent(&self) -> bool {
        if self.inputs.len() != self.bts.len() {
            return false;
        }
        let mut taken = self.inputs.iter().zip(&self.bts).peekable();
        for btr in &self.btrs {
            let Some(utxo) = request_utxo(btr) else {
                continue;
            };
            let bt = BackwardTransfer {
                receiver: btr.receiver,
                amount: btr.amount,
            };
            if taken.peek() == Some(&(&utxo, &bt)) {
                taken.next();
            }
        }
        taken.next().is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScTransaction {
    Payment(PaymentTx),
    Backward(BtTx),
    ForwardTransfers(FtTx),
    BtRequests(BtrTx),
}

/// One basic state transition: a transaction or the epoch-start reset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    EpochStart,
    Tx(ScTransaction),
}

impl Transition {
    pub fn kind(&self) -> TxKind {
        match self {
            Transition::EpochStart => TxKind::EpochStart,
            Transition::Tx(ScTransaction::Payment(_)) => TxKind::Payment,
            Transition::Tx(ScTransaction::Backward(_)) => TxKind::BackwardTransfer,
            Transition::Tx(ScTransaction::ForwardTransfers(_)) => TxKind::ForwardTransfers,
            Transition::Tx(ScTransaction::BtRequests(_)) => TxKind::BtRequests,
        }
    }

    pub fn digest(&self) -> Digest {
        digest_of(Domain::ScTransaction, self)
    }
}

impl ScTransaction {
    pub fn digest(&self) -> Digest {
        Transition::Tx(self.clone()).digest()
    }
}
