//! Withdrawal requests (BTR) and ceased-sidechain withdrawals (CSW).
//!
//! Both prove ownership of a UTXO that was in the state certified at some
//! anchor epoch and untouched by every certified epoch since, up to the
//! latest certificate the mainchain accepted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_tagged, prove_unspent_since, Address, Digest, Domain, Keypair, MerkleProof, MerkleStateTree, MstDelta, SpendAuth, Utxo};
use crate::mainchain::commitment::{btr_root, ft_root, txs_hash, wcert_hash};
use crate::mainchain::{
    ledger_activity, request_public_input, verify_sctxs_proof, CertSummary, LedgerId, McBlockHeader, McChain,
    ScTxsProof, ScTxsTree, WithdrawalCertificate, WithdrawalRequest,
};
use crate::proofsys::{proofdata_root, Field, ProofContext, ProofError, ProofSystem, PublicInput, StatementId, Witness};

use super::params::LatusParams;
use super::tx::request_proofdata;

/// Message the UTXO owner signs to authorize a withdrawal.
pub fn request_auth_message(ledger_id: &LedgerId, nullifier: &Digest, receiver: &Address, amount: u64) -> Digest {
    hash_tagged(
        Domain::SpendAuth,
        &[&ledger_id.0, &nullifier.0, &receiver.0 .0, &amount.to_be_bytes()],
    )
}

/// One mainchain block of the certificate range with the sidechain's
/// commitment opening.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertRef {
    pub header: McBlockHeader,
    /// Forward transfer and request part of the leaf; unused when absent.
    pub txs_hash: Digest,
    pub cert: Option<CertSummary>,
    pub proof: ScTxsProof,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RequestWitness {
    pub params: LatusParams,
    pub utxo: Utxo,
    pub auth: SpendAuth,
    /// Inclusion of the UTXO in the anchor epoch's certified MST.
    pub inclusion: MerkleProof,
    /// Contiguous mainchain blocks from the anchor certificate's block to
    /// the latest certificate's block.
    pub refs: Vec<CertRef>,
}

fn ensure(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

/// Deltas of every epoch certified after the anchor plus the anchor MST
/// root, read from the final certificates in `refs`.
fn certified_history(ledger_id: &LedgerId, refs: &[CertRef]) -> Result<(Digest, Vec<MstDelta>), String> {
    let first = refs.first().ok_or("no certificate range")?;
    let last = refs.last().expect("non-empty");
    for pair in refs.windows(2) {
        ensure(
            pair[1].header.prev == pair[0].header.hash() && pair[1].header.height == pair[0].header.height + 1,
            "certificate range is not contiguous",
        )?;
    }
    let mut finals: BTreeMap<u64, &CertSummary> = BTreeMap::new();
    for r in refs {
        let wh = wcert_hash(r.cert.as_ref());
        if matches!(r.proof, ScTxsProof::Absent(_)) {
            ensure(r.cert.is_none(), "certificate claimed in a block without sidechain data")?;
        }
        ensure(
            verify_sctxs_proof(&r.header.sc_txs_commitment, ledger_id, &r.txs_hash, &wh, &r.proof),
            "commitment opening fails",
        )?;
        if let Some(c) = &r.cert {
            ensure(c.ledger_id == *ledger_id, "certificate of another sidechain")?;
            finals.insert(c.epoch_id, c);
        }
    }
    let anchor = first.cert.as_ref().ok_or("range does not start at a certificate")?;
    let latest = last.cert.as_ref().ok_or("range does not end at a certificate")?;
    ensure(finals.get(&anchor.epoch_id) == Some(&anchor), "anchor certificate was superseded")?;
    ensure(finals.get(&latest.epoch_id) == Some(&latest), "latest certificate was superseded")?;
    let epochs: Vec<u64> = finals.keys().copied().collect();
    ensure(
        epochs.first() == Some(&anchor.epoch_id)
            && epochs.last() == Some(&latest.epoch_id)
            && epochs.windows(2).all(|w| w[1] == w[0] + 1),
        "certified epochs are not consecutive",
    )?;
    let anchor_root = match anchor.proofdata.as_slice() {
        [_, Field::Digest(root), Field::Bits(_)] => *root,
        _ => return Err("anchor proofdata malformed".into()),
    };
    let mut deltas = Vec::new();
    for c in finals.values().skip(1) {
        match c.proofdata.as_slice() {
            [_, _, Field::Bits(d)] => deltas.push(d.clone()),
            _ => return Err("certificate proofdata malformed".into()),
        }
    }
    Ok((anchor_root, deltas))
}

fn request_predicate(ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String> {
    if public.fields.len() != 5 {
        return Err("expected 5 public fields".into());
    }
    let d = |i| public.digest(i).ok_or_else(|| "public field is not a digest".to_string());
    let (cert_block, nullifier, receiver, pd_root) = (d(0)?, d(1)?, Address(d(2)?), d(4)?);
    let amount = public.integer(3).ok_or("amount is not an integer")?;
    let w: RequestWitness = witness.decode()?;
    ensure(w.params.digest() == ctx.seed, "parameters do not match the key")?;
    let ledger = w.params.ledger_id;
    ensure(
        w.refs.last().map(|r| r.header.hash()) == Some(cert_block),
        "range does not end at the latest certificate block",
    )?;
    let (anchor_root, deltas) = certified_history(&ledger, &w.refs)?;
    ensure(
        w.inclusion.siblings.len() == w.params.mst_depth as usize,
        "inclusion path has the wrong depth",
    )?;
    ensure(
        prove_unspent_since(&w.utxo, &anchor_root, &w.inclusion, &deltas),
        "utxo not proven unspent since the anchor",
    )?;
    ensure(nullifier == w.utxo.nullifier(), "nullifier mismatch")?;
    ensure(amount == w.utxo.amount, "amount mismatch")?;
    ensure(pd_root == proofdata_root(&request_proofdata(&w.utxo)), "proofdata mismatch")?;
    ensure(
        w.auth
            .authorizes(&w.utxo.addr, &request_auth_message(&ledger, &nullifier, &receiver, amount)),
        "owner authorization invalid",
    )
}

pub fn register_predicates(system: &mut ProofSystem) -> Result<(), ProofError> {
    system.register_predicate(StatementId::Btr, request_predicate)?;
    system.register_predicate(StatementId::Csw, request_predicate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Btr,
    Csw,
}

impl RequestKind {
    pub fn statement(self) -> StatementId {
        match self {
            RequestKind::Btr => StatementId::Btr,
            RequestKind::Csw => StatementId::Csw,
        }
    }
}

#[derive(Debug, Error)]
pub enum RequestError {
    #[error("sidechain unknown to the mainchain")]
    UnknownSidechain,
    #[error("no certificate accepted yet")]
    NoCertificate,
    #[error("no accepted certificate for epoch {0}")]
    NoAnchor(u64),
    #[error("mainchain block missing from the active chain")]
    MissingBlock,
    #[error("sidechain state does not match the certified root")]
    StateMismatch,
    #[error("utxo not in the anchor state")]
    NotInAnchor,
    #[error(transparent)]
    Proof(#[from] ProofError),
}

impl RequestError {
    pub fn code(&self) -> &'static str {
        match self {
            RequestError::UnknownSidechain => "unknown_sidechain",
            RequestError::NoCertificate => "no_certificate",
            RequestError::NoAnchor(_) => "no_anchor",
            RequestError::MissingBlock => "missing_block",
            RequestError::StateMismatch => "state_mismatch",
            RequestError::NotInAnchor => "not_in_anchor",
            RequestError::Proof(_) => "unprovable",
        }
    }
}

/// Builds a BTR or CSW against the mainchain's active chain.
/// `anchor_mst` must be the MST certified for `anchor_epoch`, which defaults
/// to the latest certified epoch.
#[allow(clippy::too_many_arguments)]
pub fn build_request(
    system: &ProofSystem,
    params: &LatusParams,
    mc: &McChain,
    kind: RequestKind,
    utxo: &Utxo,
    owner: &Keypair,
    receiver: Address,
    anchor_epoch: u64,
    anchor_mst: &MerkleStateTree,
) -> Result<WithdrawalRequest, RequestError> {
    let ledger = params.ledger_id;
    let sc = mc
        .tip_state()
        .sidechain(&ledger)
        .ok_or(RequestError::UnknownSidechain)?;
    let latest = sc.last_cert().ok_or(RequestError::NoCertificate)?;
    let anchor = sc.certs.get(&anchor_epoch).ok_or(RequestError::NoAnchor(anchor_epoch))?;
    let mut refs = Vec::new();
    for h in anchor.block_height..=latest.block_height {
        let hash = mc.active_hash_at(h).ok_or(RequestError::MissingBlock)?;
        let block = mc.block(&hash).ok_or(RequestError::MissingBlock)?;
        let tree = ScTxsTree::build(&block.body).map_err(|_| RequestError::MissingBlock)?;
        let activity = ledger_activity(&block.body)
            .map_err(|_| RequestError::MissingBlock)?
            .remove(&ledger)
            .unwrap_or_default();
        refs.push(CertRef {
            header: block.header.clone(),
            txs_hash: txs_hash(&ft_root(&activity.fts), &btr_root(&activity.btrs)),
            cert: activity.wcert.as_ref().map(WithdrawalCertificate::summary),
            proof: tree.prove(&ledger),
        });
    }
    let certified_root = refs
        .first()
        .and_then(|r| r.cert.as_ref())
        .and_then(|c| c.proofdata.get(1))
        .and_then(Field::as_digest);
    if certified_root != Some(anchor_mst.root()) {
        return Err(RequestError::StateMismatch);
    }
    let inclusion = anchor_mst
        .prove_inclusion(utxo)
        .map_err(|_| RequestError::NotInAnchor)?;
    let nullifier = utxo.nullifier();
    let proofdata = request_proofdata(utxo);
    let auth = SpendAuth::sign(
        owner,
        &request_auth_message(&ledger, &nullifier, &receiver, utxo.amount),
    );
    let public = request_public_input(latest.block_hash, nullifier, receiver, utxo.amount, proofdata_root(&proofdata));
    let witness = RequestWitness {
        params: params.clone(),
        utxo: *utxo,
        auth,
        inclusion,
        refs,
    };
    let proof = system.prove(
        &params.keys(kind.statement()).pk,
        &public,
        Witness::encode(&witness),
    )?;
    Ok(WithdrawalRequest {
        ledger_id: ledger,
        receiver,
        amount: utxo.amount,
        nullifier,
        proofdata,
        proof,
    })
}
