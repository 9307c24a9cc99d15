//! Recursive state transition proofs: one Base proof per transition,
//! Merge proofs over adjacent ranges, a Block proof per sidechain block, an
//! Epoch proof per withdrawal epoch, and the certificate proof on top.
//!
//! Every transition proof exposes `(from, to, H(steps))` where `steps` is the
//! ordered list of what it covers. Merging concatenates step lists, so a
//! verifier holding the steps can check that nothing was skipped or
//! reordered.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_tagged, Digest, Domain, MstDelta};
use crate::latus::block::{check_refs, BlockStep, McPointer, ScBlock};
use crate::latus::params::{wcert_proofdata_schema, LatusParams};
use crate::latus::state::{apply_transition, bt_chain_of, state_digest, PartialTree, PathStore, ScState, SlotOpening, TxError};
use crate::latus::tx::Transition;
use crate::mainchain::{bt_list_root, wcert_public_input, BackwardTransfer, WithdrawalCertificate};
use crate::proofsys::{
    proofdata_root, schema_matches, Field, ProofContext, ProofError, ProofSystem, PublicInput, StatementId,
    StatementProof, TxKind, VerifyingKey, Witness,
};

pub fn steps_digest(steps: &[Digest]) -> Digest {
    let flat: Vec<u8> = steps.iter().flat_map(|d| d.0).collect();
    hash_tagged(Domain::Step, &[&(steps.len() as u64).to_be_bytes(), &flat])
}

pub fn transition_public_input(from: &Digest, to: &Digest, steps: &[Digest]) -> PublicInput {
    PublicInput::new(vec![
        Field::Digest(*from),
        Field::Digest(*to),
        Field::Digest(steps_digest(steps)),
    ])
}

/// Proof that applying `steps` in order takes state `from` to state `to`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionProof {
    pub statement: StatementId,
    pub from: Digest,
    pub to: Digest,
    pub steps: Vec<Digest>,
    pub proof: StatementProof,
}

impl TransitionProof {
    pub fn public_input(&self) -> PublicInput {
        transition_public_input(&self.from, &self.to, &self.steps)
    }
}

/// Checks `proof` against `vk` for the claimed endpoints.
pub fn verify_transition(system: &ProofSystem, vk: &VerifyingKey, from: &Digest, to: &Digest, proof: &TransitionProof) -> bool {
    proof.from == *from
        && proof.to == *to
        && vk.statement == proof.statement
        && system.verify(vk, &proof.public_input(), &proof.proof)
}

/// Proof that a run of sidechain blocks forms one complete withdrawal epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochProof {
    pub from: Digest,
    pub to: Digest,
    /// Block the epoch builds on: the previous epoch's last block or genesis.
    pub sc_anchor: Digest,
    pub sc_last: Digest,
    pub sc_last_height: u64,
    pub mc_prev_last: Digest,
    pub mc_last: Digest,
    pub proof: StatementProof,
}

impl EpochProof {
    pub fn public_input(&self) -> PublicInput {
        PublicInput::new(vec![
            Field::Digest(self.from),
            Field::Digest(self.to),
            Field::Digest(self.sc_anchor),
            Field::Digest(self.sc_last),
            Field::Integer(self.sc_last_height),
            Field::Digest(self.mc_prev_last),
            Field::Digest(self.mc_last),
        ])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaseWitness {
    pub params: LatusParams,
    pub transition: Transition,
    pub pre_mst_root: Digest,
    pub pre_bt_chain: Digest,
    pub pre_delta: MstDelta,
    pub openings: Vec<SlotOpening>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MergeWitness {
    pub left: TransitionProof,
    pub right: TransitionProof,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockWitness {
    pub params: LatusParams,
    pub block: ScBlock,
    pub parent_height: u64,
    pub mc_before: McPointer,
    pub starts_epoch: bool,
    /// Proof over the block's transitions; absent for a block without any.
    pub inner: Option<TransitionProof>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochWitness {
    pub params: LatusParams,
    pub steps: Vec<BlockStep>,
    pub inner: TransitionProof,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WCertWitness {
    pub params: LatusParams,
    pub epoch: EpochProof,
    /// Proofdata of the previous epoch's certificate; `None` for epoch 0.
    pub prev_proofdata: Option<Vec<Field>>,
    /// Backward transfer chain of the anchor state.
    pub pre_bt_chain: Digest,
    pub bt_list: Vec<BackwardTransfer>,
    pub end_mst_root: Digest,
    pub end_delta: MstDelta,
}

#[derive(Debug, Error)]
pub enum ProveError {
    #[error(transparent)]
    Proof(#[from] ProofError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error("proofs are not adjacent")]
    NotAdjacent,
    #[error("nothing to prove")]
    Empty,
    #[error("block is malformed: {0}")]
    Block(String),
}

fn digests<const N: usize>(public: &PublicInput) -> Result<[Digest; N], String> {
    if public.fields.len() != N {
        return Err(format!("expected {N} public fields"));
    }
    let mut out = [Digest::ZERO; N];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = public.digest(i).ok_or("public field is not a digest")?;
    }
    Ok(out)
}

fn check_params(ctx: &ProofContext<'_>, params: &LatusParams) -> Result<(), String> {
    if params.digest() != ctx.seed {
        return Err("parameters do not match the key".into());
    }
    Ok(())
}

fn ensure(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn verify_child(ctx: &ProofContext<'_>, child: &TransitionProof, allowed: fn(StatementId) -> bool) -> Result<(), String> {
    ensure(allowed(child.statement), "sub-proof has the wrong statement")?;
    ensure(
        ctx.verify(child.statement, &child.public_input(), &child.proof),
        "sub-proof does not verify",
    )
}

fn is_tx_level(s: StatementId) -> bool {
    matches!(s, StatementId::Base(_) | StatementId::Merge)
}

fn is_mergeable(s: StatementId) -> bool {
    matches!(s, StatementId::Base(_) | StatementId::Merge | StatementId::Block)
}

fn is_block_level(s: StatementId) -> bool {
    matches!(s, StatementId::Block | StatementId::Merge)
}

fn base_predicate(kind: TxKind) -> impl Fn(&ProofContext<'_>, &PublicInput, &Witness) -> Result<(), String> {
    move |ctx, public, witness| {
        let [from, to, steps] = digests::<3>(public)?;
        let w: BaseWitness = witness.decode()?;
        check_params(ctx, &w.params)?;
        ensure(w.transition.kind() == kind, "transition kind does not match the statement")?;
        ensure(steps == steps_digest(&[w.transition.digest()]), "step list mismatch")?;
        ensure(
            w.pre_delta.len() == 1u64 << w.params.mst_depth,
            "delta length does not match the tree depth",
        )?;
        ensure(
            state_digest(&w.pre_mst_root, &w.pre_bt_chain, &w.pre_delta) == from,
            "pre-state does not match the source digest",
        )?;
        let tree = PartialTree::from_openings(&w.pre_mst_root, w.params.mst_depth, &w.openings)
            .ok_or("slot openings do not match the pre-state root")?;
        let mut store = PathStore {
            tree,
            bt_chain: w.pre_bt_chain,
            delta: w.pre_delta,
        };
        apply_transition(&mut store, &w.transition).map_err(|e| e.to_string())?;
        ensure(store.digest() == to, "post-state does not match the target digest")
    }
}

fn merge_predicate(ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String> {
    let [from, to, steps] = digests::<3>(public)?;
    let w: MergeWitness = witness.decode()?;
    verify_child(ctx, &w.left, is_mergeable)?;
    verify_child(ctx, &w.right, is_mergeable)?;
    ensure(w.left.to == w.right.from, "sub-proofs are not adjacent")?;
    ensure(w.left.from == from && w.right.to == to, "endpoints mismatch")?;
    let all: Vec<Digest> = w.left.steps.iter().chain(&w.right.steps).copied().collect();
    ensure(steps == steps_digest(&all), "step list mismatch")
}

fn block_predicate(ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String> {
    let [from, to, steps] = digests::<3>(public)?;
    let w: BlockWitness = witness.decode()?;
    check_params(ctx, &w.params)?;
    let b = &w.block;
    ensure(b.header.height == w.parent_height + 1, "height does not follow the parent")?;
    ensure(b.signature_valid(), "forger signature invalid")?;
    ensure(b.body_matches_header(), "body does not match the header")?;
    ensure(b.header.state_digest == to, "header state does not match the target digest")?;
    let (mc_after, ends_epoch) = check_refs(&w.params, &b.mc_refs, w.mc_before).map_err(|e| e.to_string())?;
    let transitions: Vec<Digest> = b.transitions(w.starts_epoch).iter().map(Transition::digest).collect();
    match &w.inner {
        None => {
            ensure(transitions.is_empty(), "missing transaction proof")?;
            ensure(from == to, "empty block changes the state")?;
        }
        Some(inner) => {
            verify_child(ctx, inner, is_tx_level)?;
            ensure(inner.from == from && inner.to == to, "endpoints mismatch")?;
            ensure(inner.steps == transitions, "transactions do not match the block")?;
        }
    }
    let step = BlockStep {
        block_hash: b.hash(),
        parent_hash: b.header.parent,
        height: b.header.height,
        mc_before: w.mc_before,
        mc_after,
        starts_epoch: w.starts_epoch,
        ends_epoch,
    };
    ensure(steps == steps_digest(&[step.digest()]), "step list mismatch")
}

fn epoch_predicate(ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String> {
    if public.fields.len() != 7 {
        return Err("expected 7 public fields".into());
    }
    let d = |i| public.digest(i).ok_or_else(|| "public field is not a digest".to_string());
    let (from, to, sc_anchor, sc_last) = (d(0)?, d(1)?, d(2)?, d(3)?);
    let sc_last_height = public.integer(4).ok_or("public field is not an integer")?;
    let (mc_prev_last, mc_last) = (d(5)?, d(6)?);
    let w: EpochWitness = witness.decode()?;
    check_params(ctx, &w.params)?;
    let (first, last) = match (w.steps.first(), w.steps.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err("epoch without blocks".into()),
    };
    verify_child(ctx, &w.inner, is_block_level)?;
    ensure(w.inner.from == from && w.inner.to == to, "endpoints mismatch")?;
    let step_digests: Vec<Digest> = w.steps.iter().map(BlockStep::digest).collect();
    ensure(w.inner.steps == step_digests, "blocks do not match the proof")?;

    ensure(first.parent_hash == sc_anchor, "first block does not build on the anchor")?;
    ensure(first.starts_epoch, "first block does not open the epoch")?;
    ensure(first.mc_before.hash == mc_prev_last, "epoch does not start after the previous epoch")?;
    for pair in w.steps.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        ensure(b.parent_hash == a.block_hash && b.height == a.height + 1, "blocks are not chained")?;
        ensure(b.mc_before == a.mc_after, "mainchain references are not contiguous")?;
        ensure(!a.ends_epoch && !b.starts_epoch, "epoch boundary inside the range")?;
    }
    ensure(last.ends_epoch, "last block does not close the epoch")?;
    ensure(last.block_hash == sc_last && last.height == sc_last_height, "last block mismatch")?;
    ensure(last.mc_after.hash == mc_last, "epoch does not end at the epoch-last mainchain block")?;
    ensure(
        w.params.is_epoch_last(last.mc_after.height)
            && first.mc_before.height + w.params.epoch_len == last.mc_after.height,
        "range is not exactly one epoch",
    )
}

fn wcert_predicate(ctx: &ProofContext<'_>, public: &PublicInput, witness: &Witness) -> Result<(), String> {
    if public.fields.len() != 6 {
        return Err("expected 6 public fields".into());
    }
    let quality = public.integer(0).ok_or("quality is not an integer")?;
    let d = |i| public.digest(i).ok_or_else(|| "public field is not a digest".to_string());
    let (bt_root, mc_prev_last, mc_last, prev_pd_root, pd_root) = (d(1)?, d(2)?, d(3)?, d(4)?, d(5)?);
    let w: WCertWitness = witness.decode()?;
    check_params(ctx, &w.params)?;
    let e = &w.epoch;
    ensure(
        ctx.verify(StatementId::Epoch, &e.public_input(), &e.proof),
        "epoch proof does not verify",
    )?;
    ensure(e.mc_prev_last == mc_prev_last && e.mc_last == mc_last, "epoch bounds mismatch")?;
    ensure(e.sc_last_height == quality, "quality is not the last block height")?;
    ensure(bt_list_root(&w.bt_list) == bt_root, "backward transfer root mismatch")?;
    ensure(
        w.end_delta.len() == 1u64 << w.params.mst_depth,
        "delta length does not match the tree depth",
    )?;
    ensure(
        e.to == state_digest(&w.end_mst_root, &bt_chain_of(&w.bt_list), &w.end_delta),
        "end state does not match the certified data",
    )?;
    let proofdata = vec![
        Field::Digest(e.sc_last),
        Field::Digest(w.end_mst_root),
        Field::Bits(w.end_delta.clone()),
    ];
    ensure(proofdata_root(&proofdata) == pd_root, "proofdata mismatch")?;
    match &w.prev_proofdata {
        None => {
            ensure(prev_pd_root == Digest::ZERO, "first epoch has no predecessor")?;
            ensure(e.sc_anchor == w.params.genesis_hash(), "first epoch must start at genesis")?;
            let genesis = ScState::genesis(w.params.mst_depth).map_err(|e| e.to_string())?;
            ensure(e.from == genesis.digest(), "first epoch must start from the genesis state")
        }
        Some(prev) => {
            ensure(schema_matches(&wcert_proofdata_schema(), prev), "previous proofdata malformed")?;
            ensure(proofdata_root(prev) == prev_pd_root, "previous proofdata mismatch")?;
            let (anchor, root, delta) = match prev.as_slice() {
                [Field::Digest(a), Field::Digest(r), Field::Bits(d)] => (a, r, d),
                _ => return Err("previous proofdata malformed".into()),
            };
            ensure(e.sc_anchor == *anchor, "epoch does not build on the previous certificate")?;
            ensure(
                e.from == state_digest(root, &w.pre_bt_chain, delta),
                "start state does not match the previous certificate",
            )
        }
    }
}

pub fn register_predicates(system: &mut ProofSystem) -> Result<(), ProofError> {
    for kind in [
        TxKind::Payment,
        TxKind::ForwardTransfers,
        TxKind::BackwardTransfer,
        TxKind::BtRequests,
        TxKind::EpochStart,
    ] {
        system.register_predicate(StatementId::Base(kind), base_predicate(kind))?;
    }
    system.register_predicate(StatementId::Merge, merge_predicate)?;
    system.register_predicate(StatementId::Block, block_predicate)?;
    system.register_predicate(StatementId::Epoch, epoch_predicate)?;
    system.register_predicate(StatementId::WCert, wcert_predicate)
}

/// Everything a block proof needs beyond the block itself.
#[derive(Clone, Debug)]
pub struct BlockContextInfo {
    pub parent_height: u64,
    pub mc_before: McPointer,
    pub starts_epoch: bool,
}

/// Proving entry points for one sidechain.
pub struct TransitionProver<'a> {
    pub system: &'a ProofSystem,
    pub params: &'a LatusParams,
}

impl<'a> TransitionProver<'a> {
    pub fn new(system: &'a ProofSystem, params: &'a LatusParams) -> Self {
        TransitionProver { system, params }
    }

    fn prove(&self, statement: StatementId, public: &PublicInput, witness: Witness) -> Result<StatementProof, ProofError> {
        self.system.prove(&self.params.keys(statement).pk, public, witness)
    }

    /// Proves `transition` from `before`; `after` is the claimed result.
    pub fn prove_base(&self, transition: &Transition, before: &ScState, after: &ScState) -> Result<TransitionProof, ProveError> {
        let mut scratch = before.clone();
        let openings = scratch.apply_with_openings(transition)?;
        self.base_with_openings(transition, before, after.digest(), openings)
    }

    /// Applies `transition` to `state` and proves it.
    pub fn apply_and_prove(&self, transition: &Transition, state: &mut ScState) -> Result<TransitionProof, ProveError> {
        let before = state.clone();
        let openings = state.apply_with_openings(transition)?;
        self.base_with_openings(transition, &before, state.digest(), openings)
    }

    fn base_with_openings(
        &self,
        transition: &Transition,
        before: &ScState,
        to: Digest,
        openings: Vec<SlotOpening>,
    ) -> Result<TransitionProof, ProveError> {
        let from = before.digest();
        let steps = vec![transition.digest()];
        let statement = StatementId::Base(transition.kind());
        let witness = BaseWitness {
            params: self.params.clone(),
            transition: transition.clone(),
            pre_mst_root: before.mst.root(),
            pre_bt_chain: before.bt_chain,
            pre_delta: before.epoch_delta.clone(),
            openings,
        };
        let public = transition_public_input(&from, &to, &steps);
        let proof = self.prove(statement, &public, Witness::encode(&witness))?;
        Ok(TransitionProof {
            statement,
            from,
            to,
            steps,
            proof,
        })
    }

    pub fn prove_merge(&self, left: &TransitionProof, right: &TransitionProof) -> Result<TransitionProof, ProveError> {
        if left.to != right.from {
            return Err(ProveError::NotAdjacent);
        }
        let steps: Vec<Digest> = left.steps.iter().chain(&right.steps).copied().collect();
        let public = transition_public_input(&left.from, &right.to, &steps);
        let witness = MergeWitness {
            left: left.clone(),
            right: right.clone(),
        };
        let proof = self.prove(StatementId::Merge, &public, Witness::encode(&witness))?;
        Ok(TransitionProof {
            statement: StatementId::Merge,
            from: left.from,
            to: right.to,
            steps,
            proof,
        })
    }

    /// Folds adjacent proofs pairwise into one, keeping the tree balanced.
    pub fn merge_all(&self, mut proofs: Vec<TransitionProof>) -> Result<TransitionProof, ProveError> {
        if proofs.is_empty() {
            return Err(ProveError::Empty);
        }
        while proofs.len() > 1 {
            let mut next = Vec::with_capacity(proofs.len().div_ceil(2));
            let mut it = proofs.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(self.prove_merge(&a, &b)?),
                    None => next.push(a),
                }
            }
            proofs = next;
        }
        Ok(proofs.pop().expect("non-empty"))
    }

    /// Proves a block on top of `before`. Returns the proof, the step it
    /// attests and the post-state.
    pub fn prove_block(
        &self,
        block: &ScBlock,
        info: &BlockContextInfo,
        before: &ScState,
    ) -> Result<(TransitionProof, BlockStep, ScState), ProveError> {
        let (mc_after, ends_epoch) =
            check_refs(self.params, &block.mc_refs, info.mc_before).map_err(|e| ProveError::Block(e.to_string()))?;
        let mut state = before.clone();
        let mut tx_proofs = Vec::new();
        for t in block.transitions(info.starts_epoch) {
            tx_proofs.push(self.apply_and_prove(&t, &mut state)?);
        }
        let inner = if tx_proofs.is_empty() {
            None
        } else {
            Some(self.merge_all(tx_proofs)?)
        };
        let step = BlockStep {
            block_hash: block.hash(),
            parent_hash: block.header.parent,
            height: block.header.height,
            mc_before: info.mc_before,
            mc_after,
            starts_epoch: info.starts_epoch,
            ends_epoch,
        };
        let (from, to) = (before.digest(), state.digest());
        let steps = vec![step.digest()];
        let public = transition_public_input(&from, &to, &steps);
        let witness = BlockWitness {
            params: self.params.clone(),
            block: block.clone(),
            parent_height: info.parent_height,
            mc_before: info.mc_before,
            starts_epoch: info.starts_epoch,
            inner,
        };
        let proof = self.prove(StatementId::Block, &public, Witness::encode(&witness))?;
        Ok((
            TransitionProof {
                statement: StatementId::Block,
                from,
                to,
                steps,
                proof,
            },
            step,
            state,
        ))
    }

    /// Proves that `blocks` (proof and step per block, in chain order) form
    /// one withdrawal epoch.
    pub fn prove_epoch(&self, blocks: Vec<(TransitionProof, BlockStep)>) -> Result<EpochProof, ProveError> {
        let (proofs, steps): (Vec<_>, Vec<_>) = blocks.into_iter().unzip();
        let inner = self.merge_all(proofs)?;
        let first = steps.first().ok_or(ProveError::Empty)?;
        let last = steps.last().ok_or(ProveError::Empty)?;
        let mut e = EpochProof {
            from: inner.from,
            to: inner.to,
            sc_anchor: first.parent_hash,
            sc_last: last.block_hash,
            sc_last_height: last.height,
            mc_prev_last: first.mc_before.hash,
            mc_last: last.mc_after.hash,
            proof: StatementProof::assemble_unchecked(
                &self.params.keys(StatementId::Epoch).vk,
                &PublicInput::new(vec![]),
                Witness { payload: vec![] },
            ),
        };
        let witness = EpochWitness {
            params: self.params.clone(),
            steps,
            inner,
        };
        e.proof = self.prove(StatementId::Epoch, &e.public_input(), Witness::encode(&witness))?;
        Ok(e)
    }

    /// Certificate for `epoch_id` from its epoch proof and end state.
    /// `anchor_bt_chain` is the backward transfer chain of the state the
    /// epoch starts from.
    pub fn prove_wcert(
        &self,
        epoch_id: u64,
        epoch: EpochProof,
        prev_proofdata: Option<Vec<Field>>,
        anchor_bt_chain: Digest,
        end: &ScState,
    ) -> Result<WithdrawalCertificate, ProveError> {
        let proofdata = vec![
            Field::Digest(epoch.sc_last),
            Field::Digest(end.mst.root()),
            Field::Bits(end.epoch_delta.clone()),
        ];
        let prev_root = prev_proofdata.as_deref().map_or(Digest::ZERO, proofdata_root);
        let public = wcert_public_input(
            epoch.sc_last_height,
            bt_list_root(&end.backward_transfers),
            epoch.mc_prev_last,
            epoch.mc_last,
            prev_root,
            proofdata_root(&proofdata),
        );
        let quality = epoch.sc_last_height;
        let witness = WCertWitness {
            params: self.params.clone(),
            epoch,
            prev_proofdata,
            pre_bt_chain: anchor_bt_chain,
            bt_list: end.backward_transfers.clone(),
            end_mst_root: end.mst.root(),
            end_delta: end.epoch_delta.clone(),
        };
        let proof = self.prove(StatementId::WCert, &public, Witness::encode(&witness))?;
        Ok(WithdrawalCertificate {
            ledger_id: self.params.ledger_id,
            epoch_id,
            quality,
            bt_list: end.backward_transfers.clone(),
            proofdata,
            proof,
        })
    }
}
