//! Acceptance suite. Runs every criterion, prints one PASS or FAIL line each
//! and exits non-zero unless the failing set is exactly the known
//! unattainable one.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sidechain_core::codec;
use sidechain_core::crypto::{
    hash_bytes, leaf_hash, mst_position, node_hash, null_leaf, Address, Digest, Keypair, MerkleStateTree, MstDelta,
    SpendAuth, Utxo,
};
use sidechain_core::latus::state::{bt_chain_next, OverlayStore};
use sidechain_core::latus::tx::request_proofdata;
use sidechain_core::latus::withdrawal::RequestWitness;
use sidechain_core::latus::{
    make_mc_reference, proof_system, receiver_metadata, request_auth_message, state_digest, verify_mc_reference,
    LatusNode, LatusParams, McBlockReference, McPointer, PaymentTx, RequestKind, ScState, ScTransaction, Transition,
};
use sidechain_core::mainchain::{
    bt_list_total, request_public_input, BackwardTransfer, ForwardTransfer, LedgerId, McBlock, McChain, McItem,
    McTransaction, RejectReason, SidechainStatus, TxOut, WithdrawalRequest,
};
use sidechain_core::proofsys::{proofdata_root, Field, PublicInput, StatementId, StatementProof, Witness};
use sidechain_core::transition::{verify_transition, EpochWitness, TransitionProver};
use sidechain_harness::report::{Outcome, PayoutKind, Source};
use sidechain_harness::scenario::{actor_address, actor_key, Allocation, Event, MainchainSpec, SidechainSpec, Traffic};
use sidechain_harness::{run, Action, CertVariant, RunReport, Scenario, Simulation, Snapshot};

/// Criteria that cannot pass as stated; the analysis is in the decisions
/// ledger.
const KNOWN_UNATTAINABLE: &[u32] = &[1];

type Verdict = Result<String, String>;

trait Context<T> {
    fn ctx(self, what: &str) -> Result<T, String>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn ctx(self, what: &str) -> Result<T, String> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

impl<T> Context<T> for Option<T> {
    fn ctx(self, what: &str) -> Result<T, String> {
        self.ok_or_else(|| format!("{what}: missing"))
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "worked state tree example", worked_example),
        (2, "safeguard conservation", safeguard_conservation),
        (3, "nullifier single use", nullifier_single_use),
        (4, "certificate rules", certificate_rules),
        (5, "ceased lifecycle", ceased_lifecycle),
        (6, "transition proof oracle", transition_oracle),
        (7, "commitment integrity", commitment_integrity),
        (8, "fork consistency", fork_consistency),
        (9, "non-spend proof", non_spend_proof),
        (10, "determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let ms = started.elapsed().as_millis();
        match verdict {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} ({ms} ms)"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL {name}: {detail} ({ms} ms)");
                failed.push(n);
            }
        }
    }
    if failed != KNOWN_UNATTAINABLE {
        eprintln!("failing criteria {failed:?}, expected exactly {KNOWN_UNATTAINABLE:?}");
        std::process::exit(1);
    }
    println!("failing criteria match the known unattainable set {KNOWN_UNATTAINABLE:?}");
}

// ---- shared helpers ----

fn scenario_file(name: &str) -> Result<Scenario, String> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "scenarios", &format!("{name}.toml")].iter().collect();
    Scenario::load(&path).ctx(name)
}

fn alloc(actor: &str, amount: u64) -> Allocation {
    Allocation {
        actor: actor.into(),
        amount,
    }
}

fn event(at: u64, action: Action) -> Event {
    Event { at, action }
}

fn sidechain(name: &str, start_block: u64, epoch_len: u64, submit_len: u64, mst_depth: u8) -> SidechainSpec {
    SidechainSpec {
        name: name.into(),
        register_at: 1,
        start_block,
        epoch_len,
        submit_len,
        mst_depth,
        slots_per_epoch: 8,
        forgers: vec![alloc("forger", 100)],
        btr: true,
        csw: true,
        auto_certify: true,
    }
}

fn scenario(name: &str, stop_at_block: u64, premine: Vec<Allocation>, sidechains: Vec<SidechainSpec>) -> Scenario {
    Scenario {
        version: 1,
        name: name.into(),
        seed: 0,
        mainchain: MainchainSpec {
            ticks_per_block: 1,
            stop_at_block,
            premine,
        },
        sidechains,
        events: vec![],
        traffic: None,
    }
}

/// Random scenario with up to three sidechains and background traffic.
fn random_scenario(rng: &mut ChaCha8Rng, name: String, blocks: u64, allow_forks: bool) -> Scenario {
    let actors: Vec<String> = ["alice", "bob", "carol", "dave"][..rng.gen_range(2..=4)]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let premine = actors.iter().map(|a| alloc(a, rng.gen_range(500..=3_000))).collect();
    let sidechains = (0..rng.gen_range(1..=3))
        .map(|i| {
            let epoch_len = rng.gen_range(3..=8);
            let register_at = rng.gen_range(1..=3);
            let mut forgers = vec![alloc("forger", rng.gen_range(50..=150))];
            if rng.gen_bool(0.5) {
                forgers.push(alloc(&actors[rng.gen_range(0..actors.len())], rng.gen_range(10..=100)));
            }
            SidechainSpec {
                name: format!("sc{i}"),
                register_at,
                start_block: register_at + rng.gen_range(1..=4),
                epoch_len,
                submit_len: rng.gen_range(1..epoch_len),
                mst_depth: rng.gen_range(6..=12),
                slots_per_epoch: rng.gen_range(4..=12),
                forgers,
                btr: rng.gen_bool(0.9),
                csw: rng.gen_bool(0.9),
                auto_certify: true,
            }
        })
        .collect();
    let traffic = Traffic {
        actors: actors.clone(),
        forward_transfer: rng.gen_range(0.2..0.7),
        malformed_share: rng.gen_range(0.0..0.1),
        payment: rng.gen_range(0.1..0.6),
        backward_transfer: rng.gen_range(0.0..0.3),
        btr: rng.gen_range(0.0..0.2),
        csw: rng.gen_range(0.0..0.4),
        replay: rng.gen_range(0.0..0.1),
        fork: if allow_forks { rng.gen_range(0.0..0.04) } else { 0.0 },
        max_fork_depth: rng.gen_range(1..=3),
        withhold: rng.gen_range(0.0..0.01),
        max_amount: rng.gen_range(10..=80),
        from_tick: 2,
    };
    Scenario {
        version: 1,
        name,
        seed: rng.gen(),
        mainchain: MainchainSpec {
            ticks_per_block: 1,
            stop_at_block: blocks,
            premine,
        },
        sidechains,
        events: vec![],
        traffic: Some(traffic),
    }
}

/// List-based model of a sidechain state: UTXOs in a vector, the epoch's
/// backward transfers and touched slots. The Merkle root is rebuilt from
/// every leaf on demand.
#[derive(Clone)]
struct NaiveState {
    depth: u8,
    utxos: Vec<Utxo>,
    bts: Vec<BackwardTransfer>,
    touched: Vec<bool>,
}

impl NaiveState {
    fn genesis(depth: u8) -> Self {
        NaiveState {
            depth,
            utxos: vec![],
            bts: vec![],
            touched: vec![false; 1 << depth],
        }
    }

    fn from_state(s: &ScState) -> Self {
        let depth = s.mst.depth();
        NaiveState {
            depth,
            utxos: s.mst.utxos().copied().collect(),
            bts: s.backward_transfers.clone(),
            touched: (0..1u64 << depth).map(|b| s.epoch_delta.get(b)).collect(),
        }
    }

    fn spend(&mut self, u: &Utxo) -> Result<(), String> {
        let i = self.utxos.iter().position(|x| x == u).ctx("spent utxo")?;
        self.utxos.remove(i);
        self.touched[mst_position(u, self.depth) as usize] = true;
        Ok(())
    }

    fn create(&mut self, u: Utxo) -> Result<(), String> {
        let slot = mst_position(&u, self.depth);
        ensure(self.utxos.iter().all(|x| mst_position(x, self.depth) != slot), || {
            format!("slot {slot} occupied")
        })?;
        self.utxos.push(u);
        self.touched[slot as usize] = true;
        Ok(())
    }

    fn apply(&mut self, t: &Transition) -> Result<(), String> {
        match t {
            Transition::EpochStart => {
                self.bts.clear();
                self.touched = vec![false; 1 << self.depth];
            }
            Transition::Tx(ScTransaction::Payment(tx)) => {
                tx.inputs.iter().try_for_each(|u| self.spend(u))?;
                tx.output_utxos().into_iter().try_for_each(|u| self.create(u))?;
            }
            Transition::Tx(ScTransaction::Backward(tx)) => {
                tx.inputs.iter().try_for_each(|u| self.spend(u))?;
                self.bts.extend(&tx.bts);
            }
            Transition::Tx(ScTransaction::ForwardTransfers(tx)) => {
                tx.outputs.iter().try_for_each(|u| self.create(*u))?;
                self.bts.extend(&tx.rejected);
            }
            Transition::Tx(ScTransaction::BtRequests(tx)) => {
                tx.inputs.iter().try_for_each(|u| self.spend(u))?;
                self.bts.extend(&tx.bts);
            }
        }
        Ok(())
    }

    fn root(&self) -> Digest {
        let mut level = vec![leaf_hash(&null_leaf()); 1 << self.depth];
        for u in &self.utxos {
            level[mst_position(u, self.depth) as usize] = leaf_hash(&u.digest());
        }
        while level.len() > 1 {
            level = level.chunks(2).map(|p| node_hash(&p[0], &p[1])).collect();
        }
        level[0]
    }

    fn digest(&self) -> Digest {
        let chain = self.bts.iter().fold(Digest::ZERO, |acc, bt| bt_chain_next(&acc, bt));
        let bits: String = self.touched.iter().map(|b| if *b { '1' } else { '0' }).collect();
        let delta = MstDelta::from_bit_string(&bits).expect("bit string");
        state_digest(&self.root(), &chain, &delta)
    }
}

/// Hand-driven mainchain and one sidechain: one mainchain block and one
/// sidechain block per step, certificates submitted in the first window
/// block.
struct World {
    mc: McChain,
    node: Option<LatusNode>,
    params: LatusParams,
    forger: Keypair,
    pending: Vec<McItem>,
    pending_sc: Vec<ScTransaction>,
    slot: u64,
}

impl World {
    fn new(params: LatusParams, forger: Keypair, premine: Vec<TxOut>) -> Self {
        let mc = McChain::new(Arc::new(proof_system()), premine);
        let pending = vec![McItem::CreateSidechain(params.sidechain_config(true, true))];
        World {
            mc,
            node: None,
            params,
            forger,
            pending,
            pending_sc: vec![],
            slot: 0,
        }
    }

    fn node(&self) -> &LatusNode {
        self.node.as_ref().expect("sidechain started")
    }

    fn sidechain_status(&self) -> Option<(SidechainStatus, BTreeSet<u64>)> {
        let sc = self.mc.tip_state().sidechain(&self.params.ledger_id)?;
        Some((sc.status, sc.certs.keys().copied().collect()))
    }

    fn step(&mut self) -> Result<Vec<(usize, RejectReason)>, String> {
        let items = std::mem::take(&mut self.pending);
        let tip = self.mc.tip();
        let asm = self
            .mc
            .assemble_block(&tip, &items, vec![], self.mc.height())
            .ctx("assemble")?;
        self.mc.extend_chain(asm.block).ctx("extend")?;
        if self.mc.height() + 1 == self.params.start_block {
            let genesis = McPointer {
                hash: self.mc.tip(),
                height: self.mc.height(),
            };
            let node = LatusNode::new(self.params.clone(), self.mc.proofs().clone(), genesis).ctx("node")?;
            self.node = Some(node);
        }
        if self.mc.height() >= self.params.start_block {
            let txs = std::mem::take(&mut self.pending_sc);
            let node = self.node.as_mut().ctx("node")?;
            let forged = loop {
                self.slot += 1;
                if let Ok(f) = node.forge(&self.mc, self.slot, &self.forger, &txs) {
                    break f;
                }
            };
            ensure(forged.dropped.is_empty(), || format!("dropped {:?}", forged.dropped))?;
            self.queue_cert()?;
        }
        Ok(asm.rejected)
    }

    fn queue_cert(&mut self) -> Result<(), String> {
        let ledger = self.params.ledger_id;
        let Some(epoch) = self.node().last_closed_epoch() else {
            return Ok(());
        };
        let sc = self.mc.tip_state().sidechain(&ledger).ctx("sidechain")?;
        let next = self.mc.height() + 1;
        let in_window = matches!(sc.config.epoch_of(next), Ok((e, i)) if e == epoch + 1 && i < sc.config.submit_len);
        if sc.status != SidechainStatus::Active || sc.certs.contains_key(&epoch) || !in_window {
            return Ok(());
        }
        let cert = self.node.as_mut().ctx("node")?.generate_wcert(epoch).ctx("certificate")?;
        self.pending.push(McItem::Certificate(cert));
        Ok(())
    }
}

// ---- 1: worked state tree example ----

fn worked_example() -> Verdict {
    const DEPTH: u8 = 3;
    let started = Instant::now();
    let key = |tag: &str, i: u64| Keypair::from_seed(&hash_bytes(format!("worked/{tag}/{i}").as_bytes()));
    // First owner key whose UTXO lands in `slot`.
    let placed = |tag: &str, amount: u64, slot: u64| {
        (0u64..)
            .find_map(|i| {
                let k = key(tag, i);
                let u = Utxo {
                    addr: k.address(),
                    amount,
                    nonce: hash_bytes(&i.to_be_bytes()),
                };
                (mst_position(&u, DEPTH) == slot).then_some((u, k))
            })
            .expect("some key fits")
    };
    let (utxo1, owner1) = placed("utxo1", 5, 0);
    let (utxo2, _) = placed("utxo2", 7, 4);
    let (utxo3, _) = placed("utxo3", 9, 6);
    let mut mst = MerkleStateTree::new(DEPTH).ctx("mst")?;
    for u in [utxo1, utxo2, utxo3] {
        mst.insert(u).ctx("insert")?;
    }
    ensure(mst.occupancy() == [0, 4, 6], || format!("initial occupancy {:?}", mst.occupancy()))?;
    let mut state = ScState {
        mst,
        backward_transfers: vec![],
        bt_chain: Digest::ZERO,
        epoch_delta: MstDelta::for_depth(DEPTH),
    };

    // tx1 spends utxo1 into utxo4 (slot 1) and utxo5 (slot 2).
    let (tx1, owner4) = (0u64..)
        .find_map(|i| {
            let k4 = key("utxo4", i);
            let outputs = vec![
                TxOut {
                    addr: k4.address(),
                    amount: 2,
                },
                TxOut {
                    addr: key("utxo5", i).address(),
                    amount: 3,
                },
            ];
            let tx = PaymentTx::signed(&[(utxo1, &owner1)], outputs);
            let slots: Vec<u64> = tx.output_utxos().iter().map(|u| mst_position(u, DEPTH)).collect();
            (slots == [1, 2]).then_some((tx, k4))
        })
        .expect("some keys fit");
    let utxo4 = tx1.output_utxos()[0];
    // tx2 spends utxo4 into utxo6 (slot 7).
    let tx2 = (0u64..)
        .find_map(|i| {
            let out = TxOut {
                addr: key("utxo6", i).address(),
                amount: 2,
            };
            let tx = PaymentTx::signed(&[(utxo4, &owner4)], vec![out]);
            (mst_position(&tx.output_utxos()[0], DEPTH) == 7).then_some(tx)
        })
        .expect("some key fits");

    let params = LatusParams {
        ledger_id: hash_bytes(b"worked-example"),
        start_block: 1,
        epoch_len: 2,
        submit_len: 1,
        mst_depth: DEPTH,
        slots_per_epoch: 1,
        genesis_stakes: vec![(owner1.address(), 1)],
    };
    let system = proof_system();
    let prover = TransitionProver::new(&system, &params);
    let initial = state.digest();
    let p1 = prover
        .apply_and_prove(&Transition::Tx(ScTransaction::Payment(tx1)), &mut state)
        .ctx("tx1")?;
    let p2 = prover
        .apply_and_prove(&Transition::Tx(ScTransaction::Payment(tx2)), &mut state)
        .ctx("tx2")?;
    let merged = prover.prove_merge(&p1, &p2).ctx("merge")?;
    let vk = params.keys(StatementId::Merge).vk;
    ensure(verify_transition(&system, &vk, &initial, &state.digest(), &merged), || {
        "merged proof does not verify".into()
    })?;

    let delta = state.epoch_delta.to_bit_string();
    let occupancy = state.mst.occupancy();
    let elapsed = started.elapsed();
    ensure(delta == "11100001", || format!("delta {delta}, expected 11100001"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    ensure(occupancy == [2, 6, 7], || {
        format!(
            "delta {delta} matches and both proofs verify, but final occupancy is {occupancy:?}, not [2, 6, 7]: \
             slot 4 holds utxo2, which neither transaction touches (delta bit 4 is 0)"
        )
    })?;
    Ok(format!("delta {delta}, occupancy {occupancy:?}"))
}

// ---- 2: safeguard conservation ----

/// Replays the deposits and withdrawals of the final active chain from the
/// stored block bodies and compares them with each block's reported
/// sidechain balances. Returns the number of balance checks.
fn audit_balances(snapshot: &Snapshot, report: &RunReport) -> Result<u64, String> {
    let bodies: HashMap<Digest, &McBlock> = snapshot.mc_blocks.iter().map(|b| (b.hash(), b)).collect();
    let names: HashMap<LedgerId, String> = snapshot
        .scenario
        .sidechains
        .iter()
        .map(|s| (s.ledger_id(), s.name.clone()))
        .collect();
    let mut active: Vec<_> = report.blocks.iter().filter(|b| b.active).collect();
    active.sort_by_key(|b| b.height);
    ensure(active.len() as u64 == report.final_state.mc_height, || {
        "active chain has gaps".into()
    })?;
    let mut deposits: HashMap<String, i128> = HashMap::new();
    let mut certs: HashMap<String, BTreeMap<u64, i128>> = HashMap::new();
    let mut csws: HashMap<String, i128> = HashMap::new();
    let mut prev: Option<Digest> = None;
    let mut checks = 0;
    for summary in active {
        let block = bodies.get(&summary.hash).ctx("block body")?;
        if let Some(p) = prev {
            ensure(block.header.prev == p, || format!("height {} does not extend its parent", summary.height))?;
        }
        prev = Some(summary.hash);
        let name = |l: &LedgerId| names.get(l).cloned().unwrap_or_default();
        for tx in &block.body.transactions {
            for ft in &tx.forward_transfers {
                *deposits.entry(name(&ft.ledger_id)).or_default() += ft.amount as i128;
            }
        }
        for c in &block.body.certificates {
            let total = bt_list_total(&c.bt_list).ctx("bt total")?;
            certs.entry(name(&c.ledger_id)).or_default().insert(c.epoch_id, total as i128);
        }
        for r in &block.body.csws {
            *csws.entry(name(&r.ledger_id)).or_default() += r.amount as i128;
        }
        for (sc, ledger) in &summary.ledgers {
            let paid: i128 = certs.get(sc).map_or(0, |m| m.values().sum());
            let expected = deposits.get(sc).copied().unwrap_or(0) - paid - csws.get(sc).copied().unwrap_or(0);
            ensure(expected >= 0 && expected == ledger.balance as i128, || {
                format!("height {}: {sc} balance {} but tally gives {expected}", summary.height, ledger.balance)
            })?;
            checks += 1;
        }
    }
    Ok(checks)
}

fn safeguard_conservation() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checks, mut blocks, mut sidechains) = (0u64, 0u64, 0usize);
    for i in 0..200 {
        // Lengths skew short so the whole sweep fits the time budget while
        // still reaching 500 blocks.
        let u: f64 = rng.gen();
        let len = 20 + (480.0 * u * u * u) as u64;
        let s = random_scenario(&mut rng, format!("conservation-{i}"), len, true);
        sidechains += s.sidechains.len();
        let out = run(&s, None).ctx("run")?;
        ensure(out.report.passed(), || {
            format!("scenario {i} (seed {}): {:?}", s.seed, out.report.aborted.clone().or_else(|| {
                out.report.invariants.iter().find(|(_, r)| !r.violations.is_empty()).map(|(n, r)| format!("{n}: {}", r.violations[0]))
            }))
        })?;
        checks += audit_balances(&out.snapshot, &out.report).map_err(|e| format!("scenario {i}: {e}"))?;
        blocks += out.report.blocks.len() as u64;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "200 scenarios, {sidechains} sidechains, {blocks} blocks, {checks} active-chain balance checks, 0 violations"
    ))
}

// ---- 3: nullifier single use ----

fn mutate(req: &WithdrawalRequest, kind: u32, rng: &mut ChaCha8Rng) -> Result<WithdrawalRequest, String> {
    let mut r = req.clone();
    match kind {
        0 => r.receiver = Address(hash_bytes(&r.receiver.0 .0)),
        1 => r.amount += rng.gen_range(1..=5),
        2 => r.proof.public_binding.0[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8),
        3 => r.nullifier = hash_bytes(&r.nullifier.0),
        4 => r.proofdata[2] = Field::Digest(hash_bytes(b"other nonce")),
        5 => r.ledger_id = hash_bytes(b"other ledger"),
        _ => {
            let mut w: RequestWitness = r.proof.witness.decode()?;
            w.utxo.amount += 1;
            r.proof.witness = Witness::encode(&w);
        }
    }
    Ok(r)
}

fn nullifier_single_use() -> Verdict {
    let users: Vec<String> = (0..40).map(|i| format!("user{i:02}")).collect();
    let mut s = scenario(
        "nullifiers",
        14,
        users.iter().map(|u| alloc(u, 1_000)).collect(),
        vec![sidechain("alpha", 3, 10, 3, 12)],
    );
    for (i, u) in users.iter().enumerate() {
        s.events.push(event(
            3,
            Action::ForwardTransfer {
                from: u.clone(),
                sidechain: "alpha".into(),
                to: u.clone(),
                amount: 10 + i as u64,
                malformed: false,
            },
        ));
    }
    let mut sim = Simulation::new(s.clone(), None).ctx("scenario")?;
    sim.run_to_end();
    let mut mc = sim.mc().clone();
    let node = sim.node("alpha").ctx("node")?.clone();
    let ledger = s.sidechains[0].ledger_id();
    let status = |mc: &McChain| mc.tip_state().sidechain(&ledger).map(|sc| sc.status);
    ensure(mc.tip_state().sidechain(&ledger).is_some_and(|sc| sc.certs.contains_key(&0)), || {
        "epoch 0 not certified".into()
    })?;
    let anchor = node.certified_block(&mc, 0).ctx("certified block")?;
    let certified = &node.entry(&anchor).ctx("anchor entry")?.state.mst;
    let coins: Vec<(Utxo, Keypair)> = users
        .iter()
        .flat_map(|u| {
            let key = actor_key(u);
            let addr = key.address();
            certified.utxos().filter(|c| c.addr == addr).map(|c| (*c, key.clone())).collect::<Vec<_>>()
        })
        .collect();
    ensure(coins.len() >= 30, || format!("only {} certified coins", coins.len()))?;
    let receiver = |i: usize| Address(hash_bytes(format!("receiver/{i}").as_bytes()));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut used: BTreeSet<Digest> = BTreeSet::new();
    let mut accepted_csw: BTreeMap<usize, u64> = BTreeMap::new();
    let (mut attempts, mut accepted, mut replays_refused) = (0u64, 0u64, 0u64);
    for kind in [RequestKind::Btr, RequestKind::Csw] {
        if kind == RequestKind::Csw {
            // Stop certifying and let the sidechain cease.
            while status(&mc) == Some(SidechainStatus::Active) {
                let asm = mc.assemble_block(&mc.tip(), &[], vec![], mc.height()).ctx("assemble")?;
                mc.extend_chain(asm.block).ctx("extend")?;
            }
        }
        let requests = coins
            .iter()
            .enumerate()
            .map(|(i, (u, k))| node.build_request(&mc, kind, u, k, receiver(i), None))
            .collect::<Result<Vec<_>, _>>()
            .ctx("build request")?;
        for _ in 0..10 {
            let mut items = Vec::new();
            let mut expected = Vec::new();
            for _ in 0..60 {
                let i = rng.gen_range(0..requests.len());
                let m = rng.gen_range(0..14);
                let (req, valid) = if m < 7 {
                    (requests[i].clone(), true)
                } else {
                    (mutate(&requests[i], m - 7, &mut rng)?, false)
                };
                let accept = valid && !used.contains(&req.nullifier);
                if accept {
                    used.insert(req.nullifier);
                    if kind == RequestKind::Csw {
                        accepted_csw.insert(i, req.amount);
                    }
                }
                expected.push((accept, valid));
                items.push(match kind {
                    RequestKind::Btr => McItem::Btr(req),
                    RequestKind::Csw => McItem::Csw(req),
                });
            }
            let asm = mc.assemble_block(&mc.tip(), &items, vec![], mc.height()).ctx("assemble")?;
            mc.extend_chain(asm.block).ctx("extend")?;
            let rejected: BTreeMap<usize, RejectReason> = asm.rejected.into_iter().collect();
            for (j, (accept, valid)) in expected.into_iter().enumerate() {
                attempts += 1;
                let got = !rejected.contains_key(&j);
                ensure(got == accept, || {
                    format!("{kind:?} attempt {j}: accepted {got}, expected {accept} ({:?})", rejected.get(&j))
                })?;
                if got {
                    accepted += 1;
                } else if valid {
                    ensure(rejected[&j] == RejectReason::NullifierUsed, || {
                        format!("valid replay refused with {:?}", rejected[&j])
                    })?;
                    replays_refused += 1;
                }
            }
        }
    }
    let sc = mc.tip_state().sidechain(&ledger).ctx("sidechain")?;
    ensure(sc.nullifiers.len() as u64 == accepted, || {
        format!("{} nullifiers recorded, {accepted} accepted", sc.nullifiers.len())
    })?;
    for i in 0..coins.len() {
        let paid: u64 = mc.tip_state().outputs_of(&receiver(i)).iter().map(|(_, e)| e.out.amount).sum();
        let expected = accepted_csw.get(&i).copied().unwrap_or(0);
        ensure(paid == expected, || format!("receiver {i} paid {paid}, expected {expected}"))?;
    }
    ensure(attempts >= 1_000, || format!("only {attempts} attempts"))?;
    Ok(format!(
        "{attempts} attempts over {} coins: {accepted} first uses accepted, {replays_refused} valid replays refused as nullifier_used, mutated copies all refused",
        coins.len()
    ))
}

// ---- 4: certificate rules ----

fn certificate_rules() -> Verdict {
    let report = run(&scenario_file("wcert_rules")?, None).ctx("run")?.report;
    let expected = [
        (7, "WrongLedger", "unknown_sidechain"),
        (7, "ForgedBtList", "bad_proof"),
        (7, "BadProof", "bad_proof"),
        (7, "Overdraw", "safeguard"),
        (8, "Resubmit", "quality_equal"),
        (8, "LowQuality", "quality_lower"),
        (9, "Resubmit", "window_closed"),
        (11, "StaleEpoch", "wrong_epoch"),
    ];
    let tampered: Vec<_> = report.events_of_kind("malicious_cert").collect();
    ensure(tampered.len() == expected.len(), || format!("{} tampered certificates", tampered.len()))?;
    for (rec, (tick, variant, code)) in tampered.iter().zip(expected) {
        ensure(
            rec.tick == tick
                && rec.detail.as_deref() == Some(variant)
                && rec.outcome == Outcome::Rejected
                && rec.reason.as_deref() == Some(code),
            || format!("{variant} at tick {tick}: {:?} {:?}, expected {code}", rec.outcome, rec.reason),
        )?;
    }
    let honest: Vec<_> = report.events_of_kind("certificate").collect();
    ensure(
        honest.len() == 3 && honest.iter().all(|r| r.outcome == Outcome::Accepted),
        || format!("honest certificates: {:?}", honest.iter().map(|r| r.outcome).collect::<Vec<_>>()),
    )?;
    // The epoch-0 certificate shares its block with the first four
    // tampered ones.
    let block7 = report.blocks.iter().find(|b| b.height == 7 && b.active).ctx("block 7")?;
    ensure(honest[0].block == Some(block7.hash) && block7.certificates == 1, || {
        "honest certificate not in block 7".into()
    })?;

    let withheld = run(&scenario_file("withholding")?, None).ctx("run")?.report;
    let late = withheld.events_of_kind("malicious_cert").next().ctx("resubmission")?;
    ensure(late.reason.as_deref() == Some("inactive_sidechain"), || {
        format!("resubmission after ceasing: {:?}", late.reason)
    })?;
    Ok("unknown_sidechain, inactive_sidechain, wrong_epoch, window_closed, quality_lower, quality_equal, bad_proof x2, safeguard; 3 honest certificates accepted".into())
}

// ---- 5: ceased lifecycle ----

fn ceased_lifecycle() -> Verdict {
    let mut cases = Vec::new();
    for (epoch_len, submit_len, withheld) in [(4, 2, 1), (5, 1, 1), (6, 3, 2), (3, 1, 2), (7, 4, 1), (8, 7, 3)] {
        let spec = sidechain("alpha", 3, epoch_len, submit_len, 10);
        let params = spec.params();
        let config = params.sidechain_config(true, true);
        let deadline = config.submission_deadline(withheld);
        ensure(deadline == config.epoch_first_height(withheld + 1) + submit_len, || {
            "deadline is not index submit_len of the next epoch".into()
        })?;
        let mut s = scenario("lifecycle", deadline + 4, vec![alloc("alice", 100)], vec![spec]);
        let sc = || "alpha".to_string();
        s.events = vec![
            event(
                3,
                Action::ForwardTransfer {
                    from: "alice".into(),
                    sidechain: sc(),
                    to: "alice".into(),
                    amount: 25,
                    malformed: false,
                },
            ),
            event(params.epoch_last_height(withheld), Action::WithholdCerts { sidechain: sc() }),
            event(deadline, Action::Certify { sidechain: sc() }),
            event(
                deadline + 1,
                Action::MaliciousCert {
                    sidechain: sc(),
                    variant: CertVariant::Resubmit,
                },
            ),
            event(
                deadline + 1,
                Action::Csw {
                    sidechain: sc(),
                    from: "alice".into(),
                    to: "dave".into(),
                    amount: None,
                },
            ),
            event(deadline + 2, Action::Replay { count: 2 }),
        ];
        let report = run(&s, None).ctx("run")?.report;
        let tag = format!("epoch_len {epoch_len}, submit_len {submit_len}, withheld epoch {withheld}");
        ensure(report.passed(), || format!("{tag}: invariants violated"))?;
        let r = &report.sidechains["alpha"];
        ensure(r.ceased_at == Some(deadline), || format!("{tag}: ceased at {:?}, expected {deadline}", r.ceased_at))?;
        let status_at = |h: u64| {
            report
                .blocks
                .iter()
                .find(|b| b.active && b.height == h)
                .and_then(|b| b.ledgers.get("alpha"))
                .map(|l| l.status)
        };
        ensure(
            status_at(deadline - 1) == Some(SidechainStatus::Active) && status_at(deadline) == Some(SidechainStatus::Ceased),
            || format!("{tag}: status flip not at {deadline}"),
        )?;
        ensure(
            r.certificates.iter().map(|c| c.epoch).collect::<Vec<_>>() == (0..withheld).collect::<Vec<_>>(),
            || format!("{tag}: certified epochs {:?}", r.certificates),
        )?;
        for kind in ["certify", "malicious_cert"] {
            let rec = report.events_of_kind(kind).next().ctx(kind)?;
            ensure(rec.reason.as_deref() == Some("inactive_sidechain"), || {
                format!("{tag}: late {kind} {:?} {:?}", rec.outcome, rec.reason)
            })?;
        }
        let csw = report.events_of_kind("csw").next().ctx("csw")?;
        ensure(csw.outcome == Outcome::Accepted, || format!("{tag}: csw {:?} {:?}", csw.outcome, csw.reason))?;
        let replays: Vec<_> = report.events_of_kind("replay").collect();
        ensure(
            replays.len() == 2 && replays.iter().all(|r| r.reason.as_deref() == Some("nullifier_used")),
            || format!("{tag}: replays {:?}", replays.iter().map(|r| &r.reason).collect::<Vec<_>>()),
        )?;
        let payouts: Vec<_> = report.final_state.payouts.iter().filter(|p| p.kind == PayoutKind::Csw).collect();
        ensure(
            payouts.len() == 1 && payouts[0].amount == 25 && report.final_state.balances.get("dave") == Some(&25),
            || format!("{tag}: payouts {payouts:?}"),
        )?;
        cases.push(deadline);
    }
    Ok(format!(
        "6 parameter sets ceased exactly at their deadlines {cases:?}; late certificates refused, one CSW payout each"
    ))
}

// ---- 6: transition proof oracle ----

fn flip(d: &Digest) -> Digest {
    let mut d = *d;
    d.0[0] ^= 1;
    d
}

fn transition_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut epochs, mut claims, mut mutations) = (0u64, 0u64, 0u64);
    for run_no in 0..100 {
        let depth = rng.gen_range(3..=8u8);
        let epoch_len = rng.gen_range(3..=6);
        let mut spec = sidechain("alpha", rng.gen_range(2..=4), epoch_len, rng.gen_range(1..epoch_len), depth);
        spec.slots_per_epoch = rng.gen_range(3..=8);
        let stop = spec.start_block + 3 * epoch_len + 1;
        let mut s = scenario(
            "oracle",
            stop,
            vec![alloc("alice", 2_000), alloc("bob", 2_000), alloc("carol", 2_000)],
            vec![spec],
        );
        s.seed = rng.gen();
        s.traffic = Some(Traffic {
            actors: vec!["alice".into(), "bob".into(), "carol".into()],
            forward_transfer: 0.8,
            malformed_share: 0.1,
            payment: 0.6,
            backward_transfer: 0.3,
            btr: 0.3,
            csw: 0.0,
            replay: 0.0,
            fork: 0.0,
            max_fork_depth: 1,
            withhold: 0.0,
            max_amount: 30,
            from_tick: 1,
        });
        let mut sim = Simulation::new(s.clone(), None).ctx("scenario")?;
        sim.run_to_end();
        let mut node = sim.node("alpha").ctx("node")?.clone();
        let system = sim.mc().proofs().clone();
        let params = node.params().clone();
        let prover = TransitionProver::new(&system, &params);
        let keys = params.keys(StatementId::Epoch);
        let chain = node.chain();
        for epoch in 0..3 {
            let tag = format!("run {run_no} (depth {depth}) epoch {epoch}");
            let (first, last) = node.epoch_boundary(epoch).ctx(&format!("{tag} closed"))?;
            let lo = chain.iter().position(|h| *h == first).ctx("first")?;
            let hi = chain.iter().position(|h| *h == last).ctx("last")?;
            let anchor = node.entry(&chain[lo - 1]).ctx("anchor")?;
            let mut naive = NaiveState::from_state(&anchor.state);
            let mut blocks = Vec::new();
            for h in &chain[lo..=hi] {
                let entry = node.entry(h).ctx("entry")?;
                let block = entry.block.clone().ctx("block")?;
                for t in block.transitions(entry.starts_epoch) {
                    naive.apply(&t).map_err(|e| format!("{tag}: {e}"))?;
                }
                blocks.push(*h);
            }
            let proofs = blocks
                .iter()
                .map(|h| node.block_proof(h))
                .collect::<Result<Vec<_>, _>>()
                .ctx("block proof")?;
            let proof = prover.prove_epoch(proofs).ctx("prove epoch")?;
            let public = proof.public_input();
            let naive_end = naive.digest();

            // Claims: the honest end state, the start state, the state one
            // block early and an unrelated digest.
            let early = node.entry(&chain[hi - 1]).ctx("entry")?.state.digest();
            for claim in [proof.to, proof.from, early, hash_bytes(tag.as_bytes())] {
                let mut fields = public.fields.clone();
                fields[1] = Field::Digest(claim);
                let claimed = PublicInput::new(fields);
                let forced = StatementProof::assemble_unchecked(&keys.vk, &claimed, proof.proof.witness.clone());
                let verifies = system.verify(&keys.vk, &claimed, &forced);
                let provable = system.prove(&keys.pk, &claimed, proof.proof.witness.clone()).is_ok();
                ensure(verifies == (naive_end == claim) && provable == verifies, || {
                    format!("{tag}: claim verifies {verifies}, provable {provable}, naive match {}", naive_end == claim)
                })?;
                claims += 1;
            }
            ensure(system.verify(&keys.vk, &public, &proof.proof), || format!("{tag}: honest proof rejected"))?;

            // Single-field mutations of the public input.
            for i in 0..public.fields.len() {
                let mut fields = public.fields.clone();
                fields[i] = match &fields[i] {
                    Field::Digest(d) => Field::Digest(flip(d)),
                    Field::Integer(n) => Field::Integer(n + 1),
                    other => return Err(format!("unexpected public field {other:?}")),
                };
                let mutated = PublicInput::new(fields);
                let forced = StatementProof::assemble_unchecked(&keys.vk, &mutated, proof.proof.witness.clone());
                ensure(
                    !system.verify(&keys.vk, &mutated, &proof.proof) && !system.verify(&keys.vk, &mutated, &forced),
                    || format!("{tag}: public field {i} mutation verifies"),
                )?;
                mutations += 1;
            }

            // Single-field mutations of the decoded witness.
            let witness: EpochWitness = proof.proof.witness.decode()?;
            let mut variants: Vec<(String, EpochWitness)> = Vec::new();
            let mut push = |name: String, f: &dyn Fn(&mut EpochWitness)| {
                let mut w = witness.clone();
                f(&mut w);
                variants.push((name, w));
            };
            push("params.epoch_len".into(), &|w| w.params.epoch_len += 1);
            push("params.submit_len".into(), &|w| w.params.submit_len ^= 1);
            push("params.start_block".into(), &|w| w.params.start_block += 1);
            push("params.mst_depth".into(), &|w| w.params.mst_depth += 1);
            push("params.ledger_id".into(), &|w| w.params.ledger_id = flip(&w.params.ledger_id));
            push("params.genesis_stakes".into(), &|w| w.params.genesis_stakes[0].1 += 1);
            push("inner.from".into(), &|w| w.inner.from = flip(&w.inner.from));
            push("inner.to".into(), &|w| w.inner.to = flip(&w.inner.to));
            push("inner.steps".into(), &|w| w.inner.steps.reverse());
            push("inner.proof".into(), &|w| w.inner.proof.public_binding = flip(&w.inner.proof.public_binding));
            push("steps.len".into(), &|w| {
                w.steps.pop();
            });
            for k in 0..witness.steps.len() {
                push(format!("steps[{k}].block_hash"), &|w| w.steps[k].block_hash = flip(&w.steps[k].block_hash));
                push(format!("steps[{k}].parent_hash"), &|w| w.steps[k].parent_hash = flip(&w.steps[k].parent_hash));
                push(format!("steps[{k}].height"), &|w| w.steps[k].height += 1);
                push(format!("steps[{k}].mc_before.hash"), &|w| {
                    w.steps[k].mc_before.hash = flip(&w.steps[k].mc_before.hash)
                });
                push(format!("steps[{k}].mc_before.height"), &|w| w.steps[k].mc_before.height += 1);
                push(format!("steps[{k}].mc_after.hash"), &|w| {
                    w.steps[k].mc_after.hash = flip(&w.steps[k].mc_after.hash)
                });
                push(format!("steps[{k}].mc_after.height"), &|w| w.steps[k].mc_after.height += 1);
                push(format!("steps[{k}].starts_epoch"), &|w| w.steps[k].starts_epoch ^= true);
                push(format!("steps[{k}].ends_epoch"), &|w| w.steps[k].ends_epoch ^= true);
            }
            for (name, w) in variants {
                let forced = StatementProof::assemble_unchecked(&keys.vk, &public, Witness::encode(&w));
                ensure(!system.verify(&keys.vk, &public, &forced), || {
                    format!("{tag}: witness mutation {name} verifies")
                })?;
                mutations += 1;
            }
            epochs += 1;
        }
    }
    Ok(format!(
        "100 runs, {epochs} epochs, {claims} endpoint claims agree with the naive replay, {mutations} single-field mutations rejected"
    ))
}

// ---- 7: commitment integrity ----

/// Flips each listed bit of `value`'s canonical encoding and reports the
/// bits whose decoded mutant `accepts` still takes. Undecodable encodings
/// count as rejected.
fn bit_flips<T: Serialize + DeserializeOwned>(
    value: &T,
    bits: &[usize],
    accepts: &dyn Fn(T) -> bool,
) -> Vec<usize> {
    let bytes = codec::encode(value);
    bits.iter()
        .copied()
        .filter(|&b| {
            let mut m = bytes.clone();
            m[b / 8] ^= 1 << (b % 8);
            codec::decode::<T>(&m).map(accepts).unwrap_or(false)
        })
        .collect()
}

fn encoded_bits<T: Serialize>(value: &T) -> usize {
    codec::encode(value).len() * 8
}

/// Mutates every component of `r` at the chosen bits. Returns the number of
/// mutations and a description of any that still verify.
fn mutate_reference(
    r: &McBlockReference,
    ledger: &LedgerId,
    pick: &mut dyn FnMut(usize) -> Vec<usize>,
) -> (u64, Vec<String>) {
    let expected = r.hash();
    let check = |m: McBlockReference| verify_mc_reference(&m, ledger, &expected);
    let mut tried = 0u64;
    let mut survivors = Vec::new();
    let mut record = |name: &str, bits: &[usize], hits: Vec<usize>| {
        tried += bits.len() as u64;
        if !hits.is_empty() {
            survivors.push(format!("{name} bits {hits:?}"));
        }
    };
    let bits = pick(encoded_bits(&r.header));
    record("header", &bits, bit_flips(&r.header, &bits, &|h| check(McBlockReference { header: h, ..r.clone() })));
    if let Some(p) = &r.mproof {
        let bits = pick(encoded_bits(p));
        record("mproof", &bits, bit_flips(p, &bits, &|p| check(McBlockReference { mproof: Some(p), ..r.clone() })));
    }
    if let Some(p) = &r.proof_of_no_data {
        let bits = pick(encoded_bits(p));
        record(
            "proof_of_no_data",
            &bits,
            bit_flips(p, &bits, &|p| check(McBlockReference { proof_of_no_data: Some(p), ..r.clone() })),
        );
    }
    if let Some(t) = &r.forward_transfers {
        let bits = pick(encoded_bits(t));
        record(
            "ft_tx",
            &bits,
            bit_flips(t, &bits, &|t| check(McBlockReference { forward_transfers: Some(t), ..r.clone() })),
        );
    }
    if let Some(t) = &r.bt_requests {
        let bits = pick(encoded_bits(t));
        record(
            "btr_tx",
            &bits,
            bit_flips(t, &bits, &|t| check(McBlockReference { bt_requests: Some(t), ..r.clone() })),
        );
    }
    if let Some(c) = &r.wcert {
        let bits = pick(encoded_bits(c));
        record("wcert", &bits, bit_flips(c, &bits, &|c| check(McBlockReference { wcert: Some(c), ..r.clone() })));
    }
    (tried, survivors)
}

/// All references carried by the blocks of a node's chain, per ledger.
fn node_references(node: &LatusNode) -> Vec<McBlockReference> {
    node.chain()
        .iter()
        .filter_map(|h| node.entry(h)?.block.clone())
        .flat_map(|b| b.mc_refs.clone())
        .collect()
}

fn commitment_integrity() -> Verdict {
    // Fixture: block 11 carries a deposit, a withdrawal request and the
    // epoch-1 certificate of the same sidechain.
    let mut s = scenario("fixture", 13, vec![alloc("alice", 100)], vec![sidechain("alpha", 3, 4, 2, 10)]);
    let sc = || "alpha".to_string();
    s.events = vec![
        event(
            3,
            Action::ForwardTransfer {
                from: "alice".into(),
                sidechain: sc(),
                to: "alice".into(),
                amount: 30,
                malformed: false,
            },
        ),
        event(
            11,
            Action::ForwardTransfer {
                from: "alice".into(),
                sidechain: sc(),
                to: "bob".into(),
                amount: 5,
                malformed: false,
            },
        ),
        event(
            11,
            Action::Btr {
                sidechain: sc(),
                from: "alice".into(),
                to: "alice".into(),
                amount: None,
                anchor_epoch: None,
            },
        ),
    ];
    let mut sim = Simulation::new(s.clone(), None).ctx("fixture")?;
    sim.run_to_end();
    let ledger = s.sidechains[0].ledger_id();
    let node = sim.node("alpha").ctx("node")?;
    let fixture = node_references(node)
        .into_iter()
        .find(|r| r.forward_transfers.is_some() && r.bt_requests.is_some() && r.wcert.is_some())
        .ctx("fixture reference with a deposit, a request and a certificate")?;
    ensure(verify_mc_reference(&fixture, &ledger, &fixture.hash()), || "fixture does not verify".into())?;
    let (exhaustive, survivors) = mutate_reference(&fixture, &ledger, &mut |n| (0..n).collect());
    ensure(survivors.is_empty(), || format!("fixture mutations accepted: {survivors:?}"))?;

    // Every mainchain block of several random runs, from scratch and as
    // carried by the sidechain.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pool: Vec<(McBlockReference, LedgerId)> = Vec::new();
    let mut round_trips = 0u64;
    for i in 0..4 {
        let s = random_scenario(&mut rng, format!("commitments-{i}"), 60, true);
        let mut sim = Simulation::new(s.clone(), None).ctx("scenario")?;
        sim.run_to_end();
        for spec in &s.sidechains {
            let ledger = spec.ledger_id();
            let genesis = ScState::genesis(spec.mst_depth).ctx("genesis")?;
            for entry in sim.mc().all_blocks() {
                let mut store = OverlayStore::new(&genesis);
                let r = make_mc_reference(&entry.block, &ledger, &mut store).ctx("make reference")?;
                ensure(verify_mc_reference(&r, &ledger, &entry.block.hash()), || {
                    format!("reference for height {} does not verify", entry.block.header.height)
                })?;
                round_trips += 1;
            }
            if let Some(node) = sim.node(&spec.name) {
                for r in node_references(node) {
                    ensure(sim.mc().contains(&r.hash()) && verify_mc_reference(&r, &ledger, &r.hash()), || {
                        "carried reference does not verify".into()
                    })?;
                    round_trips += 1;
                    pool.push((r, ledger));
                }
            }
        }
    }
    // Sample 50 distinct blocks, favoring ones with sidechain data.
    pool.sort_by_key(|(r, _)| (r.mproof.is_none(), r.hash()));
    pool.dedup_by_key(|(r, l)| (r.hash(), *l));
    let with_data = pool.iter().filter(|(r, _)| r.mproof.is_some()).count();
    let mut sample: Vec<usize> = (0..with_data.min(40)).collect();
    while sample.len() < 50 && sample.len() < pool.len() {
        let k = rng.gen_range(0..pool.len());
        if !sample.contains(&k) {
            sample.push(k);
        }
    }
    ensure(sample.len() == 50, || format!("only {} distinct references", pool.len()))?;
    let mut sampled = 0u64;
    for k in sample {
        let (r, ledger) = &pool[k];
        let (n, survivors) = mutate_reference(r, ledger, &mut |n| (0..48).map(|_| rng.gen_range(0..n)).collect());
        ensure(survivors.is_empty(), || format!("sampled mutations accepted at height {}: {survivors:?}", r.header.height))?;
        sampled += n;
    }
    Ok(format!(
        "{round_trips} references round-trip; {exhaustive} exhaustive fixture bit flips and {sampled} sampled flips over 50 blocks all rejected"
    ))
}

// ---- 8: fork consistency ----

fn fork_consistency() -> Verdict {
    let s = scenario_file("fork")?;
    let mut sim = Simulation::new(s.clone(), None).ctx("scenario")?;
    sim.run_to_end();
    let node = sim.node("alpha").ctx("node")?.clone();
    let mc = sim.mc().clone();
    let out = sim.finish();
    ensure(out.report.passed(), || "invariants violated".into())?;

    let orphaned = out
        .report
        .events_of_kind("forward_transfer")
        .find(|e| e.outcome == Outcome::Orphaned)
        .ctx("orphaned deposit")?;
    let orphan_block = orphaned.block.ctx("orphaned block")?;
    ensure(!mc.is_active(&orphan_block), || "orphaned block is active".into())?;
    let fork = out.report.events_of_kind("fork").next().ctx("fork")?;
    ensure(fork.detail.as_deref().is_some_and(|d| d.starts_with("orphaned 3 blocks")), || {
        format!("fork detail {:?}", fork.detail)
    })?;

    let chain: BTreeSet<Digest> = node.chain().into_iter().collect();
    let carrying: Vec<Digest> = node
        .entries()
        .filter(|e| e.block.as_ref().is_some_and(|b| b.mc_refs.iter().any(|r| r.hash() == orphan_block)))
        .map(|e| e.hash)
        .collect();
    ensure(!carrying.is_empty() && carrying.iter().all(|h| !chain.contains(h)), || {
        "a block carrying the orphaned reference is still on the sidechain".into()
    })?;
    let reverted = out.report.sidechains["alpha"].blocks_reverted;
    ensure(reverted >= carrying.len() as u64, || format!("{reverted} reverted"))?;

    // Fresh mainchain from the winning branch, fresh sidechain node fed the
    // surviving blocks.
    let premine = s
        .mainchain
        .premine
        .iter()
        .map(|a| TxOut {
            addr: actor_address(&a.actor),
            amount: a.amount,
        })
        .collect();
    let mut fresh_mc = McChain::new(Arc::new(proof_system()), premine);
    for h in &mc.active_chain()[1..] {
        fresh_mc.extend_chain(mc.block(h).ctx("block")?.clone()).ctx("replay block")?;
    }
    ensure(fresh_mc.tip() == mc.tip(), || "fresh mainchain tip differs".into())?;
    let genesis = out.snapshot.sidechain_genesis["alpha"];
    let mut fresh = LatusNode::new(s.sidechains[0].params(), fresh_mc.proofs().clone(), genesis).ctx("node")?;
    let mut naive = NaiveState::genesis(s.sidechains[0].mst_depth);
    for h in &node.chain()[1..] {
        let entry = node.entry(h).ctx("entry")?;
        let block = entry.block.clone().ctx("block")?;
        for t in block.transitions(entry.starts_epoch) {
            naive.apply(&t)?;
        }
        fresh.receive_block(&fresh_mc, (*block).clone()).ctx("receive")?;
    }
    fresh.select_tip(&fresh_mc);
    let digest = node.tip_state().digest();
    ensure(fresh.tip() == node.tip() && fresh.tip_state().digest() == digest, || {
        "fresh replay reaches a different state".into()
    })?;
    ensure(naive.digest() == digest, || "list replay reaches a different state".into())?;
    ensure(fresh.utxos_of(&actor_address("bob")).is_empty(), || "orphaned deposit survived".into())?;
    ensure(
        out.report.sidechains["alpha"].sc_state_digest == digest && fresh.utxos_of(&actor_address("alice")).len() == 1,
        || "reported state differs".into(),
    )?;
    Ok(format!(
        "depth-3 reorg reverted {reverted} sidechain blocks ({} carried the orphaned deposit); fresh replay digest {} matches",
        carrying.len(),
        digest.short()
    ))
}

// ---- 9: non-spend proof ----

fn non_spend_proof() -> Verdict {
    let key = |name: &str| Keypair::from_seed(&hash_bytes(format!("nonspend/{name}").as_bytes()));
    let (miner, forger, alice, carol) = (key("miner"), key("forger"), key("alice"), key("carol"));
    let params = LatusParams {
        ledger_id: hash_bytes(b"nonspend"),
        start_block: 3,
        epoch_len: 4,
        submit_len: 2,
        mst_depth: 5,
        slots_per_epoch: 6,
        genesis_stakes: vec![(forger.address(), 100)],
    };
    let ledger = params.ledger_id;
    let premine = vec![TxOut {
        addr: miner.address(),
        amount: 1_000,
    }];
    let mut w = World::new(params.clone(), forger, premine);
    while w.mc.height() + 1 < params.start_block {
        w.step()?;
    }
    let (outpoint, entry) = w.mc.tip_state().outputs_of(&miner.address())[0];
    let fts = [(&alice, 10), (&carol, 10)]
        .iter()
        .map(|(k, amount)| ForwardTransfer {
            ledger_id: ledger,
            receiver_metadata: receiver_metadata(&k.address(), &miner.address()),
            amount: *amount,
        })
        .collect();
    let change = TxOut {
        addr: miner.address(),
        amount: entry.out.amount - 20,
    };
    w.pending.push(McItem::Transaction(McTransaction::signed(&[(outpoint, &miner)], vec![change], fts)));
    let certified = |w: &World, e: u64| w.sidechain_status().is_some_and(|(_, c)| c.contains(&e));
    while !certified(&w, 0) {
        ensure(w.step()?.is_empty(), || "deposit rejected".into())?;
    }
    let coin_a = *w.node().utxos_of(&alice.address()).first().ctx("alice coin")?;
    let coin_x = *w.node().utxos_of(&carol.address()).first().ctx("carol coin")?;
    let slot_x = mst_position(&coin_x, params.mst_depth);

    // In epoch 1 carol spends her coin to a fresh key whose output lands in
    // the same slot.
    let (refill, _) = (0u64..)
        .find_map(|i| {
            let k = key(&format!("refill/{i}"));
            let tx = PaymentTx::signed(
                &[(coin_x, &carol)],
                vec![TxOut {
                    addr: k.address(),
                    amount: 10,
                }],
            );
            (mst_position(&tx.output_utxos()[0], params.mst_depth) == slot_x).then_some((tx, k))
        })
        .expect("some key fits");
    let refilled = refill.output_utxos()[0];
    w.pending_sc.push(ScTransaction::Payment(refill));
    w.step()?;
    ensure(w.node().tip_state().mst.get(slot_x) == Some(&refilled), || "slot not refilled".into())?;
    while !certified(&w, 2) {
        w.step()?;
    }
    let node = w.node().clone();
    let receiver = Address(hash_bytes(b"nonspend/receiver"));

    // Alice's coin was untouched in epochs 1 and 2.
    let good = node
        .build_request(&w.mc, RequestKind::Btr, &coin_a, &alice, receiver, Some(0))
        .ctx("alice request")?;
    // Carol's coin: the prover refuses, and a forced proof is refused by
    // the mainchain.
    let refused = node
        .build_request(&w.mc, RequestKind::Btr, &coin_x, &carol, receiver, Some(0))
        .err()
        .ctx("carol request refused")?;
    ensure(refused.code() == "unprovable", || format!("prover error {refused}"))?;
    let anchor_block = node.certified_block(&w.mc, 0).ctx("anchor block")?;
    let anchor_mst = &node.entry(&anchor_block).ctx("anchor")?.state.mst;
    let latest = w
        .mc
        .tip_state()
        .sidechain(&ledger)
        .and_then(|sc| sc.last_cert().cloned())
        .ctx("latest cert")?;
    let forge = |utxo: &Utxo, owner: &Keypair| -> Result<WithdrawalRequest, String> {
        let mut witness: RequestWitness = good.proof.witness.decode()?;
        let nullifier = utxo.nullifier();
        witness.utxo = *utxo;
        witness.inclusion = anchor_mst.prove_inclusion(utxo).ctx("inclusion")?;
        witness.auth = SpendAuth::sign(owner, &request_auth_message(&ledger, &nullifier, &receiver, utxo.amount));
        let proofdata = request_proofdata(utxo);
        let public = request_public_input(latest.block_hash, nullifier, receiver, utxo.amount, proofdata_root(&proofdata));
        let vk = params.keys(StatementId::Btr).vk;
        Ok(WithdrawalRequest {
            ledger_id: ledger,
            receiver,
            amount: utxo.amount,
            nullifier,
            proofdata,
            proof: StatementProof::assemble_unchecked(&vk, &public, Witness::encode(&witness)),
        })
    };
    // The forged construction is sound for an untouched coin, so only the
    // delta chain separates the two.
    let control = forge(&coin_a, &alice)?;
    let forced = forge(&coin_x, &carol)?;
    let system = w.mc.proofs().clone();
    let vk = params.keys(StatementId::Btr).vk;
    let public = |r: &WithdrawalRequest| {
        request_public_input(latest.block_hash, r.nullifier, r.receiver, r.amount, proofdata_root(&r.proofdata))
    };
    ensure(system.verify(&vk, &public(&control), &control.proof), || "control request fails".into())?;
    let why = system.explain(&vk, &public(&forced), &forced.proof).err().ctx("forced request verifies")?;
    ensure(why.contains("unspent"), || format!("forced request fails for another reason: {why}"))?;

    w.pending.push(McItem::Btr(good));
    w.pending.push(McItem::Btr(forced));
    let rejected = w.step()?;
    ensure(rejected == [(1, RejectReason::BadProof)], || format!("rejections {rejected:?}"))?;
    ensure(
        w.mc.tip_state().sidechain(&ledger).is_some_and(|sc| sc.nullifiers.contains(&coin_a.nullifier())),
        || "alice's request not recorded".into(),
    )?;
    Ok(format!(
        "anchored at epoch 0 with epochs 1-2 certified: untouched coin withdrawn; slot {slot_x} spent and refilled refused (prover: {}, mainchain: bad_proof)",
        refused.code()
    ))
}

// ---- 10: determinism ----

fn determinism() -> Verdict {
    let mut scenarios: Vec<Scenario> = ["happy_path", "withholding", "fork", "wcert_rules", "random_traffic"]
        .iter()
        .map(|n| scenario_file(n))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..5 {
        let blocks = rng.gen_range(30..=150);
        scenarios.push(random_scenario(&mut rng, format!("determinism-{i}"), blocks, true));
    }
    let mut bytes = 0usize;
    for s in &scenarios {
        let a = run(s, None).ctx("run")?;
        let b = run(s, None).ctx("run")?;
        let (sa, sb) = (a.snapshot.to_json(), b.snapshot.to_json());
        let (ra, rb) = (a.report.to_json(), b.report.to_json());
        ensure(sa == sb && ra == rb, || format!("{} differs between runs", s.name))?;
        ensure(a.report.digest == a.report.compute_digest(), || format!("{} digest unsealed", s.name))?;
        bytes += sa.len();
        let seeded = run(s, Some(s.seed ^ 1)).ctx("run")?;
        if s.traffic.is_some() {
            ensure(seeded.report.digest != a.report.digest, || format!("{} ignores its seed", s.name))?;
        }
        if let Some(rec) = a.report.events.iter().find(|e| e.source == Source::Traffic) {
            ensure(rec.tick >= 1, || "traffic before the first tick".into())?;
        }
    }
    Ok(format!(
        "{} scenarios run twice with byte-identical snapshots ({bytes} bytes) and reports",
        scenarios.len()
    ))
}
