//! The deterministic scheduler. Each tick applies that tick's events, draws
//! random traffic, mines a mainchain block on every `ticks_per_block`-th
//! tick, lets every sidechain forge one slot and queues due certificates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidechain_core::crypto::{hash_bytes, Address, Digest, Keypair, Utxo};
use sidechain_core::latus::{
    proof_system, receiver_metadata, BtTx, ForgeError, LatusNode, LatusParams, McPointer, PaymentTx, RequestKind,
    ScBlock, ScTransaction,
};
use sidechain_core::mainchain::{
    BackwardTransfer, ForwardTransfer, LedgerId, LedgerState, McBlock, McChain, McItem, McTransaction, OutPoint,
    SidechainEntry, SidechainStatus, TxOut, WithdrawalCertificate,
};

use crate::invariants::{ChainTally, Invariants};
use crate::report::{
    BalancePoint, BlockSummary, CertRecord, EventRecord, FinalState, LedgerSummary, Outcome, Payout, PayoutKind,
    RunReport, SidechainReport, Source, REPORT_VERSION,
};
use crate::scenario::{actor_key, Action, CertVariant, Scenario, ScenarioError, SidechainSpec, Traffic};
use crate::snapshot::{Snapshot, SNAPSHOT_VERSION};

/// Nonces of blocks mined by fork events start here so they never collide
/// with regular blocks, whose nonce is the tick.
const FORK_NONCE_BASE: u64 = 1 << 40;

/// Receiver of tampered certificate transfers.
pub fn attacker() -> Address {
    Address(hash_bytes(b"attacker"))
}

pub struct RunOutput {
    pub report: RunReport,
    pub snapshot: Snapshot,
}

/// Runs `scenario` to completion; `seed` overrides the scenario's seed.
pub fn run(scenario: &Scenario, seed: Option<u64>) -> Result<RunOutput, ScenarioError> {
    let mut sim = Simulation::new(scenario.clone(), seed)?;
    sim.run_to_end();
    Ok(sim.finish())
}

struct Reject {
    code: &'static str,
    detail: Option<String>,
}

fn reject(code: &'static str) -> Reject {
    Reject { code, detail: None }
}

fn reject_with(code: &'static str, detail: impl ToString) -> Reject {
    Reject {
        code,
        detail: Some(detail.to_string()),
    }
}

/// What an applied action left behind.
enum Applied {
    /// Submitted; the outcome is known once a block includes it or not.
    Queued,
    Done(Option<String>),
}

struct Queued {
    record: usize,
    item: McItem,
}

struct Chain {
    spec: SidechainSpec,
    params: LatusParams,
    ledger: LedgerId,
    node: Option<LatusNode>,
    genesis_mc: Option<McPointer>,
    /// Sidechain transactions waiting for the next forged block.
    pending: Vec<(usize, ScTransaction)>,
    reserved: BTreeSet<Utxo>,
    withholding: bool,
    skip: u64,
    log: Vec<ScBlock>,
    trajectory: Vec<BalancePoint>,
}

pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    rng: ChaCha8Rng,
    mc: McChain,
    keys: BTreeMap<String, Keypair>,
    names: BTreeMap<Address, String>,
    chains: Vec<Chain>,
    tick: u64,
    /// Scripted event indices in firing order.
    schedule: Vec<usize>,
    next_event: usize,
    pending: Vec<Queued>,
    auto_certs: Vec<Queued>,
    reserved_mc: BTreeSet<OutPoint>,
    reserved_nullifiers: BTreeSet<Digest>,
    last_request: Option<McItem>,
    records: Vec<EventRecord>,
    blocks: Vec<BlockSummary>,
    mc_log: Vec<McBlock>,
    tallies: HashMap<Digest, ChainTally>,
    invariants: Invariants,
    aborted: Option<String>,
}

impl Simulation {
    pub fn new(scenario: Scenario, seed: Option<u64>) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let seed = seed.unwrap_or(scenario.seed);
        let keys: BTreeMap<String, Keypair> = scenario.actors().into_iter().map(|n| (n.clone(), actor_key(&n))).collect();
        let names = keys.iter().map(|(n, k)| (k.address(), n.clone())).collect();
        let premine = scenario
            .mainchain
            .premine
            .iter()
            .map(|a| TxOut {
                addr: keys[&a.actor].address(),
                amount: a.amount,
            })
            .collect();
        let mc = McChain::new(Arc::new(proof_system()), premine);
        let chains = scenario
            .sidechains
            .iter()
            .map(|spec| Chain {
                spec: spec.clone(),
                params: spec.params(),
                ledger: spec.ledger_id(),
                node: None,
                genesis_mc: None,
                pending: Vec::new(),
                reserved: BTreeSet::new(),
                withholding: false,
                skip: 0,
                log: Vec::new(),
                trajectory: Vec::new(),
            })
            .collect();
        let mut schedule: Vec<usize> = (0..scenario.events.len()).collect();
        schedule.sort_by_key(|i| scenario.events[*i].at);
        let mut tallies = HashMap::new();
        tallies.insert(mc.genesis(), ChainTally::default());
        Ok(Simulation {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            scenario,
            mc,
            keys,
            names,
            chains,
            tick: 0,
            schedule,
            next_event: 0,
            pending: Vec::new(),
            auto_certs: Vec::new(),
            reserved_mc: BTreeSet::new(),
            reserved_nullifiers: BTreeSet::new(),
            last_request: None,
            records: Vec::new(),
            blocks: Vec::new(),
            mc_log: Vec::new(),
            tallies,
            invariants: Invariants::new(),
            aborted: None,
        })
    }

    pub fn mc(&self) -> &McChain {
        &self.mc
    }

    pub fn node(&self, sidechain: &str) -> Option<&LatusNode> {
        self.chains.iter().find(|c| c.spec.name == sidechain)?.node.as_ref()
    }

    pub fn node_mut(&mut self, sidechain: &str) -> Option<&mut LatusNode> {
        self.chains.iter_mut().find(|c| c.spec.name == sidechain)?.node.as_mut()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn key(&self, actor: &str) -> Keypair {
        self.keys.get(actor).cloned().unwrap_or_else(|| actor_key(actor))
    }

    pub fn is_done(&self) -> bool {
        let mc = &self.scenario.mainchain;
        self.aborted.is_some()
            || self.mc.height() >= mc.stop_at_block
            || self.tick >= mc.stop_at_block.saturating_mul(mc.ticks_per_block)
    }

    pub fn run_to_end(&mut self) {
        while !self.is_done() {
            self.step();
        }
    }

    pub fn step(&mut self) {
        self.tick += 1;
        while let Some(&i) = self.schedule.get(self.next_event) {
            if self.scenario.events[i].at > self.tick {
                break;
            }
            self.next_event += 1;
            if self.scenario.events[i].at == self.tick {
                let action = self.scenario.events[i].action.clone();
                self.apply(&action, Source::Scripted);
            }
        }
        self.register_due();
        if let Some(t) = self.scenario.traffic.clone() {
            if self.tick >= t.from_tick {
                self.traffic(&t);
            }
        }
        if self.tick % self.scenario.mainchain.ticks_per_block == 0 {
            self.mine();
        }
        if self.aborted.is_some() {
            return;
        }
        for i in 0..self.chains.len() {
            self.forge(i);
        }
        for i in 0..self.chains.len() {
            self.auto_certify(i);
        }
    }

    // ---- records ----

    fn open(&mut self, kind: &str, source: Source, sidechain: Option<&str>) -> usize {
        self.records.push(EventRecord {
            id: self.records.len() as u64,
            tick: self.tick,
            kind: kind.to_string(),
            source,
            sidechain: sidechain.map(String::from),
            outcome: Outcome::Pending,
            reason: None,
            detail: None,
            block: None,
        });
        self.records.len() - 1
    }

    fn settle(&mut self, id: usize, outcome: Outcome, reason: Option<&str>, block: Option<Digest>) {
        let r = &mut self.records[id];
        if r.outcome == Outcome::Rejected {
            return;
        }
        r.outcome = outcome;
        r.reason = reason.map(String::from);
        r.block = block;
    }

    // ---- helpers ----

    fn chain_index(&self, name: &str) -> usize {
        self.chains
            .iter()
            .position(|c| c.spec.name == name)
            .expect("validated sidechain name")
    }

    fn address(&self, actor: &str) -> Address {
        self.key(actor).address()
    }

    fn label(&self, addr: &Address) -> String {
        self.names.get(addr).cloned().unwrap_or_else(|| addr.0.short())
    }

    fn sc_entry(&self, ledger: &LedgerId) -> Option<&SidechainEntry> {
        self.mc.tip_state().sidechain(ledger)
    }

    fn mc_coins(&self, owner: &Address) -> Vec<(OutPoint, u64)> {
        let next = self.mc.height() + 1;
        self.mc
            .tip_state()
            .outputs_of(owner)
            .into_iter()
            .filter(|(p, e)| e.spendable_from <= next && !self.reserved_mc.contains(p))
            .map(|(p, e)| (p, e.out.amount))
            .collect()
    }

    pub fn mc_funds(&self, actor: &str) -> u64 {
        self.mc_coins(&self.address(actor)).iter().map(|(_, a)| a).sum()
    }

    fn sc_coins(&self, chain: usize, owner: &Address) -> Vec<Utxo> {
        let c = &self.chains[chain];
        let Some(node) = &c.node else { return vec![] };
        node.utxos_of(owner).into_iter().filter(|u| !c.reserved.contains(u)).collect()
    }

    pub fn sc_funds(&self, sidechain: &str, actor: &str) -> u64 {
        let i = self.chain_index(sidechain);
        self.sc_coins(i, &self.address(actor)).iter().map(|u| u.amount).sum()
    }

    /// Signed mainchain transaction paying `amount` in total to `outputs`
    /// and `fts`, with change back to the payer.
    fn mc_payment(&mut self, from: &str, amount: u64, mut outputs: Vec<TxOut>, fts: Vec<ForwardTransfer>) -> Result<McTransaction, Reject> {
        let key = self.key(from);
        let mut picked = Vec::new();
        let mut total = 0u64;
        for (p, a) in self.mc_coins(&key.address()) {
            if total >= amount {
                break;
            }
            picked.push(p);
            total += a;
        }
        if total < amount {
            return Err(reject("insufficient_funds"));
        }
        if total > amount {
            outputs.push(TxOut {
                addr: key.address(),
                amount: total - amount,
            });
        }
        self.reserved_mc.extend(picked.iter().copied());
        let spends: Vec<_> = picked.iter().map(|p| (*p, &key)).collect();
        Ok(McTransaction::signed(&spends, outputs, fts))
    }

    fn pick_sc_coins(&self, chain: usize, owner: &Address, amount: u64) -> Result<(Vec<Utxo>, u64), Reject> {
        let mut picked = Vec::new();
        let mut total = 0u64;
        for u in self.sc_coins(chain, owner) {
            if total >= amount {
                break;
            }
            total += u.amount;
            picked.push(u);
        }
        if total < amount {
            return Err(reject("insufficient_funds"));
        }
        Ok((picked, total))
    }

    fn live_chain(&self, chain: usize) -> Result<(), Reject> {
        let c = &self.chains[chain];
        if c.node.is_none() || self.mc.height() < c.params.start_block {
            return Err(reject("sidechain_not_started"));
        }
        if self.sc_entry(&c.ledger).map(|s| s.status) == Some(SidechainStatus::Ceased) {
            return Err(reject("sidechain_ceased"));
        }
        Ok(())
    }

    /// Certificate accepted on the tip for the latest certified epoch.
    fn accepted_cert(&self, ledger: &LedgerId) -> Option<WithdrawalCertificate> {
        let accepted = self.sc_entry(ledger)?.last_cert()?;
        let block = self.mc.block(&accepted.block_hash)?;
        block.body.certificates.iter().find(|c| c.ledger_id == *ledger).cloned()
    }

    fn fresh_cert(&mut self, chain: usize, back: u64) -> Result<WithdrawalCertificate, Reject> {
        let node = self.chains[chain].node.as_mut().ok_or(reject("sidechain_not_started"))?;
        node.select_tip(&self.mc);
        let epoch = node
            .last_closed_epoch()
            .and_then(|e| e.checked_sub(back))
            .ok_or(reject("no_closed_epoch"))?;
        node.generate_wcert(epoch).map_err(|e| reject_with("cert_unavailable", e))
    }

    // ---- actions ----

    pub fn apply(&mut self, action: &Action, source: Source) {
        if let Action::Replay { count } = action {
            for _ in 0..*count {
                self.replay(source);
            }
            return;
        }
        let id = self.open(action.kind(), source, action.sidechain());
        match self.dispatch(id, action) {
            Ok(Applied::Queued) => {}
            Ok(Applied::Done(detail)) => {
                self.settle(id, Outcome::Accepted, None, None);
                self.records[id].detail = detail;
            }
            Err(r) => {
                let rec = &mut self.records[id];
                rec.outcome = Outcome::Rejected;
                rec.reason = Some(r.code.to_string());
                rec.detail = r.detail;
            }
        }
    }

    fn queue(&mut self, id: usize, item: McItem) -> Applied {
        self.pending.push(Queued { record: id, item });
        Applied::Queued
    }

    fn dispatch(&mut self, id: usize, action: &Action) -> Result<Applied, Reject> {
        match action {
            Action::McTransfer { from, to, amount } => {
                let out = TxOut {
                    addr: self.address(to),
                    amount: *amount,
                };
                let tx = self.mc_payment(from, *amount, vec![out], vec![])?;
                Ok(self.queue(id, McItem::Transaction(tx)))
            }
            Action::ForwardTransfer {
                from,
                sidechain,
                to,
                amount,
                malformed,
            } => {
                let c = &self.chains[self.chain_index(sidechain)];
                let mut metadata = receiver_metadata(&self.address(to), &self.address(from));
                if *malformed {
                    metadata.truncate(32);
                }
                let ft = ForwardTransfer {
                    ledger_id: c.ledger,
                    receiver_metadata: metadata,
                    amount: *amount,
                };
                let tx = self.mc_payment(from, *amount, vec![], vec![ft])?;
                Ok(self.queue(id, McItem::Transaction(tx)))
            }
            Action::Payment {
                sidechain,
                from,
                to,
                amount,
            } => {
                let i = self.chain_index(sidechain);
                self.live_chain(i)?;
                let key = self.key(from);
                let (inputs, total) = self.pick_sc_coins(i, &key.address(), *amount)?;
                let mut outputs = vec![TxOut {
                    addr: self.address(to),
                    amount: *amount,
                }];
                if total > *amount {
                    outputs.push(TxOut {
                        addr: key.address(),
                        amount: total - amount,
                    });
                }
                let spends: Vec<_> = inputs.iter().map(|u| (*u, &key)).collect();
                let tx = PaymentTx::signed(&spends, outputs);
                let c = &mut self.chains[i];
                c.reserved.extend(inputs);
                c.pending.push((id, ScTransaction::Payment(tx)));
                Ok(Applied::Queued)
            }
            Action::BackwardTransfer {
                sidechain,
                from,
                to,
                amount,
            } => {
                let i = self.chain_index(sidechain);
                self.live_chain(i)?;
                let key = self.key(from);
                let (mut inputs, total) = self.pick_sc_coins(i, &key.address(), *amount)?;
                let mut txs = Vec::new();
                if total > *amount {
                    // Split off the exact amount first; the transfer spends it
                    // within the same block.
                    let spends: Vec<_> = inputs.iter().map(|u| (*u, &key)).collect();
                    let split = PaymentTx::signed(
                        &spends,
                        vec![
                            TxOut {
                                addr: key.address(),
                                amount: *amount,
                            },
                            TxOut {
                                addr: key.address(),
                                amount: total - amount,
                            },
                        ],
                    );
                    self.chains[i].reserved.extend(inputs);
                    inputs = vec![split.output_utxos()[0]];
                    txs.push(ScTransaction::Payment(split));
                }
                let bt = BackwardTransfer {
                    receiver: self.address(to),
                    amount: *amount,
                };
                let spends: Vec<_> = inputs.iter().map(|u| (*u, &key)).collect();
                txs.push(ScTransaction::Backward(BtTx::signed(&spends, vec![bt])));
                let c = &mut self.chains[i];
                c.reserved.extend(inputs);
                c.pending.extend(txs.into_iter().map(|t| (id, t)));
                Ok(Applied::Queued)
            }
            Action::Btr {
                sidechain,
                from,
                to,
                amount,
                anchor_epoch,
            } => self.request(id, RequestKind::Btr, sidechain, from, to, *amount, *anchor_epoch),
            Action::Csw {
                sidechain,
                from,
                to,
                amount,
            } => self.request(id, RequestKind::Csw, sidechain, from, to, *amount, None),
            Action::Replay { .. } => unreachable!("expanded by apply"),
            Action::Certify { sidechain } => {
                let i = self.chain_index(sidechain);
                let cert = self.fresh_cert(i, 0)?;
                Ok(self.queue(id, McItem::Certificate(cert)))
            }
            Action::WithholdCerts { sidechain } => {
                let i = self.chain_index(sidechain);
                self.chains[i].withholding = true;
                Ok(Applied::Done(None))
            }
            Action::ResumeCerts { sidechain } => {
                let i = self.chain_index(sidechain);
                self.chains[i].withholding = false;
                Ok(Applied::Done(None))
            }
            Action::SkipSlots { sidechain, count } => {
                let i = self.chain_index(sidechain);
                self.chains[i].skip += count;
                Ok(Applied::Done(None))
            }
            Action::MaliciousCert { sidechain, variant } => {
                let i = self.chain_index(sidechain);
                let cert = self.malicious_cert(i, *variant)?;
                self.records[id].detail = Some(format!("{variant:?}"));
                Ok(self.queue(id, McItem::Certificate(cert)))
            }
            Action::Fork { depth } => self.fork(*depth),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn request(
        &mut self,
        id: usize,
        kind: RequestKind,
        sidechain: &str,
        from: &str,
        to: &str,
        amount: Option<u64>,
        anchor_epoch: Option<u64>,
    ) -> Result<Applied, Reject> {
        let i = self.chain_index(sidechain);
        let c = &self.chains[i];
        let node = c.node.as_ref().ok_or(reject("sidechain_not_started"))?;
        let sc = self.sc_entry(&c.ledger).ok_or(reject("unknown_sidechain"))?;
        let latest = sc.last_cert().ok_or(reject("no_certificate"))?;
        let anchor = anchor_epoch.unwrap_or(latest.epoch_id);
        let anchor_block = node.certified_block(&self.mc, anchor).ok_or(reject("no_anchor"))?;
        let owner = self.key(from);
        let certified = &node.entry(&anchor_block).expect("certified block stored").state.mst;
        let tip = &node.tip_state().mst;
        let mut candidates: Vec<Utxo> = certified
            .utxos()
            .filter(|u| u.addr == owner.address() && amount.map_or(true, |a| u.amount == a))
            .filter(|u| !sc.nullifiers.contains(&u.nullifier()) && !self.reserved_nullifiers.contains(&u.nullifier()))
            .copied()
            .collect();
        // Prefer coins the sidechain still holds so the request is honored.
        candidates.sort_by_key(|u| !tip.contains(u));
        let utxo = *candidates.first().ok_or(reject("no_eligible_coin"))?;
        let req = node
            .build_request(&self.mc, kind, &utxo, &owner, self.address(to), Some(anchor))
            .map_err(|e| reject_with(e.code(), e))?;
        self.reserved_nullifiers.insert(req.nullifier);
        let item = match kind {
            RequestKind::Btr => McItem::Btr(req),
            RequestKind::Csw => McItem::Csw(req),
        };
        self.last_request = Some(item.clone());
        Ok(self.queue(id, item))
    }

    fn replay(&mut self, source: Source) {
        let item = self.last_request.clone();
        let sidechain = item.as_ref().and_then(|it| match it {
            McItem::Btr(r) | McItem::Csw(r) => self.chains.iter().find(|c| c.ledger == r.ledger_id),
            _ => None,
        });
        let name = sidechain.map(|c| c.spec.name.clone());
        let id = self.open("replay", source, name.as_deref());
        match item {
            Some(item) => {
                self.records[id].detail = Some(item.kind().to_string());
                self.queue(id, item);
            }
            None => {
                self.records[id].outcome = Outcome::Rejected;
                self.records[id].reason = Some("nothing_to_replay".into());
            }
        }
    }

    fn malicious_cert(&mut self, chain: usize, variant: CertVariant) -> Result<WithdrawalCertificate, Reject> {
        let ledger = self.chains[chain].ledger;
        let cert = match variant {
            CertVariant::WrongLedger => {
                let mut c = self.fresh_cert(chain, 0)?;
                c.ledger_id = hash_bytes(b"ledger/unregistered");
                c
            }
            CertVariant::StaleEpoch => self.fresh_cert(chain, 1)?,
            CertVariant::Resubmit => self.accepted_cert(&ledger).ok_or(reject("no_certificate"))?,
            CertVariant::LowQuality => {
                let mut c = self.accepted_cert(&ledger).ok_or(reject("no_certificate"))?;
                c.quality = c.quality.checked_sub(1).ok_or(reject("quality_at_minimum"))?;
                c
            }
            CertVariant::ForgedBtList => {
                let mut c = self.fresh_cert(chain, 0)?;
                match c.bt_list.first_mut() {
                    Some(bt) => bt.receiver = attacker(),
                    None => c.bt_list.push(BackwardTransfer {
                        receiver: attacker(),
                        amount: 1,
                    }),
                }
                c
            }
            CertVariant::BadProof => {
                let mut c = self.fresh_cert(chain, 0)?;
                let payload = &mut c.proof.witness.payload;
                let mid = payload.len() / 2;
                payload[mid] ^= 0x01;
                c
            }
            CertVariant::Overdraw => {
                let mut c = self.fresh_cert(chain, 0)?;
                let balance = self.sc_entry(&ledger).map_or(0, |s| s.balance);
                c.bt_list.push(BackwardTransfer {
                    receiver: attacker(),
                    amount: balance + 1,
                });
                c
            }
        };
        Ok(cert)
    }

    /// Replaces the top `depth` blocks with `depth + 1` empty ones.
    fn fork(&mut self, depth: u64) -> Result<Applied, Reject> {
        let height = self.mc.height();
        let base = height.checked_sub(depth).ok_or(reject("fork_too_deep"))?;
        let floor = self.chains.iter().filter_map(|c| c.genesis_mc.map(|g| g.height)).max().unwrap_or(0);
        if base < floor {
            return Err(reject("fork_below_sidechain_genesis"));
        }
        let mut parent = self.mc.active_hash_at(base).expect("height within the active chain");
        let mut orphaned = 0;
        for i in 0..=depth {
            let nonce = FORK_NONCE_BASE + self.tick * 1024 + i;
            let block = self.mc.assemble_block(&parent, &[], vec![], nonce).expect("known parent").block;
            let out = self.mc.extend_chain(block).map_err(|e| reject_with("fork_failed", e))?;
            orphaned += out.orphaned.len();
            parent = out.hash;
            self.after_block(out.hash);
        }
        Ok(Applied::Done(Some(format!("orphaned {orphaned} blocks from height {}", base + 1))))
    }

    fn register_due(&mut self) {
        for i in 0..self.chains.len() {
            if self.chains[i].spec.register_at != self.tick {
                continue;
            }
            let name = self.chains[i].spec.name.clone();
            let c = &self.chains[i];
            let cfg = c.params.sidechain_config(c.spec.btr, c.spec.csw);
            let id = self.open("create_sidechain", Source::Scripted, Some(&name));
            self.queue(id, McItem::CreateSidechain(cfg));
        }
    }

    // ---- random traffic ----

    fn pick<'a>(&mut self, actors: &'a [String]) -> &'a str {
        actors.choose(&mut self.rng).expect("validated non-empty")
    }

    fn traffic(&mut self, t: &Traffic) {
        let actors = &t.actors;
        for i in 0..self.chains.len() {
            let sidechain = self.chains[i].spec.name.clone();
            if self.rng.gen_bool(t.forward_transfer) {
                let (from, to) = (self.pick(actors).to_string(), self.pick(actors).to_string());
                let malformed = self.rng.gen_bool(t.malformed_share);
                let amount = self.rng.gen_range(1..=t.max_amount).min(self.mc_funds(&from));
                if amount > 0 {
                    let a = Action::ForwardTransfer {
                        from,
                        sidechain: sidechain.clone(),
                        to,
                        amount,
                        malformed,
                    };
                    self.apply(&a, Source::Traffic);
                }
            }
            if self.rng.gen_bool(t.payment) {
                let (from, to) = (self.pick(actors).to_string(), self.pick(actors).to_string());
                let funds = self.sc_funds(&sidechain, &from);
                if funds > 0 {
                    let amount = self.rng.gen_range(1..=funds.min(t.max_amount));
                    let a = Action::Payment {
                        sidechain: sidechain.clone(),
                        from,
                        to,
                        amount,
                    };
                    self.apply(&a, Source::Traffic);
                }
            }
            if self.rng.gen_bool(t.backward_transfer) {
                let (from, to) = (self.pick(actors).to_string(), self.pick(actors).to_string());
                let funds = self.sc_funds(&sidechain, &from);
                if funds > 0 {
                    let amount = self.rng.gen_range(1..=funds.min(t.max_amount));
                    let a = Action::BackwardTransfer {
                        sidechain: sidechain.clone(),
                        from,
                        to,
                        amount,
                    };
                    self.apply(&a, Source::Traffic);
                }
            }
            let ceased = self.sc_entry(&self.chains[i].ledger).map(|s| s.status) == Some(SidechainStatus::Ceased);
            if self.rng.gen_bool(t.btr) && !ceased {
                let (from, to) = (self.pick(actors).to_string(), self.pick(actors).to_string());
                let a = Action::Btr {
                    sidechain: sidechain.clone(),
                    from,
                    to,
                    amount: None,
                    anchor_epoch: None,
                };
                self.apply(&a, Source::Traffic);
            }
            if self.rng.gen_bool(t.csw) && ceased {
                let (from, to) = (self.pick(actors).to_string(), self.pick(actors).to_string());
                let a = Action::Csw {
                    sidechain: sidechain.clone(),
                    from,
                    to,
                    amount: None,
                };
                self.apply(&a, Source::Traffic);
            }
            if self.rng.gen_bool(t.withhold) && !self.chains[i].withholding {
                self.apply(&Action::WithholdCerts { sidechain }, Source::Traffic);
            }
        }
        if self.rng.gen_bool(t.replay) && self.last_request.is_some() {
            self.apply(&Action::Replay { count: 1 }, Source::Traffic);
        }
        if self.rng.gen_bool(t.fork) {
            let depth = self.rng.gen_range(1..=t.max_fork_depth);
            self.apply(&Action::Fork { depth }, Source::Traffic);
        }
    }

    // ---- mainchain ----

    fn mine(&mut self) {
        let mut queued = std::mem::take(&mut self.pending);
        queued.append(&mut self.auto_certs);
        self.reserved_mc.clear();
        self.reserved_nullifiers.clear();
        let items: Vec<McItem> = queued.iter().map(|q| q.item.clone()).collect();
        let tip = self.mc.tip();
        let assembled = self.mc.assemble_block(&tip, &items, vec![], self.tick).expect("tip is stored");
        let outcome = match self.mc.extend_chain(assembled.block) {
            Ok(o) => o,
            Err(e) => {
                self.aborted = Some(format!("assembled block rejected: {e}"));
                return;
            }
        };
        let rejected: BTreeMap<usize, _> = assembled.rejected.into_iter().collect();
        for (i, q) in queued.iter().enumerate() {
            match rejected.get(&i) {
                Some(reason) => self.settle(q.record, Outcome::Rejected, Some(reason.code()), None),
                None => self.settle(q.record, Outcome::Accepted, None, Some(outcome.hash)),
            }
        }
        self.after_block(outcome.hash);
    }

    fn after_block(&mut self, hash: Digest) {
        let block = self.mc.block(&hash).expect("stored").clone();
        let state = self.mc.state(&hash).expect("stored").clone();
        let parent = self.tallies.get(&block.header.prev).cloned().unwrap_or_default();
        let (tally, reused) = parent.extend(&block);
        let premine = self.scenario.premine_total();
        let labels: BTreeMap<LedgerId, String> = self.chains.iter().map(|c| (c.ledger, c.spec.name.clone())).collect();
        let label = |l: &LedgerId| labels.get(l).cloned().unwrap_or_else(|| l.short());
        self.invariants.check_block(&state, &tally, &reused, premine, &label);
        self.tallies.insert(hash, tally);

        let ledgers = state
            .sidechains
            .iter()
            .map(|(id, sc)| {
                (
                    label(id),
                    LedgerSummary {
                        balance: sc.balance,
                        status: sc.status,
                    },
                )
            })
            .collect();
        let body = &block.body;
        self.blocks.push(BlockSummary {
            height: block.header.height,
            hash,
            parent: block.header.prev,
            tick: self.tick,
            active: true,
            transactions: body.transactions.len() as u64,
            forward_transfers: body.transactions.iter().map(|t| t.forward_transfers.len() as u64).sum(),
            certificates: body.certificates.len() as u64,
            btrs: body.btrs.len() as u64,
            csws: body.csws.len() as u64,
            ledgers,
        });
        self.mc_log.push(block);

        let tip_height = self.mc.height();
        for c in &mut self.chains {
            if let Some(sc) = self.mc.tip_state().sidechain(&c.ledger) {
                c.trajectory.push(BalancePoint {
                    height: tip_height,
                    balance: sc.balance,
                });
            }
        }
        self.start_nodes();
        if let Some(name) = self.invariants.violated() {
            self.aborted.get_or_insert_with(|| format!("invariant {name} violated"));
        }
    }

    /// Creates each registered sidechain's node once the block before its
    /// start height exists.
    fn start_nodes(&mut self) {
        for c in &mut self.chains {
            if c.node.is_some() || self.mc.tip_state().sidechain(&c.ledger).is_none() {
                continue;
            }
            let h = c.params.start_block - 1;
            let Some(hash) = self.mc.active_hash_at(h) else { continue };
            let pointer = McPointer { hash, height: h };
            let node = LatusNode::new(c.params.clone(), self.mc.proofs().clone(), pointer).expect("validated params");
            c.node = Some(node);
            c.genesis_mc = Some(pointer);
        }
    }

    // ---- sidechain ----

    fn forge(&mut self, i: usize) {
        let ceased = self.sc_entry(&self.chains[i].ledger).map(|s| s.status) == Some(SidechainStatus::Ceased);
        let c = &mut self.chains[i];
        let Some(node) = c.node.as_mut() else { return };
        if self.mc.height() < c.params.start_block {
            return;
        }
        if ceased {
            for (id, _) in std::mem::take(&mut c.pending) {
                let r = &mut self.records[id];
                r.outcome = Outcome::Rejected;
                r.reason = Some("sidechain_ceased".into());
            }
            c.reserved.clear();
            return;
        }
        if c.skip > 0 {
            c.skip -= 1;
            node.select_tip(&self.mc);
            self.check_backing(i);
            return;
        }
        let slot = self.tick;
        let tip = node.select_tip(&self.mc);
        let leader = node.leader_for(&tip, slot).and_then(|a| self.names.get(&a).cloned());
        let Some(leader) = leader else {
            self.check_backing(i);
            return;
        };
        let key = self.keys[&leader].clone();
        let txs: Vec<ScTransaction> = c.pending.iter().map(|(_, t)| t.clone()).collect();
        match node.forge(&self.mc, slot, &key, &txs) {
            Ok(forged) => {
                let pending = std::mem::take(&mut c.pending);
                c.reserved.clear();
                c.log.push((*forged.block).clone());
                let dropped: BTreeMap<usize, _> = forged.dropped.into_iter().collect();
                for (k, (id, _)) in pending.iter().enumerate() {
                    match dropped.get(&k) {
                        Some(e) => {
                            let r = &mut self.records[*id];
                            if r.outcome != Outcome::Rejected {
                                r.outcome = Outcome::Rejected;
                                r.reason = Some(e.code().to_string());
                                r.detail = Some(e.to_string());
                                r.block = None;
                            }
                        }
                        None => self.settle(*id, Outcome::Accepted, None, Some(forged.hash)),
                    }
                }
            }
            Err(e) => {
                let code = match &e {
                    ForgeError::NotLeader(_) => "not_leader",
                    ForgeError::StaleSlot(_) => "stale_slot",
                    ForgeError::DetachedTip => "detached_tip",
                    ForgeError::Reference(_) => "reference_error",
                    ForgeError::Block(_) => "invalid_block",
                };
                let name = self.chains[i].spec.name.clone();
                let id = self.open("forge", Source::Auto, Some(&name));
                let r = &mut self.records[id];
                r.outcome = Outcome::Rejected;
                r.reason = Some(code.into());
                r.detail = Some(e.to_string());
            }
        }
        self.check_backing(i);
    }

    fn check_backing(&mut self, i: usize) {
        let c = &self.chains[i];
        let Some(node) = &c.node else { return };
        let total: u128 = node.tip_state().mst.utxos().map(|u| u.amount as u128).sum();
        self.invariants.check_backing(&c.spec.name, self.mc.tip_state(), &c.ledger, total);
        if let Some(name) = self.invariants.violated() {
            self.aborted.get_or_insert_with(|| format!("invariant {name} violated"));
        }
    }

    /// Queues the certificate of the last closed epoch while its window is
    /// open at the next block height.
    fn auto_certify(&mut self, i: usize) {
        let c = &self.chains[i];
        if !c.spec.auto_certify || c.withholding || c.node.is_none() {
            return;
        }
        let ledger = c.ledger;
        let Some(epoch) = c.node.as_ref().and_then(LatusNode::last_closed_epoch) else { return };
        let Some(sc) = self.sc_entry(&ledger) else { return };
        if sc.status != SidechainStatus::Active || sc.certs.contains_key(&epoch) {
            return;
        }
        let next = self.mc.height() + 1;
        match sc.config.epoch_of(next) {
            Ok((e, index)) if e == epoch + 1 && index < sc.config.submit_len => {}
            _ => return,
        }
        let queued = |q: &Queued| matches!(&q.item, McItem::Certificate(cert) if cert.ledger_id == ledger);
        if self.auto_certs.iter().any(queued) {
            return;
        }
        let name = c.spec.name.clone();
        let id = self.open("certificate", Source::Auto, Some(&name));
        let node = self.chains[i].node.as_mut().expect("checked above");
        match node.generate_wcert(epoch) {
            Ok(cert) => {
                self.records[id].detail = Some(format!("epoch {epoch}"));
                self.auto_certs.push(Queued {
                    record: id,
                    item: McItem::Certificate(cert),
                });
            }
            Err(e) => {
                let r = &mut self.records[id];
                r.outcome = Outcome::Rejected;
                r.reason = Some("cert_unavailable".into());
                r.detail = Some(e.to_string());
            }
        }
    }

    // ---- finish ----

    /// Builds the report and snapshot of the run so far.
    pub fn finish(&mut self) -> RunOutput {
        for &i in &self.schedule[self.next_event..] {
            let e = &self.scenario.events[i];
            self.records.push(EventRecord {
                id: self.records.len() as u64,
                tick: e.at,
                kind: e.action.kind().to_string(),
                source: Source::Scripted,
                sidechain: e.action.sidechain().map(String::from),
                outcome: Outcome::NotReached,
                reason: None,
                detail: None,
                block: None,
            });
        }
        self.next_event = self.schedule.len();
        let mut sc_chains: BTreeMap<String, BTreeSet<Digest>> = BTreeMap::new();
        for c in &mut self.chains {
            if let Some(node) = c.node.as_mut() {
                node.select_tip(&self.mc);
                sc_chains.insert(c.spec.name.clone(), node.chain().into_iter().collect());
            }
        }
        for r in &mut self.records {
            let (Outcome::Accepted, Some(h)) = (r.outcome, r.block) else { continue };
            let live = if self.mc.contains(&h) {
                self.mc.is_active(&h)
            } else {
                r.sidechain.as_ref().and_then(|s| sc_chains.get(s)).is_some_and(|set| set.contains(&h))
            };
            if !live {
                r.outcome = Outcome::Orphaned;
            }
        }
        for b in &mut self.blocks {
            b.active = self.mc.is_active(&b.hash);
        }

        let state = self.mc.tip_state().clone();
        let mut sidechains = BTreeMap::new();
        let mut payouts = Vec::new();
        for c in &self.chains {
            let entry = state.sidechain(&c.ledger);
            let (sc_height, sc_tip, sc_state_digest, sc_utxo_total, reverted) = match &c.node {
                Some(node) => {
                    let live = &sc_chains[&c.spec.name];
                    let e = node.tip_entry();
                    (
                        e.height,
                        e.hash,
                        e.state.digest(),
                        e.state.mst.utxos().map(|u| u.amount).sum(),
                        c.log.iter().filter(|b| !live.contains(&b.hash())).count() as u64,
                    )
                }
                None => (0, Digest::ZERO, Digest::ZERO, 0, 0),
            };
            let certificates = entry
                .map(|sc| {
                    sc.certs
                        .values()
                        .map(|a| CertRecord {
                            epoch: a.epoch_id,
                            quality: a.quality,
                            bt_total: a.bt_total,
                            block_height: a.block_height,
                        })
                        .collect()
                })
                .unwrap_or_default();
            sidechains.insert(
                c.spec.name.clone(),
                SidechainReport {
                    ledger_id: c.ledger,
                    registered: entry.is_some(),
                    status: entry.map(|s| s.status),
                    ceased_at: entry.and_then(|s| s.ceased_at),
                    balance: entry.map_or(0, |s| s.balance),
                    balance_trajectory: c.trajectory.clone(),
                    certificates,
                    sc_height,
                    sc_tip,
                    sc_state_digest,
                    sc_utxo_total,
                    blocks_forged: c.log.len() as u64,
                    blocks_reverted: reverted,
                },
            );
            payouts.extend(self.payouts_of(c, &state));
        }
        let balances = self
            .keys
            .iter()
            .map(|(n, k)| (n.clone(), state.balance_of(&k.address())))
            .collect();
        let mut report = RunReport {
            version: REPORT_VERSION,
            scenario: self.scenario.name.clone(),
            seed: self.seed,
            ticks: self.tick,
            aborted: self.aborted.clone(),
            blocks: self.blocks.clone(),
            sidechains,
            events: self.records.clone(),
            invariants: self.invariants.results.clone(),
            final_state: FinalState {
                mc_height: self.mc.height(),
                mc_tip: self.mc.tip(),
                balances,
                payouts,
            },
            digest: String::new(),
        };
        report.seal();
        let snapshot = Snapshot {
            version: SNAPSHOT_VERSION,
            scenario: self.scenario.clone(),
            seed: self.seed,
            sidechain_genesis: self
                .chains
                .iter()
                .filter_map(|c| c.genesis_mc.map(|g| (c.spec.name.clone(), g)))
                .collect(),
            mc_blocks: self.mc_log.clone(),
            sc_blocks: self.chains.iter().map(|c| (c.spec.name.clone(), c.log.clone())).collect(),
            report: report.clone(),
        };
        RunOutput { report, snapshot }
    }

    /// Certificate and ceased-withdrawal payouts on the active chain.
    fn payouts_of(&self, c: &Chain, state: &LedgerState) -> Vec<Payout> {
        let mut out = Vec::new();
        let Some(sc) = state.sidechain(&c.ledger) else { return out };
        for accepted in sc.certs.values() {
            let Some(block) = self.mc.block(&accepted.block_hash) else { continue };
            let Some(cert) = block.body.certificates.iter().find(|x| x.ledger_id == c.ledger) else { continue };
            out.extend(cert.bt_list.iter().map(|bt| Payout {
                sidechain: c.spec.name.clone(),
                kind: PayoutKind::Certificate,
                epoch: Some(cert.epoch_id),
                receiver: self.label(&bt.receiver),
                amount: bt.amount,
            }));
        }
        for hash in self.mc.active_chain() {
            let block = self.mc.block(hash).expect("active block stored");
            out.extend(block.body.csws.iter().filter(|r| r.ledger_id == c.ledger).map(|r| Payout {
                sidechain: c.spec.name.clone(),
                kind: PayoutKind::Csw,
                epoch: None,
                receiver: self.label(&r.receiver),
                amount: r.amount,
            }));
        }
        out
    }
}
