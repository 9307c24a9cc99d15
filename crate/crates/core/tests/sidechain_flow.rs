//! Mainchain and one sidechain driven block by block through deposits,
//! payments, certificates, a withdrawal request, ceasing and a ceased
//! withdrawal.

use std::sync::Arc;

use sidechain_core::crypto::{hash_bytes, Address, Keypair, Utxo};
use sidechain_core::latus::{
    proof_system, receiver_metadata, LatusNode, LatusParams, McPointer, PaymentTx, RequestKind, ScTransaction,
};
use sidechain_core::mainchain::{
    ForwardTransfer, McChain, McItem, McTransaction, RejectReason, SidechainStatus, TxOut,
};

struct World {
    mc: McChain,
    node: Option<LatusNode>,
    params: LatusParams,
    miner: Keypair,
    stakeholders: Vec<Keypair>,
    pending: Vec<McItem>,
    pending_sc: Vec<ScTransaction>,
    slot: u64,
    certify: bool,
}

impl World {
    fn new() -> Self {
        let miner = Keypair::from_seed(&hash_bytes(b"miner"));
        let forger = Keypair::from_seed(&hash_bytes(b"forger"));
        let params = LatusParams {
            ledger_id: hash_bytes(b"sc-1"),
            start_block: 4,
            epoch_len: 4,
            submit_len: 2,
            mst_depth: 10,
            slots_per_epoch: 6,
            genesis_stakes: vec![(forger.address(), 100)],
        };
        let mc = McChain::new(
            Arc::new(proof_system()),
            vec![TxOut {
                addr: miner.address(),
                amount: 1_000,
            }],
        );
        World {
            mc,
            node: None,
            params,
            miner,
            stakeholders: [b"forger" as &[u8], b"alice", b"bob"]
                .iter()
                .map(|s| Keypair::from_seed(&hash_bytes(s)))
                .collect(),
            pending: Vec::new(),
            pending_sc: Vec::new(),
            slot: 0,
            certify: true,
        }
    }

    fn node(&mut self) -> &mut LatusNode {
        self.node.as_mut().expect("sidechain started")
    }

    /// Mines one mainchain block, then forges one sidechain block.
    fn tick(&mut self) -> Vec<(usize, RejectReason)> {
        let items = std::mem::take(&mut self.pending);
        let assembled = self
            .mc
            .assemble_block(&self.mc.tip(), &items, vec![], self.mc.height())
            .unwrap();
        self.mc.extend_chain(assembled.block).unwrap();
        if self.mc.height() + 1 == self.params.start_block {
            let genesis_mc = McPointer {
                hash: self.mc.tip(),
                height: self.mc.height(),
            };
            let proofs = self.mc.proofs().clone();
            self.node = Some(LatusNode::new(self.params.clone(), proofs, genesis_mc).unwrap());
        }
        if self.node.is_some() && self.mc.height() >= self.params.start_block {
            let txs = std::mem::take(&mut self.pending_sc);
            let node = self.node.as_mut().unwrap();
            // Skip slots until one of the stakeholders leads.
            let forged = loop {
                self.slot += 1;
                let leader = self
                    .stakeholders
                    .iter()
                    .find_map(|k| node.forge(&self.mc, self.slot, k, &txs).ok());
                if let Some(f) = leader {
                    break f;
                }
            };
            assert!(forged.dropped.is_empty(), "{:?}", forged.dropped);
            if self.certify {
                self.queue_cert();
            }
        }
        assembled.rejected
    }

    fn queue_cert(&mut self) {
        let ledger = self.params.ledger_id;
        let Some(epoch) = self.node().last_closed_epoch() else { return };
        let sc = self.mc.tip_state().sidechain(&ledger).unwrap();
        if sc.certs.contains_key(&epoch) || sc.status != SidechainStatus::Active {
            return;
        }
        let cert = self.node().generate_wcert(epoch).unwrap();
        self.pending.push(McItem::Certificate(cert));
    }

    fn sc_utxos(&self, addr: &Address) -> Vec<Utxo> {
        self.node.as_ref().unwrap().utxos_of(addr)
    }
}

#[test]
fn full_lifecycle() {
    let mut w = World::new();
    let alice = Keypair::from_seed(&hash_bytes(b"alice"));
    let bob = Keypair::from_seed(&hash_bytes(b"bob"));
    let ledger = w.params.ledger_id;

    w.pending.push(McItem::CreateSidechain(w.params.sidechain_config(true, true)));
    assert!(w.tick().is_empty());
    // Deposits are accepted from the start height on.
    while w.mc.height() + 1 < w.params.start_block {
        w.tick();
    }

    let (outpoint, entry) = w.mc.tip_state().outputs_of(&w.miner.address())[0];
    let fts = vec![
        ForwardTransfer {
            ledger_id: ledger,
            receiver_metadata: receiver_metadata(&alice.address(), &w.miner.address()),
            amount: 300,
        },
        ForwardTransfer {
            ledger_id: ledger,
            receiver_metadata: vec![1, 2, 3],
            amount: 5,
        },
    ];
    let change = TxOut {
        addr: w.miner.address(),
        amount: entry.out.amount - 305,
    };
    w.pending.push(McItem::Transaction(McTransaction::signed(
        &[(outpoint, &w.miner)],
        vec![change],
        fts,
    )));
    let r = w.tick();
    assert!(r.is_empty(), "{r:?}");
    assert_eq!(w.mc.tip_state().sidechain(&ledger).unwrap().balance, 305);

    let coins = w.sc_utxos(&alice.address());
    assert_eq!(coins.len(), 1);
    assert_eq!(coins[0].amount, 300);

    let pay = PaymentTx::signed(
        &[(coins[0], &alice)],
        vec![
            TxOut { addr: bob.address(), amount: 120 },
            TxOut { addr: alice.address(), amount: 180 },
        ],
    );
    w.pending_sc.push(ScTransaction::Payment(pay));
    for _ in 0..6 {
        assert!(w.tick().is_empty());
    }
    let sc = w.mc.tip_state().sidechain(&ledger).unwrap();
    assert!(sc.certs.contains_key(&0), "epoch 0 certified");
    assert_eq!(w.sc_utxos(&bob.address())[0].amount, 120);

    // Bob withdraws through the mainchain once his coin is certified.
    while !w.mc.tip_state().sidechain(&ledger).unwrap().certs.contains_key(&1) {
        assert!(w.tick().is_empty());
    }
    let bob_coin = w.sc_utxos(&bob.address())[0];
    let receiver = Address(hash_bytes(b"bob-mc"));
    let btr = w
        .node
        .as_ref()
        .unwrap()
        .build_request(&w.mc, RequestKind::Btr, &bob_coin, &bob, receiver, None)
        .unwrap();
    w.pending.push(McItem::Btr(btr.clone()));
    assert!(w.tick().is_empty());
    assert!(w.sc_utxos(&bob.address()).is_empty(), "request synced and coin removed");
    w.pending.push(McItem::Btr(btr));
    assert_eq!(w.tick(), vec![(0, RejectReason::NullifierUsed)]);

    // The backward transfer is paid once its epoch is certified and the
    // window closes.
    for _ in 0..12 {
        w.tick();
    }
    let paid: u64 = w.mc.tip_state().outputs_of(&receiver).iter().map(|(_, e)| e.out.amount).sum();
    assert_eq!(paid, 120);
    assert_eq!(w.mc.tip_state().sidechain(&ledger).unwrap().balance, 305 - 120 - 5, "malformed deposit refunded");

    // Stop certifying: the sidechain ceases and Alice claims directly.
    w.certify = false;
    while w.mc.tip_state().sidechain(&ledger).unwrap().status == SidechainStatus::Active {
        w.tick();
    }
    let alice_coin = w.sc_utxos(&alice.address())[0];
    let alice_mc = Address(hash_bytes(b"alice-mc"));
    let last_certified = w.mc.tip_state().sidechain(&ledger).unwrap().last_cert().unwrap().epoch_id;
    let csw = w
        .node
        .as_ref()
        .unwrap()
        .build_request(&w.mc, RequestKind::Csw, &alice_coin, &alice, alice_mc, Some(last_certified))
        .unwrap();
    let mut forged = csw.clone();
    forged.amount += 1;
    w.pending.push(McItem::Csw(forged));
    w.pending.push(McItem::Csw(csw.clone()));
    w.pending.push(McItem::Csw(csw));
    let rejected = w.tick();
    assert_eq!(rejected.len(), 2);
    assert_eq!(rejected[0].0, 0);
    assert_eq!(rejected[1], (2, RejectReason::NullifierUsed));
    let paid: u64 = w.mc.tip_state().outputs_of(&alice_mc).iter().map(|(_, e)| e.out.amount).sum();
    assert_eq!(paid, 180);
    let sc = w.mc.tip_state().sidechain(&ledger).unwrap();
    assert_eq!(sc.balance, 0);
}
