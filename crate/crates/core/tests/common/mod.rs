//! Block-by-block driver shared by the integration tests: one mainchain,
//! one sidechain node, a funded miner and a fixed set of forgers.

#![allow(dead_code)]

use std::sync::Arc;

use sidechain_core::crypto::{hash_bytes, Address, Keypair, Utxo};
use sidechain_core::latus::{
    proof_system, receiver_metadata, Forged, LatusNode, LatusParams, McPointer, ScTransaction,
};
use sidechain_core::mainchain::{
    ForwardTransfer, McChain, McItem, McTransaction, RejectReason, SidechainEntry, SidechainStatus, TxOut,
};

pub fn key(name: &str) -> Keypair {
    Keypair::from_seed(&hash_bytes(name.as_bytes()))
}

pub fn params(tag: &str, start_block: u64, epoch_len: u64, submit_len: u64, mst_depth: u8) -> LatusParams {
    LatusParams {
        ledger_id: hash_bytes(tag.as_bytes()),
        start_block,
        epoch_len,
        submit_len,
        mst_depth,
        slots_per_epoch: 6,
        genesis_stakes: vec![(key("forger").address(), 100)],
    }
}

pub struct World {
    pub mc: McChain,
    pub node: Option<LatusNode>,
    pub params: LatusParams,
    pub miner: Keypair,
    /// Keys tried in turn for each slot.
    pub forgers: Vec<Keypair>,
    pub pending: Vec<McItem>,
    pub pending_sc: Vec<ScTransaction>,
    pub slot: u64,
    pub certify: bool,
}

impl World {
    /// Registers the sidechain in block 1 with both withdrawal kinds enabled.
    pub fn new(params: LatusParams) -> Self {
        Self::with_config(params, true, true)
    }

    pub fn with_config(params: LatusParams, btr: bool, csw: bool) -> Self {
        let miner = key("miner");
        let mc = McChain::new(
            Arc::new(proof_system()),
            vec![TxOut {
                addr: miner.address(),
                amount: 1_000_000,
            }],
        );
        let mut w = World {
            mc,
            node: None,
            params: params.clone(),
            miner,
            forgers: vec![key("forger"), key("alice"), key("bob")],
            pending: vec![McItem::CreateSidechain(params.sidechain_config(btr, csw))],
            pending_sc: vec![],
            slot: 0,
            certify: true,
        };
        let rejected = w.mine();
        assert!(rejected.is_empty(), "{rejected:?}");
        w
    }

    pub fn node(&self) -> &LatusNode {
        self.node.as_ref().expect("sidechain started")
    }

    pub fn node_mut(&mut self) -> &mut LatusNode {
        self.node.as_mut().expect("sidechain started")
    }

    pub fn sidechain(&self) -> SidechainEntry {
        self.mc.tip_state().sidechain(&self.params.ledger_id).expect("registered").clone()
    }

    pub fn status(&self) -> SidechainStatus {
        self.sidechain().status
    }

    pub fn certified(&self, epoch: u64) -> bool {
        self.sidechain().certs.contains_key(&epoch)
    }

    /// Mines one mainchain block from the pending items. Starts the
    /// sidechain node right before its start block.
    pub fn mine(&mut self) -> Vec<(usize, RejectReason)> {
        let items = std::mem::take(&mut self.pending);
        let asm = self
            .mc
            .assemble_block(&self.mc.tip(), &items, vec![], self.mc.height())
            .expect("tip is known");
        self.mc.extend_chain(asm.block).expect("assembled block is valid");
        if self.mc.height() + 1 == self.params.start_block {
            let genesis = McPointer {
                hash: self.mc.tip(),
                height: self.mc.height(),
            };
            let node = LatusNode::new(self.params.clone(), self.mc.proofs().clone(), genesis).expect("valid params");
            self.node = Some(node);
        }
        asm.rejected
    }

    /// Forges one sidechain block with the pending transactions at the
    /// first slot some forger leads.
    pub fn forge(&mut self) -> Forged {
        let txs = std::mem::take(&mut self.pending_sc);
        let node = self.node.as_mut().expect("sidechain started");
        loop {
            self.slot += 1;
            if let Some(f) = self.forgers.iter().find_map(|k| node.forge(&self.mc, self.slot, k, &txs).ok()) {
                return f;
            }
        }
    }

    /// One mainchain block, then one sidechain block once the sidechain
    /// runs, then the certificate if one is due.
    pub fn tick(&mut self) -> Vec<(usize, RejectReason)> {
        let rejected = self.mine();
        if self.node.is_some() && self.mc.height() >= self.params.start_block {
            let forged = self.forge();
            assert!(forged.dropped.is_empty(), "{:?}", forged.dropped);
            if self.certify {
                self.queue_cert();
            }
        }
        rejected
    }

    pub fn tick_until(&mut self, limit: usize, done: impl Fn(&World) -> bool) {
        for _ in 0..limit {
            if done(self) {
                return;
            }
            let rejected = self.tick();
            assert!(rejected.is_empty(), "{rejected:?}");
        }
        assert!(done(self), "condition not reached in {limit} blocks");
    }

    /// Queues the certificate for the latest closed epoch if the next block
    /// is inside its submission window and none was accepted yet.
    pub fn queue_cert(&mut self) {
        let Some(epoch) = self.node().last_closed_epoch() else { return };
        let sc = self.sidechain();
        let in_window = matches!(
            sc.config.epoch_of(self.mc.height() + 1),
            Ok((e, i)) if e == epoch + 1 && i < sc.config.submit_len
        );
        if sc.status != SidechainStatus::Active || sc.certs.contains_key(&epoch) || !in_window {
            return;
        }
        let cert = self.node_mut().generate_wcert(epoch).expect("closed epoch");
        self.pending.push(McItem::Certificate(cert));
    }

    /// Queues one mainchain transaction depositing to each `(receiver,
    /// amount)`, paid from the miner's outputs.
    pub fn deposit(&mut self, to: &[(Address, u64)]) {
        let state = self.mc.tip_state();
        let outputs = state.outputs_of(&self.miner.address());
        let total: u64 = outputs.iter().map(|(_, e)| e.out.amount).sum();
        let sent: u64 = to.iter().map(|(_, a)| a).sum();
        let inputs: Vec<_> = outputs.iter().map(|(p, _)| (*p, &self.miner)).collect();
        let fts = to
            .iter()
            .map(|(addr, amount)| ForwardTransfer {
                ledger_id: self.params.ledger_id,
                receiver_metadata: receiver_metadata(addr, &self.miner.address()),
                amount: *amount,
            })
            .collect();
        let change = TxOut {
            addr: self.miner.address(),
            amount: total - sent,
        };
        let tx = McTransaction::signed(&inputs, vec![change], fts);
        self.pending.push(McItem::Transaction(tx));
    }

    pub fn sc_coins(&self, addr: &Address) -> Vec<Utxo> {
        self.node().utxos_of(addr)
    }

    pub fn mc_balance(&self, addr: &Address) -> u64 {
        self.mc.tip_state().outputs_of(addr).iter().map(|(_, e)| e.out.amount).sum()
    }
}
