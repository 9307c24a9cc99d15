//! Per-step invariant checks. The safeguard and nullifier checks compare the
//! ledger against a tally rebuilt from block bodies alone.

use std::collections::{BTreeMap, BTreeSet};

use sidechain_core::crypto::Digest;
use sidechain_core::mainchain::{bt_list_total, LedgerId, LedgerState, McBlock, SidechainStatus};

use crate::report::InvariantResult;

pub const SAFEGUARD: &str = "safeguard_balance";
pub const NULLIFIERS: &str = "nullifier_single_use";
pub const CONSERVATION: &str = "value_conservation";
pub const BACKING: &str = "sidechain_backing";

/// Deposits and withdrawals of one ledger along a branch.
#[derive(Clone, Debug, Default)]
pub struct LedgerTally {
    pub deposits: u128,
    /// Total paid by the final certificate of each epoch.
    pub cert_totals: BTreeMap<u64, u64>,
    pub csw_total: u128,
    pub nullifiers: BTreeSet<Digest>,
}

impl LedgerTally {
    pub fn expected_balance(&self) -> i128 {
        let payouts: u128 = self.cert_totals.values().map(|v| *v as u128).sum();
        self.deposits as i128 - payouts as i128 - self.csw_total as i128
    }
}

#[derive(Clone, Debug, Default)]
pub struct ChainTally {
    pub ledgers: BTreeMap<LedgerId, LedgerTally>,
}

impl ChainTally {
    /// Tally after `block`, plus the nullifiers it uses twice.
    pub fn extend(&self, block: &McBlock) -> (ChainTally, Vec<(LedgerId, Digest)>) {
        let mut next = self.clone();
        let body = &block.body;
        for tx in &body.transactions {
            for ft in &tx.forward_transfers {
                next.ledgers.entry(ft.ledger_id).or_default().deposits += ft.amount as u128;
            }
        }
        for cert in &body.certificates {
            let total = bt_list_total(&cert.bt_list).unwrap_or(u64::MAX);
            next.ledgers
                .entry(cert.ledger_id)
                .or_default()
                .cert_totals
                .insert(cert.epoch_id, total);
        }
        let mut reused = Vec::new();
        for req in body.btrs.iter().chain(&body.csws) {
            let t = next.ledgers.entry(req.ledger_id).or_default();
            if !t.nullifiers.insert(req.nullifier) {
                reused.push((req.ledger_id, req.nullifier));
            }
        }
        for csw in &body.csws {
            next.ledgers.entry(csw.ledger_id).or_default().csw_total += csw.amount as u128;
        }
        (next, reused)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Invariants {
    pub results: BTreeMap<String, InvariantResult>,
}

impl Invariants {
    pub fn new() -> Self {
        let mut results = BTreeMap::new();
        for name in [SAFEGUARD, NULLIFIERS, CONSERVATION, BACKING] {
            results.insert(name.to_string(), InvariantResult::default());
        }
        Invariants { results }
    }

    pub fn check(&mut self, name: &str, ok: bool, describe: impl FnOnce() -> String) -> bool {
        let r = self.results.entry(name.to_string()).or_default();
        r.checks += 1;
        if !ok {
            r.violations.push(describe());
        }
        ok
    }

    pub fn violated(&self) -> Option<&str> {
        self.results
            .iter()
            .find(|(_, r)| !r.violations.is_empty())
            .map(|(n, _)| n.as_str())
    }

    /// Mainchain-side checks on the state after one block.
    pub fn check_block(
        &mut self,
        state: &LedgerState,
        tally: &ChainTally,
        reused: &[(LedgerId, Digest)],
        premine: u128,
        label: &dyn Fn(&LedgerId) -> String,
    ) {
        let h = state.height;
        for (id, sc) in &state.sidechains {
            let expected = tally.ledgers.get(id).map_or(0, LedgerTally::expected_balance);
            self.check(SAFEGUARD, expected >= 0 && expected == sc.balance as i128, || {
                format!("height {h}: {} balance {} but deposits minus withdrawals give {expected}", label(id), sc.balance)
            });
        }
        self.check(NULLIFIERS, reused.is_empty(), || {
            let list: Vec<_> = reused.iter().map(|(l, n)| format!("{}:{}", label(l), n.short())).collect();
            format!("height {h}: nullifiers used twice: {}", list.join(", "))
        });
        let held: u128 = state.utxos.values().map(|e| e.out.amount as u128).sum();
        let locked: u128 = state.sidechains.values().map(|s| s.balance as u128).sum();
        self.check(CONSERVATION, held + locked == premine, || {
            format!("height {h}: outputs {held} plus sidechain balances {locked} differ from premine {premine}")
        });
    }

    /// The sidechain's coins never exceed what the mainchain holds for it
    /// while it is active.
    pub fn check_backing(&mut self, name: &str, state: &LedgerState, ledger: &LedgerId, sc_total: u128) {
        let Some(sc) = state.sidechains.get(ledger) else { return };
        if sc.status != SidechainStatus::Active {
            return;
        }
        self.check(BACKING, sc_total <= sc.balance as u128, || {
            format!(
                "height {}: sidechain {name} holds {sc_total} but the mainchain balance is {}",
                state.height, sc.balance
            )
        });
    }
}
