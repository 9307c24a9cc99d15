//! Run reports. Every map is ordered so the JSON form is byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sidechain_core::crypto::{hash_bytes, Digest};
use sidechain_core::mainchain::SidechainStatus;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub ticks: u64,
    /// Set when an invariant violation or internal error stopped the run.
    pub aborted: Option<String>,
    pub blocks: Vec<BlockSummary>,
    pub sidechains: BTreeMap<String, SidechainReport>,
    pub events: Vec<EventRecord>,
    pub invariants: BTreeMap<String, InvariantResult>,
    pub final_state: FinalState,
    /// Hash of the report's JSON with this field empty.
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub height: u64,
    pub hash: Digest,
    pub parent: Digest,
    pub tick: u64,
    /// On the final active chain.
    pub active: bool,
    pub transactions: u64,
    pub forward_transfers: u64,
    pub certificates: u64,
    pub btrs: u64,
    pub csws: u64,
    /// Sidechain balances and status in the state after this block.
    pub ledgers: BTreeMap<String, LedgerSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub balance: u64,
    pub status: SidechainStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancePoint {
    pub height: u64,
    pub balance: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertRecord {
    pub epoch: u64,
    pub quality: u64,
    pub bt_total: u64,
    pub block_height: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidechainReport {
    pub ledger_id: Digest,
    pub registered: bool,
    pub status: Option<SidechainStatus>,
    pub ceased_at: Option<u64>,
    /// Balance on the mainchain tip.
    pub balance: u64,
    /// Tip balance after every mainchain block, in arrival order.
    pub balance_trajectory: Vec<BalancePoint>,
    pub certificates: Vec<CertRecord>,
    pub sc_height: u64,
    pub sc_tip: Digest,
    pub sc_state_digest: Digest,
    pub sc_utxo_total: u64,
    pub blocks_forged: u64,
    /// Forged blocks no longer on the sidechain's chain.
    pub blocks_reverted: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Scripted,
    Traffic,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    /// Included in a block that later left the active chain.
    Orphaned,
    /// Still waiting for a block when the run ended.
    Pending,
    /// Never fired because the run ended first.
    NotReached,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: u64,
    pub tick: u64,
    pub kind: String,
    pub source: Source,
    pub sidechain: Option<String>,
    pub outcome: Outcome,
    /// Machine-readable reason for rejections.
    pub reason: Option<String>,
    pub detail: Option<String>,
    /// Block that included the event's item, if any.
    pub block: Option<Digest>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub checks: u64,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoutKind {
    Certificate,
    Csw,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payout {
    pub sidechain: String,
    pub kind: PayoutKind,
    pub epoch: Option<u64>,
    pub receiver: String,
    pub amount: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub mc_height: u64,
    pub mc_tip: Digest,
    /// Mainchain balance per actor.
    pub balances: BTreeMap<String, u64>,
    pub payouts: Vec<Payout>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.aborted.is_none() && self.invariants.values().all(|r| r.violations.is_empty())
    }

    pub fn compute_digest(&self) -> String {
        let mut body = self.clone();
        body.digest.clear();
        let bytes = serde_json::to_vec(&body).expect("report serializes");
        hash_bytes(&bytes).to_hex()
    }

    pub fn seal(&mut self) {
        self.digest = self.compute_digest();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn events_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a EventRecord> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} (seed {})", self.scenario, self.seed);
        let _ = writeln!(
            out,
            "ticks {}  mainchain height {}  tip {}",
            self.ticks,
            self.final_state.mc_height,
            self.final_state.mc_tip.short()
        );
        let active = self.blocks.iter().filter(|b| b.active).count();
        let _ = writeln!(out, "blocks mined {} ({} orphaned)", self.blocks.len(), self.blocks.len() - active);
        for (name, sc) in &self.sidechains {
            let status = match sc.status {
                Some(SidechainStatus::Active) => "active".to_string(),
                Some(SidechainStatus::Ceased) => format!("ceased at {}", sc.ceased_at.unwrap_or_default()),
                None => "unregistered".to_string(),
            };
            let _ = writeln!(
                out,
                "sidechain {name}: {status}, balance {}, certificates {}, sc height {}, utxo total {}, forged {} (reverted {})",
                sc.balance,
                sc.certificates.len(),
                sc.sc_height,
                sc.sc_utxo_total,
                sc.blocks_forged,
                sc.blocks_reverted,
            );
        }
        let mut tally: BTreeMap<(&str, String), u64> = BTreeMap::new();
        for e in &self.events {
            let outcome = match (e.outcome, &e.reason) {
                (Outcome::Rejected, Some(r)) => format!("rejected:{r}"),
                (o, _) => serde_json::to_value(o)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
            };
            *tally.entry((e.kind.as_str(), outcome)).or_default() += 1;
        }
        for ((kind, outcome), n) in &tally {
            let _ = writeln!(out, "  {kind:<18} {outcome:<32} {n}");
        }
        for p in &self.final_state.payouts {
            let kind = match p.kind {
                PayoutKind::Certificate => "certificate",
                PayoutKind::Csw => "csw",
            };
            let _ = writeln!(out, "payout {} {kind} {} -> {}", p.sidechain, p.amount, p.receiver);
        }
        for (name, r) in &self.invariants {
            let verdict = if r.violations.is_empty() { "ok" } else { "VIOLATED" };
            let _ = writeln!(out, "invariant {name:<20} {verdict} ({} checks)", r.checks);
            for v in &r.violations {
                let _ = writeln!(out, "    {v}");
            }
        }
        if let Some(a) = &self.aborted {
            let _ = writeln!(out, "aborted: {a}");
        }
        let _ = writeln!(out, "digest {}", self.digest);
        out
    }
}
