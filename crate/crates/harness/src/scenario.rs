//! Scenario files: TOML with a version header, a mainchain section, one
//! `[[sidechain]]` table per sidechain and a list of `[[event]]`s keyed by
//! logical tick.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sidechain_core::crypto::{hash_bytes, Address, Keypair};
use sidechain_core::latus::LatusParams;
use sidechain_core::mainchain::LedgerId;
use thiserror::Error;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported scenario version {0}, expected {SCENARIO_VERSION}")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub mainchain: MainchainSpec,
    #[serde(default, rename = "sidechain")]
    pub sidechains: Vec<SidechainSpec>,
    #[serde(default, rename = "event")]
    pub events: Vec<Event>,
    #[serde(default)]
    pub traffic: Option<Traffic>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainchainSpec {
    /// Ticks per mainchain block; a block is mined on every multiple.
    #[serde(default = "one")]
    pub ticks_per_block: u64,
    /// The run ends once the mainchain reaches this height.
    pub stop_at_block: u64,
    #[serde(default)]
    pub premine: Vec<Allocation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub actor: String,
    pub amount: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidechainSpec {
    pub name: String,
    /// Tick at which the creation is submitted.
    #[serde(default = "one")]
    pub register_at: u64,
    pub start_block: u64,
    pub epoch_len: u64,
    pub submit_len: u64,
    #[serde(default = "default_depth")]
    pub mst_depth: u8,
    #[serde(default = "default_slots")]
    pub slots_per_epoch: u64,
    pub forgers: Vec<Allocation>,
    #[serde(default = "yes")]
    pub btr: bool,
    #[serde(default = "yes")]
    pub csw: bool,
    #[serde(default = "yes")]
    pub auto_certify: bool,
}

impl SidechainSpec {
    pub fn ledger_id(&self) -> LedgerId {
        hash_bytes(format!("ledger/{}", self.name).as_bytes())
    }

    pub fn params(&self) -> LatusParams {
        LatusParams {
            ledger_id: self.ledger_id(),
            start_block: self.start_block,
            epoch_len: self.epoch_len,
            submit_len: self.submit_len,
            mst_depth: self.mst_depth,
            slots_per_epoch: self.slots_per_epoch,
            genesis_stakes: self.forgers.iter().map(|f| (actor_address(&f.actor), f.amount)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Tick at which the event fires, before that tick's block is mined.
    pub at: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    McTransfer {
        from: String,
        to: String,
        amount: u64,
    },
    ForwardTransfer {
        from: String,
        sidechain: String,
        to: String,
        amount: u64,
        /// Sends metadata of the wrong length, which the sidechain refunds.
        #[serde(default)]
        malformed: bool,
    },
    Payment {
        sidechain: String,
        from: String,
        to: String,
        amount: u64,
    },
    BackwardTransfer {
        sidechain: String,
        from: String,
        to: String,
        amount: u64,
    },
    Btr {
        sidechain: String,
        from: String,
        to: String,
        #[serde(default)]
        amount: Option<u64>,
        #[serde(default)]
        anchor_epoch: Option<u64>,
    },
    Csw {
        sidechain: String,
        from: String,
        to: String,
        #[serde(default)]
        amount: Option<u64>,
    },
    /// Resubmits the most recent withdrawal request.
    Replay {
        #[serde(default = "one")]
        count: u64,
    },
    /// Submits the certificate of the last closed epoch.
    Certify {
        sidechain: String,
    },
    WithholdCerts {
        sidechain: String,
    },
    ResumeCerts {
        sidechain: String,
    },
    MaliciousCert {
        sidechain: String,
        variant: CertVariant,
    },
    /// Mines `depth + 1` empty blocks on the ancestor `depth` blocks below
    /// the tip.
    Fork {
        depth: u64,
    },
    SkipSlots {
        sidechain: String,
        count: u64,
    },
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::McTransfer { .. } => "mc_transfer",
            Action::ForwardTransfer { .. } => "forward_transfer",
            Action::Payment { .. } => "payment",
            Action::BackwardTransfer { .. } => "backward_transfer",
            Action::Btr { .. } => "btr",
            Action::Csw { .. } => "csw",
            Action::Replay { .. } => "replay",
            Action::Certify { .. } => "certify",
            Action::WithholdCerts { .. } => "withhold_certs",
            Action::ResumeCerts { .. } => "resume_certs",
            Action::MaliciousCert { .. } => "malicious_cert",
            Action::Fork { .. } => "fork",
            Action::SkipSlots { .. } => "skip_slots",
        }
    }

    pub fn sidechain(&self) -> Option<&str> {
        match self {
            Action::ForwardTransfer { sidechain, .. }
            | Action::Payment { sidechain, .. }
            | Action::BackwardTransfer { sidechain, .. }
            | Action::Btr { sidechain, .. }
            | Action::Csw { sidechain, .. }
            | Action::Certify { sidechain }
            | Action::WithholdCerts { sidechain }
            | Action::ResumeCerts { sidechain }
            | Action::MaliciousCert { sidechain, .. }
            | Action::SkipSlots { sidechain, .. } => Some(sidechain),
            Action::McTransfer { .. } | Action::Replay { .. } | Action::Fork { .. } => None,
        }
    }

    fn actors(&self) -> Vec<&str> {
        match self {
            Action::McTransfer { from, to, .. }
            | Action::ForwardTransfer { from, to, .. }
            | Action::Payment { from, to, .. }
            | Action::BackwardTransfer { from, to, .. }
            | Action::Btr { from, to, .. }
            | Action::Csw { from, to, .. } => vec![from, to],
            _ => vec![],
        }
    }
}

/// Ways to tamper with a certificate. Each targets one acceptance rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertVariant {
    /// Honest certificate addressed to an unregistered ledger.
    WrongLedger,
    /// Certificate of the epoch before the last closed one.
    StaleEpoch,
    /// The last accepted certificate, submitted again.
    Resubmit,
    /// The last accepted certificate with its quality lowered by one.
    LowQuality,
    /// Honest certificate with one backward transfer redirected or added.
    ForgedBtList,
    /// Honest certificate with one proof byte flipped.
    BadProof,
    /// Honest certificate plus a transfer exceeding the sidechain balance.
    Overdraw,
}

/// Random background load, drawn from the run's seeded generator each tick.
/// Rates are per-tick probabilities; sidechain rates apply per sidechain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Traffic {
    pub actors: Vec<String>,
    #[serde(default)]
    pub forward_transfer: f64,
    #[serde(default)]
    pub malformed_share: f64,
    #[serde(default)]
    pub payment: f64,
    #[serde(default)]
    pub backward_transfer: f64,
    #[serde(default)]
    pub btr: f64,
    #[serde(default)]
    pub csw: f64,
    #[serde(default)]
    pub replay: f64,
    #[serde(default)]
    pub fork: f64,
    #[serde(default = "one")]
    pub max_fork_depth: u64,
    /// Chance per tick that a sidechain stops certifying for good.
    #[serde(default)]
    pub withhold: f64,
    #[serde(default = "default_max_amount")]
    pub max_amount: u64,
    /// No traffic is generated before this tick.
    #[serde(default)]
    pub from_tick: u64,
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

fn default_depth() -> u8 {
    16
}

fn default_slots() -> u64 {
    8
}

fn default_max_amount() -> u64 {
    50
}

pub fn actor_key(name: &str) -> Keypair {
    Keypair::from_seed(&hash_bytes(format!("actor/{name}").as_bytes()))
}

pub fn actor_address(name: &str) -> Address {
    actor_key(name).address()
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn sidechain(&self, name: &str) -> Option<&SidechainSpec> {
        self.sidechains.iter().find(|s| s.name == name)
    }

    /// Every actor name mentioned anywhere, sorted.
    pub fn actors(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        out.extend(self.mainchain.premine.iter().map(|a| a.actor.clone()));
        for sc in &self.sidechains {
            out.extend(sc.forgers.iter().map(|f| f.actor.clone()));
        }
        for e in &self.events {
            out.extend(e.action.actors().into_iter().map(String::from));
        }
        if let Some(t) = &self.traffic {
            out.extend(t.actors.iter().cloned());
        }
        out
    }

    pub fn premine_total(&self) -> u128 {
        self.mainchain.premine.iter().map(|a| a.amount as u128).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(self.version));
        }
        let mc = &self.mainchain;
        if mc.ticks_per_block == 0 {
            return invalid("ticks_per_block must be positive".into());
        }
        if mc.stop_at_block == 0 {
            return invalid("stop_at_block must be positive".into());
        }
        if self.premine_total() > u64::MAX as u128 {
            return invalid("premine overflows".into());
        }
        if mc.premine.iter().any(|a| a.amount == 0) {
            return invalid("premine amounts must be positive".into());
        }
        let mut names = BTreeMap::new();
        for sc in &self.sidechains {
            if names.insert(sc.name.as_str(), ()).is_some() {
                return invalid(format!("duplicate sidechain {}", sc.name));
            }
            if let Err(e) = sc.params().validate() {
                return invalid(format!("sidechain {}: {}", sc.name, e.0));
            }
            if sc.register_at == 0 {
                return invalid(format!("sidechain {}: ticks start at 1", sc.name));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.at == 0 {
                return invalid(format!("event {i}: ticks start at 1"));
            }
            if let Some(name) = e.action.sidechain() {
                if !names.contains_key(name) {
                    return invalid(format!("event {i}: unknown sidechain {name}"));
                }
            }
            match &e.action {
                Action::Fork { depth: 0 } => return invalid(format!("event {i}: fork depth must be positive")),
                Action::McTransfer { amount: 0, .. }
                | Action::ForwardTransfer { amount: 0, .. }
                | Action::Payment { amount: 0, .. }
                | Action::BackwardTransfer { amount: 0, .. } => {
                    return invalid(format!("event {i}: amount must be positive"))
                }
                _ => {}
            }
        }
        if let Some(t) = &self.traffic {
            if t.actors.is_empty() {
                return invalid("traffic needs at least one actor".into());
            }
            let rates = [
                t.forward_transfer,
                t.malformed_share,
                t.payment,
                t.backward_transfer,
                t.btr,
                t.csw,
                t.replay,
                t.fork,
                t.withhold,
            ];
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return invalid("traffic rates must lie in [0, 1]".into());
            }
            if t.max_amount == 0 || t.max_fork_depth == 0 {
                return invalid("traffic max_amount and max_fork_depth must be positive".into());
            }
        }
        Ok(())
    }
}
