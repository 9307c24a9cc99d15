//! Snapshots: the scenario, every block in arrival order and the report,
//! stored as versioned JSON. `replay` reruns the scenario; `verify` rebuilds
//! both chains from the stored blocks with a fresh proof system.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sidechain_core::latus::{proof_system, LatusNode, McPointer, ScBlock};
use sidechain_core::mainchain::{McBlock, McChain, TxOut};
use thiserror::Error;

use crate::report::RunReport;
use crate::scenario::{actor_address, Scenario, ScenarioError};
use crate::sim::run;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("cannot read snapshot: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported snapshot version {0}, expected {SNAPSHOT_VERSION}")]
    Version(u32),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    /// Mainchain block each sidechain node started from.
    pub sidechain_genesis: BTreeMap<String, McPointer>,
    pub mc_blocks: Vec<McBlock>,
    pub sc_blocks: BTreeMap<String, Vec<ScBlock>>,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayOutcome {
    pub report: RunReport,
    pub matches: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verification {
    pub mc_blocks: usize,
    pub sc_blocks: usize,
    pub failures: Vec<String>,
}

impl Verification {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

impl Snapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn parse(text: &str) -> Result<Self, SnapshotError> {
        let s: Snapshot = serde_json::from_str(text)?;
        if s.version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version(s.version));
        }
        s.scenario.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SnapshotError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Reruns the scenario with the stored seed and compares reports.
    pub fn replay(&self) -> Result<ReplayOutcome, SnapshotError> {
        let out = run(&self.scenario, Some(self.seed))?;
        let matches = out.report == self.report;
        Ok(ReplayOutcome {
            report: out.report,
            matches,
        })
    }

    /// Re-validates every stored block, including all proofs they carry,
    /// and checks the rebuilt tips against the report.
    pub fn verify(&self) -> Verification {
        let mut v = Verification::default();
        if self.report.compute_digest() != self.report.digest {
            v.failures.push("report digest does not match its contents".into());
        }
        let premine = self
            .scenario
            .mainchain
            .premine
            .iter()
            .map(|a| TxOut {
                addr: actor_address(&a.actor),
                amount: a.amount,
            })
            .collect();
        let mut mc = McChain::new(Arc::new(proof_system()), premine);
        for (i, block) in self.mc_blocks.iter().enumerate() {
            match mc.extend_chain(block.clone()) {
                Ok(_) => v.mc_blocks += 1,
                Err(e) => {
                    v.failures.push(format!("mainchain block {i} (height {}): {e}", block.header.height));
                    return v;
                }
            }
        }
        let fin = &self.report.final_state;
        if mc.tip() != fin.mc_tip || mc.height() != fin.mc_height {
            v.failures.push(format!(
                "mainchain tip {} at {} differs from reported {} at {}",
                mc.tip().short(),
                mc.height(),
                fin.mc_tip.short(),
                fin.mc_height
            ));
        }
        for spec in &self.scenario.sidechains {
            let blocks = self.sc_blocks.get(&spec.name).map(Vec::as_slice).unwrap_or(&[]);
            let Some(genesis) = self.sidechain_genesis.get(&spec.name) else {
                if !blocks.is_empty() {
                    v.failures.push(format!("sidechain {} has blocks but no genesis", spec.name));
                }
                continue;
            };
            if mc.active_hash_at(genesis.height) != Some(genesis.hash) {
                v.failures.push(format!("sidechain {} genesis is not on the active mainchain", spec.name));
                continue;
            }
            let mut node = match LatusNode::new(spec.params(), mc.proofs().clone(), *genesis) {
                Ok(n) => n,
                Err(e) => {
                    v.failures.push(format!("sidechain {}: {}", spec.name, e.0));
                    continue;
                }
            };
            let mut failed = false;
            for (i, b) in blocks.iter().enumerate() {
                match node.receive_block(&mc, b.clone()) {
                    Ok(_) => v.sc_blocks += 1,
                    Err(e) => {
                        v.failures.push(format!("sidechain {} block {i}: {e}", spec.name));
                        failed = true;
                        break;
                    }
                }
            }
            if failed {
                continue;
            }
            node.select_tip(&mc);
            match self.report.sidechains.get(&spec.name) {
                Some(r) if r.sc_tip == node.tip() && r.sc_state_digest == node.tip_state().digest() => {}
                _ => v.failures.push(format!("sidechain {} tip differs from the report", spec.name)),
            }
        }
        v
    }
}
