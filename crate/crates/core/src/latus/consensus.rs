//! Stake-weighted slot leader selection.

use std::collections::BTreeMap;

use crate::crypto::{hash_tagged, Address, Digest, Domain};

use super::state::ScState;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StakeDistribution {
    stakes: BTreeMap<Address, u64>,
}

impl StakeDistribution {
    pub fn add(&mut self, addr: Address, amount: u64) {
        let e = self.stakes.entry(addr).or_default();
        *e = e.saturating_add(amount);
    }

    /// Genesis stakes plus every UTXO in `state`.
    pub fn snapshot(genesis: &[(Address, u64)], state: Option<&ScState>) -> Self {
        let mut d = StakeDistribution::default();
        for (a, s) in genesis {
            d.add(*a, *s);
        }
        if let Some(state) = state {
            for u in state.mst.utxos() {
                d.add(u.addr, u.amount);
            }
        }
        d
    }

    pub fn total(&self) -> u128 {
        self.stakes.values().map(|s| *s as u128).sum()
    }

    pub fn stake_of(&self, addr: &Address) -> u64 {
        self.stakes.get(addr).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &u64)> {
        self.stakes.iter()
    }
}

/// Leader of `slot` given the epoch randomness: an address drawn with
/// probability proportional to its stake. `None` when there is no stake.
pub fn slot_leader(stakes: &StakeDistribution, rand: &Digest, slot: u64) -> Option<Address> {
    let total = stakes.total();
    if total == 0 {
        return None;
    }
    let h = hash_tagged(Domain::SlotSeed, &[&rand.0, &slot.to_be_bytes()]);
    let mut wide = [0u8; 16];
    wide.copy_from_slice(&h.0[..16]);
    let mut target = u128::from_be_bytes(wide) % total;
    for (addr, stake) in stakes.iter() {
        let s = *stake as u128;
        if target < s {
            return Some(*addr);
        }
        target -= s;
    }
    unreachable!("target is below the total stake")
}

/// Leaders of `k` consecutive slots starting at `first_slot`.
pub fn select_slot_leaders(stakes: &StakeDistribution, rand: &Digest, first_slot: u64, k: u64) -> Vec<Address> {
    (first_slot..first_slot + k)
        .filter_map(|s| slot_leader(stakes, rand, s))
        .collect()
}
