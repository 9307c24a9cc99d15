//! Bit vectors recording which MST slots were modified.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hash::{hash_tagged, Digest, Domain};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeltaError {
    #[error("delta length mismatch: {0} vs {1}")]
    LengthMismatch(u64, u64),
    #[error("malformed delta encoding")]
    Malformed,
}

/// One bit per slot, packed MSB-first: slot 0 is the high bit of byte 0.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "DeltaRepr", into = "DeltaRepr")]
pub struct MstDelta {
    len: u64,
    bytes: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct DeltaRepr {
    len: u64,
    bytes: Vec<u8>,
}

impl From<MstDelta> for DeltaRepr {
    fn from(d: MstDelta) -> Self {
        DeltaRepr {
            len: d.len,
            bytes: d.bytes,
        }
    }
}

impl TryFrom<DeltaRepr> for MstDelta {
    type Error = DeltaError;

    fn try_from(r: DeltaRepr) -> Result<Self, DeltaError> {
        MstDelta::from_packed(r.len, r.bytes)
    }
}

impl MstDelta {
    pub fn zeros(len: u64) -> Self {
        MstDelta {
            len,
            bytes: vec![0; len.div_ceil(8) as usize],
        }
    }

    pub fn for_depth(depth: u8) -> Self {
        Self::zeros(1u64 << depth)
    }

    /// Rejects set padding bits so that every vector has one encoding.
    pub fn from_packed(len: u64, bytes: Vec<u8>) -> Result<Self, DeltaError> {
        if bytes.len() as u64 != len.div_ceil(8) {
            return Err(DeltaError::Malformed);
        }
        let spare = (bytes.len() as u64 * 8 - len) as u32;
        if spare > 0 {
            let mask = (1u16 << spare) as u8 - 1;
            if bytes.last().copied().unwrap_or(0) & mask != 0 {
                return Err(DeltaError::Malformed);
            }
        }
        Ok(MstDelta { len, bytes })
    }

    pub fn from_bit_string(s: &str) -> Result<Self, DeltaError> {
        let mut d = MstDelta::zeros(s.len() as u64);
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => d.set(i as u64),
                '0' => {}
                _ => return Err(DeltaError::Malformed),
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn packed(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, bit: u64) -> bool {
        bit < self.len && self.bytes[(bit / 8) as usize] & (0x80 >> (bit % 8)) != 0
    }

    pub fn set(&mut self, bit: u64) {
        assert!(bit < self.len, "bit {bit} out of range {}", self.len);
        self.bytes[(bit / 8) as usize] |= 0x80 >> (bit % 8);
    }

    pub fn count_ones(&self) -> u64 {
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len).filter(|b| self.get(*b))
    }

    pub fn or(&self, other: &MstDelta) -> Result<MstDelta, DeltaError> {
        if self.len != other.len {
            return Err(DeltaError::LengthMismatch(self.len, other.len));
        }
        Ok(MstDelta {
            len: self.len,
            bytes: self.bytes.iter().zip(&other.bytes).map(|(a, b)| a | b).collect(),
        })
    }

    /// Every bit set here is also set in `other`.
    pub fn is_subset_of(&self, other: &MstDelta) -> bool {
        self.len == other.len && self.bytes.iter().zip(&other.bytes).all(|(a, b)| a & !b == 0)
    }

    pub fn complement(&self) -> MstDelta {
        let mut out = MstDelta::zeros(self.len);
        for b in 0..self.len {
            if !self.get(b) {
                out.set(b);
            }
        }
        out
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|b| if self.get(b) { '1' } else { '0' }).collect()
    }

    pub fn digest(&self) -> Digest {
        hash_tagged(Domain::Delta, &[&self.len.to_be_bytes(), &self.bytes])
    }
}

impl fmt::Debug for MstDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "MstDelta({})", self.to_bit_string())
        } else {
            write!(f, "MstDelta(len={}, ones={})", self.len, self.count_ones())
        }
    }
}

pub fn delta_or(a: &MstDelta, b: &MstDelta) -> Result<MstDelta, DeltaError> {
    a.or(b)
}
