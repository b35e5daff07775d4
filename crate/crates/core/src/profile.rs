//! Attribute mastery profiles and their canonical indexing.
//!
//! Profile index `l` encodes mastery little-endian: bit `k` of `l` is the
//! mastery state of attribute `k`. All modules share this order, so a
//! profile index doubles as a bitmask.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const MAX_ATTRIBUTES: usize = 16;

/// A K-length binary mastery vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeProfile(Vec<u8>);

impl AttributeProfile {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() > MAX_ATTRIBUTES {
            return Err(domain(format!("profile length {} outside 1..={MAX_ATTRIBUTES}", bits.len())));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(domain("profile entries must be 0 or 1"));
        }
        Ok(Self(bits))
    }

    pub fn from_mask(mask: u32, k: usize) -> Self {
        Self((0..k).map(|b| ((mask >> b) & 1) as u8).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mask(&self) -> u32 {
        bits_to_mask(&self.0)
    }
}

pub(crate) fn bits_to_mask(bits: &[u8]) -> u32 {
    bits.iter()
        .enumerate()
        .fold(0u32, |m, (k, &b)| m | (u32::from(b & 1) << k))
}

/// The 2^K profiles in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileSpace {
    k: usize,
}

impl ProfileSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_ATTRIBUTES {
            return Err(domain(format!("attribute count {k} outside 1..={MAX_ATTRIBUTES}")));
        }
        Ok(Self { k })
    }

    pub fn n_attributes(&self) -> usize {
        self.k
    }

    /// L = 2^K.
    pub fn len(&self) -> usize {
        1 << self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn decode(&self, index: usize) -> AttributeProfile {
        debug_assert!(index < self.len());
        AttributeProfile::from_mask(index as u32, self.k)
    }

    pub fn encode(&self, profile: &AttributeProfile) -> Result<usize> {
        if profile.len() != self.k {
            return Err(crate::Error::Dimension { expected: self.k, got: profile.len() });
        }
        Ok(profile.mask() as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = AttributeProfile> + '_ {
        (0..self.len()).map(move |l| self.decode(l))
    }
}

/// All 2^K profiles for `k` attributes.
pub fn enumerate_profiles(k: usize) -> Result<ProfileSpace> {
    ProfileSpace::new(k)
}
