//! Actuation-channel subsets and their delivery probabilities.
//!
//! Subset `I` is encoded as a bitmask with bit `i - 1` set when channel `i`
//! delivers. Tables are always in binary counting order: the empty set
//! first, the full set last.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::SymMatrix;

/// Largest channel count the library accepts.
pub const MAX_CHANNELS: usize = 30;

/// Above this many channels the weights are accumulated in log space.
const LOG_SPACE_THRESHOLD: usize = 20;

/// Per-channel arrival probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelSpec {
    nu_bar: Vec<f64>,
}

impl ChannelSpec {
    /// Every probability must lie in `(0, 1]`. A channel with probability
    /// zero never delivers and should be removed from `B` instead.
    pub fn new(nu_bar: Vec<f64>) -> Result<Self> {
        let m = nu_bar.len();
        if m == 0 || m > MAX_CHANNELS {
            return Err(Error::ChannelCount(m));
        }
        for (i, &v) in nu_bar.iter().enumerate() {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::ArrivalProbability {
                    channel: i + 1,
                    value: v,
                });
            }
        }
        Ok(Self { nu_bar })
    }

    pub fn m(&self) -> usize {
        self.nu_bar.len()
    }

    pub fn nu_bar(&self) -> &[f64] {
        &self.nu_bar
    }
}

impl<'de> Deserialize<'de> for ChannelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let nu_bar = Vec::<f64>::deserialize(d)?;
        ChannelSpec::new(nu_bar).map_err(serde::de::Error::custom)
    }
}

/// All `2^m` channel subsets in binary counting order.
pub fn enumerate_subsets(m: usize) -> Result<Vec<u32>> {
    if m == 0 || m > MAX_CHANNELS {
        return Err(Error::ChannelCount(m));
    }
    Ok((0..(1u32 << m)).collect())
}

/// One subset together with its delivery probability `eta_I^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Subset {
    pub mask: u32,
    pub weight: f64,
}

impl Subset {
    #[inline]
    pub fn contains(&self, channel: usize) -> bool {
        self.mask >> channel & 1 == 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetTable {
    nu_bar: Vec<f64>,
    subsets: Vec<Subset>,
}

impl SubsetTable {
    pub fn m(&self) -> usize {
        self.nu_bar.len()
    }

    pub fn nu_bar(&self) -> &[f64] {
        &self.nu_bar
    }

    pub fn subsets(&self) -> &[Subset] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Subset> {
        self.subsets.iter()
    }

    pub fn selection(&self, index: usize) -> SymMatrix {
        mask_diag(self.subsets[index].mask, self.m())
    }
}

/// Builds the subset table with `eta_I^2 = prod_{i in I} nu_i * prod_{i not in I} (1 - nu_i)`.
pub fn eta_squared(spec: &ChannelSpec) -> SubsetTable {
    let m = spec.m();
    let nu = spec.nu_bar();
    let masks = enumerate_subsets(m).expect("ChannelSpec guarantees a valid channel count");
    let subsets = if m > LOG_SPACE_THRESHOLD {
        let ln_in: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
        let ln_out: Vec<f64> = nu.iter().map(|v| (1.0 - v).ln()).collect();
        masks
            .into_iter()
            .map(|mask| {
                let s: f64 = (0..m)
                    .map(|i| if mask >> i & 1 == 1 { ln_in[i] } else { ln_out[i] })
                    .sum();
                Subset { mask, weight: s.exp() }
            })
            .collect()
    } else {
        masks
            .into_iter()
            .map(|mask| {
                let weight = (0..m)
                    .map(|i| if mask >> i & 1 == 1 { nu[i] } else { 1.0 - nu[i] })
                    .product();
                Subset { mask, weight }
            })
            .collect()
    };
    SubsetTable {
        nu_bar: nu.to_vec(),
        subsets,
    }
}

fn mask_diag(mask: u32, m: usize) -> SymMatrix {
    let d: Vec<f64> = (0..m).map(|i| f64::from(mask >> i & 1)).collect();
    SymMatrix::from_diag(&d)
}

/// Diagonal 0/1 matrix selecting the channels in `mask`.
pub fn selection_matrix(mask: u64, m: usize) -> Result<SymMatrix> {
    if m == 0 || m > MAX_CHANNELS {
        return Err(Error::ChannelCount(m));
    }
    if mask >> m != 0 {
        return Err(Error::MaskOutOfRange { mask, m });
    }
    Ok(mask_diag(mask as u32, m))
}

/// `sum_I eta_I^2 N_I`, accumulated subset by subset.
pub fn mean_mask(table: &SubsetTable) -> SymMatrix {
    let m = table.m();
    let mut d = vec![0.0; m];
    for s in table.iter() {
        for (i, di) in d.iter_mut().enumerate() {
            if s.contains(i) {
                *di += s.weight;
            }
        }
    }
    SymMatrix::from_diag(&d)
}
