//! Exhaustive-search resource allocation.
//!
//! For one channel realization the solver scores every (transmit beam,
//! receive filter, MCS) triple and returns all triples whose goodput matches
//! the maximum within the configured relative tie tolerance, in grid order
//! (beam outermost, MCS innermost).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::link::{receive_snr, transmit_projection, LinkModel, MAX_RX_ANTENNAS};

/// Bit layout of class ids: `v << (bits_u + bits_m) | u << bits_m | m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEncoding {
    pub tx_beams: usize,
    pub rx_filters: usize,
    pub mcs_count: usize,
    pub bits_u: u32,
    pub bits_m: u32,
}

fn bits_for(count: usize) -> u32 {
    if count <= 1 {
        0
    } else {
        usize::BITS - (count - 1).leading_zeros()
    }
}

impl ClassEncoding {
    pub fn new(tx_beams: usize, rx_filters: usize, mcs_count: usize) -> Self {
        Self {
            tx_beams,
            rx_filters,
            mcs_count,
            bits_u: bits_for(rx_filters),
            bits_m: bits_for(mcs_count),
        }
    }

    pub fn for_link(link: &LinkModel) -> Self {
        Self::new(link.tx_codebook.len(), link.rx_codebook.len(), link.mcs.len())
    }

    pub fn encode(&self, v_idx: usize, u_idx: usize, m_idx: usize) -> u32 {
        ((v_idx << (self.bits_u + self.bits_m)) | (u_idx << self.bits_m) | m_idx) as u32
    }

    pub fn allocation(&self, v_idx: usize, u_idx: usize, m_idx: usize) -> ResourceAllocation {
        ResourceAllocation {
            v_idx,
            u_idx,
            m_idx,
            class_id: self.encode(v_idx, u_idx, m_idx),
        }
    }

    /// Inverse of [`encode`](Self::encode); rejects ids outside the grid.
    pub fn decode(&self, class_id: u32) -> Result<ResourceAllocation> {
        let id = class_id as usize;
        let m_idx = id & ((1usize << self.bits_m) - 1);
        let u_idx = (id >> self.bits_m) & ((1usize << self.bits_u) - 1);
        let v_idx = id >> (self.bits_u + self.bits_m);
        if v_idx >= self.tx_beams || u_idx >= self.rx_filters || m_idx >= self.mcs_count {
            return Err(Error::UnknownClass(class_id));
        }
        Ok(self.allocation(v_idx, u_idx, m_idx))
    }
}

/// Transmit beam, receive filter and MCS indices (all zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourceAllocation {
    pub v_idx: usize,
    pub u_idx: usize,
    pub m_idx: usize,
    pub class_id: u32,
}

/// Every allocation attaining the maximal goodput for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSet {
    pub allocations: Vec<ResourceAllocation>,
    /// Maximal goodput, bits/s.
    pub optimal_goodput: f64,
    /// Effective SNR each member was scored at, aligned with `allocations`.
    pub eeff_per_allocation: Vec<f64>,
}

impl OptimalSet {
    pub fn class_ids(&self) -> Vec<u32> {
        self.allocations.iter().map(|a| a.class_id).collect()
    }

    pub fn contains(&self, class_id: u32) -> bool {
        self.allocations.iter().any(|a| a.class_id == class_id)
    }
}

/// True when `goodput` ties with the optimum `best` under relative `tolerance`.
pub fn ties_with(goodput: f64, best: f64, tolerance: f64) -> bool {
    (best - goodput).abs() <= tolerance * best.abs()
}

/// Per-subcarrier SNR of one beam pair.
pub fn pair_snrs(channel: &ChannelRealization, link: &LinkModel, v_idx: usize, u_idx: usize) -> Vec<f64> {
    let v = &link.tx_codebook.vectors[v_idx];
    let u = &link.rx_codebook.vectors[u_idx];
    let rows = channel.rx_antennas();
    let mut hv = [Complex64::new(0.0, 0.0); MAX_RX_ANTENNAS];
    channel
        .matrices
        .iter()
        .map(|h| {
            transmit_projection(h, v, &mut hv[..rows]);
            receive_snr(&hv[..rows], u, link.tx_power, link.noise_power)
        })
        .collect()
}

/// Goodput and effective SNR of one allocation on one channel. Scores exactly
/// as [`solve`] does, so no allocation can beat the solver's optimum.
pub fn allocation_goodput(channel: &ChannelRealization, link: &LinkModel, alloc: &ResourceAllocation) -> (f64, f64) {
    let snrs = pair_snrs(channel, link, alloc.v_idx, alloc.u_idx);
    link.mcs_goodput(alloc.m_idx, &snrs)
}

/// Exhaustive search over the full allocation grid.
///
/// The SNR of each beam pair is computed once and shared by all MCS entries.
/// Pairs are visited in order of a Jensen upper bound on their achievable
/// goodput (the effective SNR never exceeds the mean SNR), and the scan stops
/// once no remaining pair can reach the current optimum.
pub fn solve(channel: &ChannelRealization, link: &LinkModel) -> OptimalSet {
    let n_v = link.tx_codebook.len();
    let n_u = link.rx_codebook.len();
    let n_m = link.mcs.len();
    let rows = channel.rx_antennas();
    let n_sub = channel.subcarrier_count();
    let encoding = ClassEncoding::for_link(link);
    let tol = link.tie_tolerance;

    // H v for every beam and subcarrier
    let mut projected = vec![Complex64::new(0.0, 0.0); n_v * n_sub * rows];
    for (v_idx, v) in link.tx_codebook.vectors.iter().enumerate() {
        for (n, h) in channel.matrices.iter().enumerate() {
            let at = (v_idx * n_sub + n) * rows;
            transmit_projection(h, v, &mut projected[at..at + rows]);
        }
    }

    let mut snrs = vec![0.0; n_v * n_u * n_sub];
    let mut bounds = Vec::with_capacity(n_v * n_u);
    for v_idx in 0..n_v {
        for (u_idx, u) in link.rx_codebook.vectors.iter().enumerate() {
            let pair = v_idx * n_u + u_idx;
            let out = &mut snrs[pair * n_sub..(pair + 1) * n_sub];
            for (n, slot) in out.iter_mut().enumerate() {
                let at = (v_idx * n_sub + n) * rows;
                *slot = receive_snr(&projected[at..at + rows], u, link.tx_power, link.noise_power);
            }
            let mean = out.iter().sum::<f64>() / n_sub as f64;
            bounds.push((goodput_bound(link, mean * (1.0 + 1e-9)), pair));
        }
    }
    bounds.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut best = f64::NEG_INFINITY;
    // (pair, m, goodput, eeff) of every evaluated candidate that may tie
    let mut candidates: Vec<(usize, usize, f64, f64)> = Vec::new();
    for &(bound, pair) in &bounds {
        if best.is_finite() && bound < best - tol * best.abs() {
            break;
        }
        let pair_snrs = &snrs[pair * n_sub..(pair + 1) * n_sub];
        for m in 0..n_m {
            let (g, eff) = link.mcs_goodput(m, pair_snrs);
            if g > best {
                best = g;
            }
            if !(g < best - tol * best.abs()) {
                candidates.push((pair, m, g, eff));
            }
        }
    }

    let mut members: Vec<_> = candidates
        .into_iter()
        .filter(|&(_, _, g, _)| ties_with(g, best, tol))
        .collect();
    members.sort_by_key(|&(pair, m, _, _)| (pair, m));
    OptimalSet {
        allocations: members
            .iter()
            .map(|&(pair, m, _, _)| encoding.allocation(pair / n_u, pair % n_u, m))
            .collect(),
        optimal_goodput: best,
        eeff_per_allocation: members.iter().map(|&(_, _, _, eff)| eff).collect(),
    }
}

/// Largest goodput any MCS could deliver at effective SNR `eff`.
fn goodput_bound(link: &LinkModel, eff: f64) -> f64 {
    (0..link.mcs.len())
        .map(|m| {
            let e = link.mcs.get(m);
            crate::link::goodput(e.payload_bits, link.error_rate(m, eff), link.frame_duration)
        })
        .fold(0.0, f64::max)
}

/// The optimum found first in grid order.
pub fn first_optimal(set: &OptimalSet) -> ResourceAllocation {
    set.allocations[0]
}

/// The optimum with the highest effective SNR; ties keep grid order.
pub fn max_eeff_optimal(set: &OptimalSet) -> ResourceAllocation {
    let mut best = 0;
    for (i, &eff) in set.eeff_per_allocation.iter().enumerate() {
        if eff > set.eeff_per_allocation[best] {
            best = i;
        }
    }
    set.allocations[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel;
    use crate::scenario::{generate_drops, ScenarioConfig};

    #[test]
    fn encoding_roundtrips_over_full_grid() {
        let enc = ClassEncoding::new(60, 15, 15);
        assert_eq!((enc.bits_u, enc.bits_m), (4, 4));
        let mut seen = std::collections::HashSet::new();
        for v in 0..60 {
            for u in 0..15 {
                for m in 0..15 {
                    let id = enc.encode(v, u, m);
                    assert!(seen.insert(id));
                    let a = enc.decode(id).unwrap();
                    assert_eq!((a.v_idx, a.u_idx, a.m_idx, a.class_id), (v, u, m, id));
                }
            }
        }
        assert!(enc.decode(enc.encode(59, 15, 0)).is_err());
        assert!(enc.decode(60 << 8).is_err());
    }

    #[test]
    fn single_element_grid_bits() {
        let enc = ClassEncoding::new(1, 1, 1);
        assert_eq!((enc.bits_u, enc.bits_m), (0, 0));
        assert_eq!(enc.encode(0, 0, 0), 0);
        assert_eq!(enc.decode(0).unwrap().class_id, 0);
    }

    fn set_of(evals: &[f64]) -> OptimalSet {
        let enc = ClassEncoding::new(4, 1, 1);
        OptimalSet {
            allocations: (0..evals.len()).map(|v| enc.allocation(v, 0, 0)).collect(),
            optimal_goodput: 1.0,
            eeff_per_allocation: evals.to_vec(),
        }
    }

    #[test]
    fn selection_rules() {
        let single = set_of(&[3.0]);
        assert_eq!(first_optimal(&single), single.allocations[0]);
        assert_eq!(max_eeff_optimal(&single), single.allocations[0]);

        let two = set_of(&[5.0, 7.1]);
        assert_eq!(first_optimal(&two).v_idx, 0);
        assert_eq!(max_eeff_optimal(&two).v_idx, 1);

        let tied = set_of(&[2.0, 7.1, 7.1]);
        assert_eq!(max_eeff_optimal(&tied).v_idx, 1);
    }

    #[test]
    fn solver_members_attain_optimum_and_bound_everything() {
        let config = ScenarioConfig::case3();
        let link = LinkModel::from_config(&config).unwrap();
        for placement in generate_drops(&config, 5) {
            let ch = channel::realize(&config, &placement);
            let set = solve(&ch, &link);
            assert!(!set.allocations.is_empty());
            for (a, eff) in set.allocations.iter().zip(&set.eeff_per_allocation) {
                let (g, e) = allocation_goodput(&ch, &link, a);
                assert!(ties_with(g, set.optimal_goodput, link.tie_tolerance));
                assert_eq!(e, *eff);
            }
            let enc = ClassEncoding::for_link(&link);
            for v in 0..link.tx_codebook.len() {
                for u in 0..link.rx_codebook.len() {
                    for m in 0..link.mcs.len() {
                        let a = enc.allocation(v, u, m);
                        let (g, _) = allocation_goodput(&ch, &link, &a);
                        assert!(g <= set.optimal_goodput);
                        if !set.contains(a.class_id) {
                            assert!(g < set.optimal_goodput * (1.0 - link.tie_tolerance));
                        }
                    }
                }
            }
            assert_eq!(solve(&ch, &link), set);
        }
    }
}
