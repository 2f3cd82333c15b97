#![allow(dead_code)]

use coordra_core::channel::{self, ChannelRealization};
use coordra_core::link::{build_codebook, BeamSide, LinkModel, McsTable};
use coordra_core::oracle::ClassEncoding;
use coordra_core::scenario::{generate_drops, ScenarioConfig};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every allocation scored one at a time, nothing shared or pruned.
pub struct NaiveResult {
    pub class_ids: Vec<u32>,
    pub best: f64,
}

pub fn naive_solve(ch: &ChannelRealization, link: &LinkModel) -> NaiveResult {
    let enc = ClassEncoding::for_link(link);
    let mut scored = Vec::new();
    for (v_idx, v) in link.tx_codebook.vectors.iter().enumerate() {
        for (u_idx, u) in link.rx_codebook.vectors.iter().enumerate() {
            for m in 0..link.mcs.len() {
                let snrs: Vec<f64> = ch
                    .matrices
                    .iter()
                    .map(|h| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for a_u in 0..h.rows() {
                            let hv: Complex64 = (0..h.cols()).map(|a_r| h.get(a_u, a_r) * v[a_r]).sum();
                            acc += u[a_u].conj() * hv;
                        }
                        link.tx_power * acc.norm_sqr() / link.noise_power
                    })
                    .collect();
                let (g, _) = link.mcs_goodput(m, &snrs);
                scored.push((enc.encode(v_idx, u_idx, m), g));
            }
        }
    }
    let best = scored.iter().map(|&(_, g)| g).fold(f64::NEG_INFINITY, f64::max);
    let class_ids = scored
        .iter()
        .filter(|&&(_, g)| (best - g).abs() <= link.tie_tolerance * best.abs())
        .map(|&(id, _)| id)
        .collect();
    NaiveResult { class_ids, best }
}

/// A small random grid: at most 8 beams, 4 filters, 5 MCS entries and 8
/// subcarriers, on a random Case-3 drop.
pub fn small_instance(seed: u64) -> (LinkModel, ChannelRealization) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_v = rng.random_range(1..=8usize);
    let n_u = rng.random_range(1..=4usize);
    let n_m = rng.random_range(1..=5usize);
    let config = ScenarioConfig {
        subcarrier_count: rng.random_range(1..=8),
        tx_antennas: if rng.random_bool(0.5) { 8 } else { 4 },
        rx_antennas: if rng.random_bool(0.5) { 2 } else { 1 },
        scatterer_density: 0.05,
        tx_power: 10f64.powf(rng.random_range(-8.0..-4.0)),
        rng_seed: seed,
        ..ScenarioConfig::default()
    };
    let mut link = LinkModel::from_config(&config).unwrap();
    link.tx_codebook = build_codebook(config.tx_antennas, 180.0 / n_v as f64, [0.0, 180.0], BeamSide::Transmit).unwrap();
    link.rx_codebook = build_codebook(config.rx_antennas, 180.0 / n_u as f64, [0.0, 180.0], BeamSide::Receive).unwrap();
    let mut picks = sample(&mut rng, link.mcs.len(), n_m).into_vec();
    picks.sort_unstable();
    let table = McsTable::new(picks.iter().map(|&i| link.mcs.get(i).clone()).collect()).unwrap();
    link = link.with_mcs(table);
    let placement = &generate_drops(&config, 1)[0];
    let ch = channel::realize(&config, placement);
    (link, ch)
}
