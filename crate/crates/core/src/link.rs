//! Link abstraction: beam codebooks, per-subcarrier SNR, exponential
//! effective-SNR mapping, MCS error model and goodput.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::CMatrix;
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
const REFERENCE_TEMPERATURE: f64 = 290.0;

/// Which end of the link a codebook is used at. Transmit weights are the
/// conjugate array response so that `H v` co-phases at the steering angle;
/// receive filters are the response itself so that `u^H H` does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamSide {
    Transmit,
    Receive,
}

/// Response of a half-wavelength ULA along the x-axis towards a direction at
/// `angle` radians from the array axis, normalised to unit norm.
pub fn steering_vector(antennas: usize, angle: f64) -> Vec<Complex64> {
    let centre = (antennas as f64 - 1.0) / 2.0;
    let scale = 1.0 / (antennas as f64).sqrt();
    (0..antennas)
        .map(|i| Complex64::from_polar(scale, PI * (i as f64 - centre) * angle.cos()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub vectors: Vec<Vec<Complex64>>,
    /// Steering angle of each vector, degrees.
    pub angles_deg: Vec<f64>,
    pub angular_separation: f64,
    pub sector: [f64; 2],
    pub side: BeamSide,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Index of the beam whose steering angle is closest to `angle_deg`;
    /// equidistant candidates resolve to the lower index.
    pub fn nearest(&self, angle_deg: f64) -> usize {
        let mut best = 0;
        let mut best_gap = f64::INFINITY;
        for (i, a) in self.angles_deg.iter().enumerate() {
            let gap = (a - angle_deg).abs();
            if gap < best_gap {
                best = i;
                best_gap = gap;
            }
        }
        best
    }
}

/// Geometric-beamforming codebook: one steering vector every `separation`
/// degrees over the half-open `sector`.
pub fn build_codebook(antennas: usize, separation: f64, sector: [f64; 2], side: BeamSide) -> Result<Codebook> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "angular separation must be positive, got {separation}"
        )));
    }
    if antennas == 0 {
        return Err(Error::InvalidArgument("codebook needs at least one antenna".into()));
    }
    let span = sector[1] - sector[0];
    let ratio = span / separation;
    let count = ratio.round();
    if !(count >= 1.0 && (ratio - count).abs() < 1e-9 * ratio.max(1.0)) {
        return Err(Error::InvalidArgument(format!(
            "separation {separation} does not divide sector [{}, {})",
            sector[0], sector[1]
        )));
    }
    let angles_deg: Vec<f64> = (0..count as usize).map(|i| sector[0] + i as f64 * separation).collect();
    let vectors = angles_deg
        .iter()
        .map(|a| {
            let s = steering_vector(antennas, a.to_radians());
            match side {
                BeamSide::Transmit => s.into_iter().map(|z| z.conj()).collect(),
                BeamSide::Receive => s,
            }
        })
        .collect();
    Ok(Codebook {
        vectors,
        angles_deg,
        angular_separation: separation,
        sector,
        side,
    })
}

/// One modulation and coding scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsEntry {
    /// 1-based position in the table.
    pub index: usize,
    pub bits_per_symbol: u32,
    pub code_rate: f64,
    pub snr_threshold_db: f64,
    pub eesm_beta: f64,
    /// Bits carried by one frame over all subcarriers.
    pub payload_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

/// (bits per symbol, code rate numerator, denominator, EESM beta)
const SYNTHETIC_MCS: [(u32, u32, u32, f64); 15] = [
    (2, 1, 8, 1.5),
    (2, 1, 5, 1.6),
    (2, 1, 4, 1.7),
    (2, 1, 3, 1.9),
    (2, 1, 2, 2.2),
    (2, 2, 3, 2.5),
    (4, 1, 2, 5.5),
    (4, 3, 5, 6.5),
    (4, 2, 3, 7.5),
    (4, 3, 4, 9.0),
    (6, 3, 5, 18.0),
    (6, 2, 3, 21.0),
    (6, 3, 4, 24.0),
    (6, 5, 6, 27.0),
    (6, 9, 10, 30.0),
];

/// Symbols one subcarrier carries per frame; the subcarrier spacing is taken
/// as the symbol rate.
pub fn symbols_per_frame(config: &ScenarioConfig) -> u64 {
    (config.frame_duration * config.bandwidth / config.subcarrier_count as f64 + 1e-9).floor() as u64
}

fn payload_bits(config: &ScenarioConfig, bits_per_symbol: u32, code_rate: f64) -> u64 {
    let raw = config.subcarrier_count as f64 * symbols_per_frame(config) as f64 * bits_per_symbol as f64;
    (raw * code_rate + 1e-6).floor() as u64
}

impl McsTable {
    /// Validates ordering: payload and threshold strictly increasing, beta positive.
    pub fn new(entries: Vec<McsEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("MCS table"));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.eesm_beta > 0.0) {
                return Err(Error::InvalidArgument(format!("MCS {}: beta must be positive", e.index)));
            }
            if !(e.code_rate > 0.0 && e.code_rate <= 1.0) {
                return Err(Error::InvalidArgument(format!("MCS {}: code rate outside (0, 1]", e.index)));
            }
            if i > 0 {
                let prev = &entries[i - 1];
                if e.payload_bits <= prev.payload_bits || e.snr_threshold_db <= prev.snr_threshold_db {
                    return Err(Error::InvalidArgument(format!(
                        "MCS {} must exceed MCS {} in payload and threshold",
                        e.index, prev.index
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    /// The built-in 15-entry table: QPSK 1/8 up to 64-QAM 9/10, thresholds
    /// from -4 dB in 1.8 dB steps.
    pub fn synthetic(config: &ScenarioConfig) -> Self {
        let entries = SYNTHETIC_MCS
            .iter()
            .enumerate()
            .map(|(i, &(bits, num, den, beta))| {
                let rate = num as f64 / den as f64;
                McsEntry {
                    index: i + 1,
                    bits_per_symbol: bits,
                    code_rate: rate,
                    snr_threshold_db: -4.0 + 1.8 * i as f64,
                    eesm_beta: beta,
                    payload_bits: payload_bits(config, bits, rate),
                }
            })
            .collect();
        Self::new(entries).expect("built-in table is ordered")
    }

    /// First `count` entries of the table.
    pub fn truncated(&self, count: usize) -> Result<Self> {
        Self::new(self.entries.iter().take(count).cloned().collect())
    }

    /// Parses one entry per line: `m, bits, rate, threshold_db, beta`. The
    /// rate may be a fraction (`3/4`) or a decimal. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str, config: &ScenarioConfig, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::parse(path, lineno + 1, msg);
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", fields.len())));
            }
            let index: usize = fields[0].parse().map_err(|e| err(format!("index: {e}")))?;
            let bits: u32 = fields[1].parse().map_err(|e| err(format!("bits: {e}")))?;
            let rate = parse_rate(fields[2]).ok_or_else(|| err(format!("bad code rate {:?}", fields[2])))?;
            let threshold: f64 = fields[3].parse().map_err(|e| err(format!("threshold: {e}")))?;
            let beta: f64 = fields[4].parse().map_err(|e| err(format!("beta: {e}")))?;
            if index != entries.len() + 1 {
                return Err(err(format!("expected index {}, found {index}", entries.len() + 1)));
            }
            entries.push(McsEntry {
                index,
                bits_per_symbol: bits,
                code_rate: rate,
                snr_threshold_db: threshold,
                eesm_beta: beta,
                payload_bits: payload_bits(config, bits, rate),
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path, config: &ScenarioConfig) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, config, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# m, bits, rate, threshold_db, beta\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{}, {}, {}, {}, {}\n",
                e.index, e.bits_per_symbol, e.code_rate, e.snr_threshold_db, e.eesm_beta
            ));
        }
        out
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &McsEntry {
        &self.entries[idx]
    }
}

fn parse_rate(s: &str) -> Option<f64> {
    let rate = match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>().ok()? / d.trim().parse::<f64>().ok()?,
        None => s.parse().ok()?,
    };
    rate.is_finite().then_some(rate)
}

/// Thermal noise over one subcarrier including the receiver noise figure, W.
pub fn noise_power(config: &ScenarioConfig) -> f64 {
    BOLTZMANN * REFERENCE_TEMPERATURE * config.bandwidth / config.subcarrier_count as f64
        * 10f64.powf(config.noise_figure_db / 10.0)
}

/// `P |u^H H v|^2 / noise`.
pub fn snr(h: &CMatrix, v: &[Complex64], u: &[Complex64], tx_power: f64, noise_power: f64) -> f64 {
    let mut hv = [Complex64::new(0.0, 0.0); MAX_RX_ANTENNAS];
    transmit_projection(h, v, &mut hv[..h.rows()]);
    receive_snr(&hv[..h.rows()], u, tx_power, noise_power)
}

/// Upper bound on receive antennas supported by the stack buffers in [`snr`].
pub const MAX_RX_ANTENNAS: usize = 8;

/// Writes `H v` into `out`, one entry per receive antenna.
pub fn transmit_projection(h: &CMatrix, v: &[Complex64], out: &mut [Complex64]) {
    for (a_u, slot) in out.iter_mut().enumerate() {
        *slot = h.row(a_u).iter().zip(v).map(|(h, v)| h * v).sum();
    }
}

/// SNR after applying receive filter `u` to a projected channel `H v`.
pub fn receive_snr(hv: &[Complex64], u: &[Complex64], tx_power: f64, noise_power: f64) -> f64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (u_a, hv_a) in u.iter().zip(hv) {
        acc += u_a.conj() * hv_a;
    }
    tx_power * acc.norm_sqr() / noise_power
}

/// Exponential effective SNR: `-beta ln(mean(exp(-gamma_n / beta)))`,
/// evaluated relative to the smallest SNR so that large inputs cannot
/// underflow. The result always lies in `[min gamma, max gamma]`.
pub fn effective_snr(snrs: &[f64], beta: f64) -> f64 {
    let (lo, hi) = snrs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| (lo.min(g), hi.max(g)));
    let mean = snrs.iter().map(|&g| (-(g - lo) / beta).exp()).sum::<f64>() / snrs.len() as f64;
    (lo - beta * mean.ln()).clamp(lo, hi)
}

/// Logistic block-error waterfall centred on an MCS threshold. With a
/// positive `snr_step_db` the curve is read off a lookup grid anchored at the
/// threshold, so the error rate is constant across each step of effective SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlerCurve {
    pub slope: f64,
    pub snr_step_db: f64,
}

impl BlerCurve {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            slope: config.bler_slope,
            snr_step_db: config.bler_snr_step_db,
        }
    }

    pub fn error_rate(&self, threshold_db: f64, effective_snr: f64) -> f64 {
        self.error_rate_db(threshold_db, 10.0 * effective_snr.log10())
    }

    /// As [`error_rate`](Self::error_rate) with the effective SNR given in dB.
    pub fn error_rate_db(&self, threshold_db: f64, effective_snr_db: f64) -> f64 {
        let mut margin = effective_snr_db - threshold_db;
        if self.snr_step_db > 0.0 && margin.is_finite() {
            margin = (margin / self.snr_step_db + 1e-9).floor() * self.snr_step_db;
        }
        1.0 / (1.0 + (self.slope * margin).exp())
    }
}

/// Error-discounted delivered rate, bits/s.
pub fn goodput(payload_bits: u64, error_rate: f64, frame_duration: f64) -> f64 {
    (1.0 - error_rate) * payload_bits as f64 / frame_duration
}

/// Everything needed to score a resource allocation on a channel.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub tx_codebook: Codebook,
    pub rx_codebook: Codebook,
    pub mcs: McsTable,
    pub bler: BlerCurve,
    pub tx_power: f64,
    pub noise_power: f64,
    pub frame_duration: f64,
    pub tie_tolerance: f64,
}

impl LinkModel {
    pub fn from_config(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tx_codebook: build_codebook(
                config.tx_antennas,
                config.tx_beam_separation_deg,
                config.beam_sector_deg,
                BeamSide::Transmit,
            )?,
            rx_codebook: build_codebook(
                config.rx_antennas,
                config.rx_beam_separation_deg,
                config.beam_sector_deg,
                BeamSide::Receive,
            )?,
            mcs: McsTable::synthetic(config),
            bler: BlerCurve::from_config(config),
            tx_power: config.tx_power,
            noise_power: noise_power(config),
            frame_duration: config.frame_duration,
            tie_tolerance: config.tie_tolerance,
        })
    }

    pub fn with_mcs(mut self, mcs: McsTable) -> Self {
        self.mcs = mcs;
        self
    }

    /// Error rate of MCS `m` (zero-based) at the given effective SNR.
    pub fn error_rate(&self, m: usize, effective_snr: f64) -> f64 {
        self.bler.error_rate(self.mcs.get(m).snr_threshold_db, effective_snr)
    }

    /// Goodput of MCS `m` (zero-based) at the given per-subcarrier SNRs,
    /// with the effective SNR it was scored at.
    pub fn mcs_goodput(&self, m: usize, snrs: &[f64]) -> (f64, f64) {
        let entry = self.mcs.get(m);
        let eff = effective_snr(snrs, entry.eesm_beta);
        let eps = self.bler.error_rate(entry.snr_threshold_db, eff);
        (goodput(entry.payload_bits, eps, self.frame_duration), eff)
    }
}
