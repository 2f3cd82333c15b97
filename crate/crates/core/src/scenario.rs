//! Street scenario: configuration, terminal drops, traces, scatterers and
//! position-estimation error.
//!
//! The street occupies `[0, street_width] x [0, street_length]` in the ground
//! plane. The base station sits beyond the right-hand kerb at the lower end of
//! the street; the terminal antenna height is fixed.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point in the ground plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn with_height(&self, z: f64) -> [f64; 3] {
        [self.x, self.y, z]
    }
}

/// Every tunable of the simulated system.
///
/// Serialised as a flat `key = value` file; every key is optional and falls
/// back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub street_width: f64,
    pub street_length: f64,
    pub bs_position: [f64; 3],
    pub terminal_height: f64,
    pub carrier_frequency: f64,
    pub bandwidth: f64,
    pub subcarrier_count: usize,
    pub frame_duration: f64,
    pub tx_power: f64,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Maximum scatterer density, per m².
    pub scatterer_density: f64,
    /// Overrides `floor(density * area)` as the scatterer count ceiling.
    pub max_scatterers: Option<usize>,
    /// Lower and upper bound of scatterer reflection amplitudes.
    pub reflection_gain_range: [f64; 2],
    /// Upper bound of scatterer heights above ground, meters.
    pub scatterer_max_height: f64,
    pub position_error_sigma: f64,
    pub rng_seed: u64,
    pub tx_beam_separation_deg: f64,
    pub rx_beam_separation_deg: f64,
    pub beam_sector_deg: [f64; 2],
    pub noise_figure_db: f64,
    /// Logistic block-error slope, per dB.
    pub bler_slope: f64,
    /// Resolution of the effective-SNR axis of the error-rate lookup, dB.
    /// Zero evaluates the curve at the exact effective SNR.
    pub bler_snr_step_db: f64,
    /// Relative goodput difference below which two allocations tie.
    pub tie_tolerance: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            street_width: 6.0,
            street_length: 25.0,
            bs_position: [9.0, 0.0, 10.0],
            terminal_height: 1.5,
            carrier_frequency: 3.5e9,
            bandwidth: 200e6,
            subcarrier_count: 32,
            frame_duration: 2e-4,
            tx_power: 1e-6,
            tx_antennas: 8,
            rx_antennas: 2,
            scatterer_density: 0.0,
            max_scatterers: None,
            reflection_gain_range: [0.3, 0.9],
            scatterer_max_height: 3.0,
            position_error_sigma: 0.0,
            rng_seed: 1,
            tx_beam_separation_deg: 3.0,
            rx_beam_separation_deg: 12.0,
            beam_sector_deg: [0.0, 180.0],
            noise_figure_db: 9.0,
            bler_slope: 2.0,
            bler_snr_step_db: 1.0,
            tie_tolerance: 1e-9,
        }
    }
}

impl ScenarioConfig {
    /// Deterministic channel, exact positions.
    pub fn case1() -> Self {
        Self::default()
    }

    /// Deterministic channel, noisy position estimates.
    pub fn case2() -> Self {
        Self {
            position_error_sigma: 0.4,
            ..Self::default()
        }
    }

    /// Random scatterers, exact positions.
    pub fn case3() -> Self {
        Self {
            scatterer_density: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("street_width", self.street_width),
            ("street_length", self.street_length),
            ("frame_duration", self.frame_duration),
            ("tx_power", self.tx_power),
            ("carrier_frequency", self.carrier_frequency),
            ("bandwidth", self.bandwidth),
            ("terminal_height", self.terminal_height),
            ("tx_beam_separation_deg", self.tx_beam_separation_deg),
            ("rx_beam_separation_deg", self.rx_beam_separation_deg),
            ("bler_slope", self.bler_slope),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.subcarrier_count == 0 {
            return Err(Error::InvalidConfig("subcarrier_count must be at least 1".into()));
        }
        if !matches!(self.tx_antennas, 4 | 8) {
            return Err(Error::InvalidConfig(format!(
                "tx_antennas must be 4 or 8, got {}",
                self.tx_antennas
            )));
        }
        if !matches!(self.rx_antennas, 1 | 2) {
            return Err(Error::InvalidConfig(format!(
                "rx_antennas must be 1 or 2, got {}",
                self.rx_antennas
            )));
        }
        let non_negative = [
            ("scatterer_density", self.scatterer_density),
            ("position_error_sigma", self.position_error_sigma),
            ("bler_snr_step_db", self.bler_snr_step_db),
            ("tie_tolerance", self.tie_tolerance),
            ("scatterer_max_height", self.scatterer_max_height),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {value}")));
            }
        }
        let [lo, hi] = self.reflection_gain_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "reflection_gain_range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"
            )));
        }
        let [start, end] = self.beam_sector_deg;
        if !(end > start) {
            return Err(Error::InvalidConfig(format!("empty beam sector [{start}, {end})")));
        }
        Ok(())
    }

    pub fn street_area(&self) -> f64 {
        self.street_width * self.street_length
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    /// Ceiling on the number of scatterers in one drop.
    pub fn max_scatterer_count(&self) -> usize {
        self.max_scatterers
            .unwrap_or_else(|| (self.scatterer_density * self.street_area() + 1e-9).floor() as usize)
    }

    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.street_width).contains(&p.x) && (0.0..=self.street_length).contains(&p.y)
    }

    pub fn bs_ground(&self) -> Position {
        Position::new(self.bs_position[0], self.bs_position[1])
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Stable digest of every field, used to key label caches.
    pub fn digest(&self) -> String {
        let bytes = Sha256::digest(self.to_toml_string().as_bytes());
        bytes.iter().take(12).map(|b| format!("{b:02x}")).collect()
    }
}

/// True and estimated terminal location at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalState {
    pub true_position: Position,
    pub estimated_position: Position,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub reflection_gain: f64,
}

/// One terminal location together with the scatterers present at that time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub terminal: TerminalState,
    pub scatterers: Vec<Scatterer>,
}

/// Straight-line terminal trajectory with a fixed scatterer set.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub states: Vec<TerminalState>,
    pub scatterers: Vec<Scatterer>,
}

/// Drops the terminal uniformly over the street.
pub fn random_drop<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> TerminalState {
    let p = Position::new(
        rng.random_range(0.0..=config.street_width),
        rng.random_range(0.0..=config.street_length),
    );
    TerminalState {
        true_position: p,
        estimated_position: p,
        timestamp: 0.0,
    }
}

/// Draws between zero and `max_scatterer_count()` scatterers, uniformly
/// placed over the street.
pub fn place_scatterers<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Vec<Scatterer> {
    let max = config.max_scatterer_count();
    if max == 0 {
        return Vec::new();
    }
    let count = rng.random_range(0..=max);
    let [lo, hi] = config.reflection_gain_range;
    (0..count)
        .map(|_| Scatterer {
            position: [
                rng.random_range(0.0..=config.street_width),
                rng.random_range(0.0..=config.street_length),
                rng.random_range(0.0..=config.scatterer_max_height),
            ],
            reflection_gain: rng.random_range(lo..=hi),
        })
        .collect()
}

/// Adds i.i.d. zero-mean Gaussian error to both coordinates. The result is
/// not clipped to the street.
pub fn perturb_position<R: Rng + ?Sized>(p: Position, sigma: f64, rng: &mut R) -> Position {
    if sigma == 0.0 {
        return p;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    Position::new(p.x + normal.sample(rng), p.y + normal.sample(rng))
}

/// Number of samples a straight pass along the street produces.
pub fn trace_len(street_length: f64, speed: f64, sample_period: f64) -> usize {
    let step = speed * sample_period;
    // tolerate representation error when the length is an exact multiple of the step
    ((street_length / step) * (1.0 + 1e-12)).floor() as usize + 1
}

/// Moves the terminal along +y from a random kerb-to-kerb offset at `y = 0`.
pub fn generate_trace<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
    speed: f64,
    sample_period: f64,
) -> Result<Trace> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::InvalidArgument(format!("trace speed must be positive, got {speed}")));
    }
    if !(sample_period > 0.0 && sample_period.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "trace sample period must be positive, got {sample_period}"
        )));
    }
    let x = rng.random_range(0.0..=config.street_width);
    let scatterers = place_scatterers(config, rng);
    let step = speed * sample_period;
    let states = (0..trace_len(config.street_length, speed, sample_period))
        .map(|k| {
            let p = Position::new(x, (k as f64 * step).min(config.street_length));
            TerminalState {
                true_position: p,
                estimated_position: p,
                timestamp: k as f64 * sample_period,
            }
        })
        .collect();
    Ok(Trace { states, scatterers })
}

/// `count` independent random drops, each with its own scatterer set and
/// (when the config asks for it) a noisy position estimate.
pub fn generate_drops(config: &ScenarioConfig, count: usize) -> Vec<Placement> {
    (0..count)
        .map(|i| {
            let mut terminal = random_drop(config, &mut rng::stream(config.rng_seed, Domain::Drop, i as u64));
            terminal.timestamp = i as f64 * config.frame_duration;
            apply_error(&mut terminal, config.position_error_sigma, config.rng_seed, i as u64);
            let scatterers =
                place_scatterers(config, &mut rng::stream(config.rng_seed, Domain::Scatterers, i as u64));
            Placement { terminal, scatterers }
        })
        .collect()
}

/// `count` traces flattened into placements, trace-major.
pub fn generate_traces(
    config: &ScenarioConfig,
    count: usize,
    speed: f64,
    sample_period: f64,
) -> Result<Vec<Placement>> {
    let mut out = Vec::new();
    for t in 0..count {
        let trace = generate_trace(config, &mut rng::stream(config.rng_seed, Domain::Trace, t as u64), speed, sample_period)?;
        for state in trace.states {
            out.push(Placement {
                terminal: state,
                scatterers: trace.scatterers.clone(),
            });
        }
    }
    for (i, placement) in out.iter_mut().enumerate() {
        apply_error(&mut placement.terminal, config.position_error_sigma, config.rng_seed, i as u64);
    }
    Ok(out)
}

/// Replaces every estimate with a fresh noisy copy of the true position.
/// The true positions, and hence the channels and labels, are untouched.
pub fn with_position_error(placements: &[Placement], sigma: f64, seed: u64) -> Vec<Placement> {
    placements
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut p = p.clone();
            p.terminal.estimated_position = p.terminal.true_position;
            apply_error(&mut p.terminal, sigma, seed, i as u64);
            p
        })
        .collect()
}

fn apply_error(terminal: &mut TerminalState, sigma: f64, seed: u64, index: u64) {
    terminal.estimated_position = perturb_position(
        terminal.true_position,
        sigma,
        &mut rng::stream(seed, Domain::PositionError, index),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn drops_are_inside_the_street() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let t = random_drop(&config, &mut rng);
            assert!(config.contains(&t.true_position));
            assert_eq!(t.true_position, t.estimated_position);
        }
    }

    #[test]
    fn drop_moments_match_uniform() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let t = random_drop(&config, &mut rng);
            sx += t.true_position.x;
            sy += t.true_position.y;
        }
        assert!((sx / n as f64 - 3.0).abs() < 0.05);
        assert!((sy / n as f64 - 12.5).abs() < 0.25);
    }

    #[test]
    fn same_seed_same_drop() {
        let config = ScenarioConfig::default();
        let a = random_drop(&config, &mut ChaCha8Rng::seed_from_u64(3));
        let b = random_drop(&config, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_density_means_no_scatterers() {
        let config = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(place_scatterers(&config, &mut rng).is_empty());
    }

    #[test]
    fn scatterer_count_covers_full_support() {
        let config = ScenarioConfig::case3();
        assert_eq!(config.max_scatterer_count(), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [0usize; 8];
        for _ in 0..100_000 {
            let s = place_scatterers(&config, &mut rng);
            assert!(s.len() <= 7);
            seen[s.len()] += 1;
            for sc in &s {
                assert!(config.contains(&Position::new(sc.position[0], sc.position[1])));
                assert!((0.3..=0.9).contains(&sc.reflection_gain));
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }

    #[test]
    fn max_scatterer_override() {
        let config = ScenarioConfig {
            max_scatterers: Some(5),
            ..ScenarioConfig::case3()
        };
        assert_eq!(config.max_scatterer_count(), 5);
    }

    #[test]
    fn perturbation_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Position::new(3.0, 12.5);
        assert_eq!(perturb_position(p, 0.0, &mut rng), p);

        let n = 100_000;
        let errs: Vec<f64> = (0..n).map(|_| perturb_position(p, 0.4, &mut rng).x - p.x).collect();
        let mean = errs.iter().sum::<f64>() / n as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 0.4).abs() < 0.01);

        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let q = perturb_position(p, 1.0, &mut rng);
            sx += q.x;
            sy += q.y;
        }
        assert!((sx / n as f64 - 3.0).abs() < 0.02);
        assert!((sy / n as f64 - 12.5).abs() < 0.02);
    }

    #[test]
    fn trace_shape() {
        let config = ScenarioConfig::case3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace = generate_trace(&config, &mut rng, 15.0, 1e-3).unwrap();
        assert_eq!(trace.states.len(), 1667);
        let x0 = trace.states[0].true_position.x;
        assert!(trace.states.iter().all(|s| s.true_position.x == x0));
        assert_eq!(trace.states[0].true_position.y, 0.0);
        assert!(trace.states.iter().all(|s| s.true_position.y <= 25.0));
        assert!(generate_trace(&config, &mut rng, 0.0, 1e-3).is_err());
        assert!(generate_trace(&config, &mut rng, 15.0, -1.0).is_err());
    }

    #[test]
    fn fifty_traces_match_uncorrelated_training_size() {
        assert_eq!(50 * trace_len(25.0, 15.0, 1e-3), 83_350);
    }

    #[test]
    fn generated_drops_are_deterministic() {
        let config = ScenarioConfig {
            position_error_sigma: 0.4,
            ..ScenarioConfig::case3()
        };
        let a = generate_drops(&config, 50);
        let b = generate_drops(&config, 50);
        assert_eq!(a, b);
        assert!(a.iter().any(|p| p.terminal.estimated_position != p.terminal.true_position));
    }

    #[test]
    fn position_error_keeps_true_positions() {
        let config = ScenarioConfig::case1();
        let exact = generate_drops(&config, 20);
        let noisy = with_position_error(&exact, 0.4, 9);
        for (e, n) in exact.iter().zip(&noisy) {
            assert_eq!(e.terminal.true_position, n.terminal.true_position);
            assert_eq!(e.scatterers, n.scatterers);
        }
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::default().validate().is_ok());
        let bad = ScenarioConfig {
            tx_antennas: 6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig {
            street_width: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig {
            subcarrier_count: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_file_roundtrip() {
        let config = ScenarioConfig {
            max_scatterers: Some(5),
            ..ScenarioConfig::case3()
        };
        let text = config.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), config);
        let partial = ScenarioConfig::from_toml_str("scatterer_density = 0.01\nrx_antennas = 1\n").unwrap();
        assert_eq!(partial.rx_antennas, 1);
        assert_eq!(partial.street_length, 25.0);
        assert!(ScenarioConfig::from_toml_str("unknown_key = 3").is_err());
        assert_ne!(config.digest(), ScenarioConfig::default().digest());
    }
}
