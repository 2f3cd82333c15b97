//! Multipath MIMO channel synthesis.
//!
//! Each terminal location sees one line-of-sight ray plus one single-bounce
//! ray per scatterer. Rays carry free-space attenuation, vertical Hertzian
//! dipole element gains at both ends and, for bounced rays, the scatterer's
//! reflection amplitude. Both arrays are half-wavelength ULAs along the
//! x-axis; per-element path-length offsets enter through the per-pair delay.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{Placement, ScenarioConfig, Scatterer, TerminalState, SPEED_OF_LIGHT};

/// Dense complex matrix, row-major. Rows index receive antennas, columns
/// transmit antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: Complex64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }
}

/// One propagation ray between the base station and the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct PathComponent {
    /// Total travelled distance, meters.
    pub total_distance: f64,
    /// Delay per (receive, transmit) element pair, row-major, seconds.
    pub delays: Vec<f64>,
    /// Complex amplitude per (receive, transmit) element pair, row-major.
    pub amplitudes: Vec<Complex64>,
    /// Angle between the array axis and the departure direction, radians.
    pub departure_angle: f64,
    /// Angle between the array axis and the direction the ray arrives from, radians.
    pub arrival_angle: f64,
}

/// Per-subcarrier channel matrices for one terminal location.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub matrices: Vec<CMatrix>,
    pub terminal: TerminalState,
}

impl ChannelRealization {
    pub fn subcarrier_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn rx_antennas(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn tx_antennas(&self) -> usize {
        self.matrices[0].cols()
    }
}

/// Offset of element `i` of an `count`-element half-wavelength ULA from the
/// array centre, meters.
pub fn element_offset(i: usize, count: usize, wavelength: f64) -> f64 {
    (i as f64 - (count as f64 - 1.0) / 2.0) * wavelength / 2.0
}

/// Frequency of subcarrier `n` (zero-based), centred on the carrier.
pub fn subcarrier_frequency(config: &ScenarioConfig, n: usize) -> f64 {
    let count = config.subcarrier_count as f64;
    config.carrier_frequency + (n as f64 - (count - 1.0) / 2.0) * config.bandwidth / count
}

/// Amplitude gain of a vertical Hertzian dipole towards unit direction `dir`.
pub fn dipole_gain(dir: [f64; 3]) -> f64 {
    // power pattern 1.5 sin²ψ, ψ measured from the z-axis
    (1.5 * (1.0 - dir[2] * dir[2]).max(0.0)).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn unit(a: [f64; 3]) -> ([f64; 3], f64) {
    let len = norm(a);
    if len < 1e-9 {
        // a scatterer coinciding with an antenna; treat the ray as vertical
        return ([0.0, 0.0, 1.0], len);
    }
    ([a[0] / len, a[1] / len, a[2] / len], len)
}

/// Lists the line-of-sight ray first, then one single-bounce ray per
/// scatterer in input order.
pub fn enumerate_paths(
    config: &ScenarioConfig,
    terminal: &TerminalState,
    scatterers: &[Scatterer],
) -> Vec<PathComponent> {
    let bs = config.bs_position;
    let ue = terminal.true_position.with_height(config.terminal_height);
    let mut paths = Vec::with_capacity(1 + scatterers.len());
    let (dir, d) = unit(sub(ue, bs));
    let back = [-dir[0], -dir[1], -dir[2]];
    paths.push(make_path(config, d, dir, back, 1.0));
    for s in scatterers {
        let (dep, d1) = unit(sub(s.position, bs));
        let (arr, d2) = unit(sub(s.position, ue));
        paths.push(make_path(config, d1 + d2, dep, arr, s.reflection_gain));
    }
    paths
}

fn make_path(
    config: &ScenarioConfig,
    distance: f64,
    departure: [f64; 3],
    arrival: [f64; 3],
    reflection_gain: f64,
) -> PathComponent {
    let wavelength = config.wavelength();
    let (a_u, a_r) = (config.rx_antennas, config.tx_antennas);
    let amplitude =
        reflection_gain * wavelength / (4.0 * PI * distance) * dipole_gain(departure) * dipole_gain(arrival);
    let mut delays = Vec::with_capacity(a_u * a_r);
    for u in 0..a_u {
        let du = element_offset(u, a_u, wavelength) * arrival[0];
        for r in 0..a_r {
            let dr = element_offset(r, a_r, wavelength) * departure[0];
            delays.push((distance - dr - du) / SPEED_OF_LIGHT);
        }
    }
    PathComponent {
        total_distance: distance,
        delays,
        amplitudes: vec![Complex64::new(amplitude, 0.0); a_u * a_r],
        departure_angle: departure[0].clamp(-1.0, 1.0).acos(),
        arrival_angle: arrival[0].clamp(-1.0, 1.0).acos(),
    }
}

/// Sums all rays for subcarrier `n` (zero-based).
pub fn channel_matrix(paths: &[PathComponent], config: &ScenarioConfig, n: usize) -> CMatrix {
    let (a_u, a_r) = (config.rx_antennas, config.tx_antennas);
    let wavelength = config.wavelength();
    let f_n = subcarrier_frequency(config, n);
    let mut h = CMatrix::zeros(a_u, a_r);
    for path in paths {
        let carrier = Complex64::cis(2.0 * PI * path.total_distance / wavelength);
        for (idx, (amp, tau)) in path.amplitudes.iter().zip(&path.delays).enumerate() {
            h.data[idx] += amp * carrier * Complex64::cis(-2.0 * PI * f_n * tau);
        }
    }
    h
}

/// Channel matrices for every subcarrier at one placement.
pub fn realize(config: &ScenarioConfig, placement: &Placement) -> ChannelRealization {
    let paths = enumerate_paths(config, &placement.terminal, &placement.scatterers);
    ChannelRealization {
        matrices: (0..config.subcarrier_count)
            .map(|n| channel_matrix(&paths, config, n))
            .collect(),
        terminal: placement.terminal,
    }
}

/// A batch of channel realizations read back from a binary dump. Terminal
/// metadata is not part of the format.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBatch {
    pub subcarriers: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
    pub samples: Vec<Vec<CMatrix>>,
}

/// Writes `u32` little-endian header `N, A_u, A_r, count` followed by every
/// entry as interleaved little-endian `f64` real/imaginary parts
/// (sample-major, then subcarrier, then row-major matrix).
pub fn write_batch<W: Write>(mut out: W, realizations: &[ChannelRealization]) -> Result<()> {
    let (n, a_u, a_r) = match realizations.first() {
        Some(r) => (r.subcarrier_count(), r.rx_antennas(), r.tx_antennas()),
        None => (0, 0, 0),
    };
    for value in [n, a_u, a_r, realizations.len()] {
        let value = u32::try_from(value).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        out.write_all(&value.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(n * a_u * a_r * 16);
    for r in realizations {
        if r.subcarrier_count() != n || r.rx_antennas() != a_u || r.tx_antennas() != a_r {
            return Err(Error::Format("realizations in one batch must share dimensions".into()));
        }
        buf.clear();
        for m in &r.matrices {
            for z in m.as_slice() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_batch<R: Read>(mut input: R) -> Result<ChannelBatch> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    let field = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n, a_u, a_r, count) = (field(0), field(1), field(2), field(3));
    let mut samples = Vec::with_capacity(count);
    let mut word = [0u8; 8];
    let mut next = |input: &mut R| -> Result<f64> {
        input
            .read_exact(&mut word)
            .map_err(|e| Error::Format(format!("truncated channel batch: {e}")))?;
        Ok(f64::from_le_bytes(word))
    };
    for _ in 0..count {
        let mut matrices = Vec::with_capacity(n);
        for _ in 0..n {
            let mut data = Vec::with_capacity(a_u * a_r);
            for _ in 0..a_u * a_r {
                let re = next(&mut input)?;
                let im = next(&mut input)?;
                data.push(Complex64::new(re, im));
            }
            matrices.push(CMatrix::from_vec(a_u, a_r, data));
        }
        samples.push(matrices);
    }
    Ok(ChannelBatch {
        subcarriers: n,
        rx_antennas: a_u,
        tx_antennas: a_r,
        samples,
    })
}
