//! Position → allocation datasets.
//!
//! Three labelling rules are supported when several allocations tie at the
//! optimum: the first optimum in grid order ([`Formulation::D1`]), the
//! optimum with the highest effective SNR ([`Formulation::D2`]), or every
//! optimum as its own sample ([`Formulation::D3`]). Whatever the rule, each
//! sample keeps the complete optimum set for set-membership scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{first_optimal, max_eeff_optimal, OptimalSet, ResourceAllocation};
use crate::scenario::{Placement, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formulation {
    D1,
    D2,
    D3,
}

impl Formulation {
    pub const ALL: [Formulation; 3] = [Formulation::D1, Formulation::D2, Formulation::D3];
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::D1 => "d1",
            Formulation::D2 => "d2",
            Formulation::D3 => "d3",
        })
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(Formulation::D1),
            "d2" => Ok(Formulation::D2),
            "d3" => Ok(Formulation::D3),
            other => Err(Error::InvalidArgument(format!("unknown formulation {other:?}"))),
        }
    }
}

/// A placement together with its exhaustive-search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPlacement {
    pub placement: Placement,
    pub optimal: OptimalSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Estimated terminal position; height is not an input.
    pub input: Position,
    pub label: u32,
    /// Every optimal class for this position, in grid order.
    pub label_set: Vec<u32>,
    /// Index of the originating labelled placement.
    pub source: usize,
}

/// How the positions were collected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Uncorrelated,
    Traces {
        count: usize,
        speed: f64,
        /// Native sampling period, seconds.
        period: f64,
        samples_per_trace: usize,
        /// Keep every `stride`-th native sample.
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub formulation: Formulation,
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
    pub class_registry: BTreeMap<u32, ResourceAllocation>,
}

/// Labels `items` under `formulation`. Under D3 a position with `k` optima
/// becomes `k` samples.
pub fn build(items: &[LabeledPlacement], formulation: Formulation, provenance: Provenance) -> Result<Dataset> {
    if items.is_empty() {
        return Err(Error::EmptyInput("dataset needs at least one labelled position"));
    }
    let mut samples = Vec::with_capacity(items.len());
    let mut class_registry = BTreeMap::new();
    for (source, item) in items.iter().enumerate() {
        let set = &item.optimal;
        if set.allocations.is_empty() {
            return Err(Error::InvalidArgument(format!("position {source} has an empty optimum set")));
        }
        for a in &set.allocations {
            class_registry.insert(a.class_id, *a);
        }
        let input = item.placement.terminal.estimated_position;
        let label_set = set.class_ids();
        let labels: Vec<u32> = match formulation {
            Formulation::D1 => vec![first_optimal(set).class_id],
            Formulation::D2 => vec![max_eeff_optimal(set).class_id],
            Formulation::D3 => label_set.clone(),
        };
        for label in labels {
            samples.push(Sample {
                input,
                label,
                label_set: label_set.clone(),
                source,
            });
        }
    }
    Ok(Dataset {
        formulation,
        samples,
        provenance,
        class_registry,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct source positions.
    pub fn position_count(&self) -> usize {
        self.samples.iter().map(|s| s.source).collect::<BTreeSet<_>>().len()
    }

    /// Number of samples per label.
    pub fn class_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn inputs(&self) -> Vec<Position> {
        self.samples.iter().map(|s| s.input).collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.label).collect()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            formulation: self.formulation,
            samples,
            provenance: self.provenance.clone(),
            class_registry: self.class_registry.clone(),
        }
    }

    /// Keeps the samples whose source satisfies `keep`.
    pub fn filter_sources(&self, mut keep: impl FnMut(usize) -> bool) -> Dataset {
        self.with_samples(self.samples.iter().filter(|s| keep(s.source)).cloned().collect())
    }

    /// One sample per position. D3 expansions collapse onto their first
    /// optimum.
    pub fn unique_per_position(&self) -> Dataset {
        let mut seen = BTreeSet::new();
        let samples = self
            .samples
            .iter()
            .filter(|s| seen.insert(s.source))
            .map(|s| {
                let mut s = s.clone();
                if self.formulation == Formulation::D3 {
                    s.label = s.label_set[0];
                }
                s
            })
            .collect();
        self.with_samples(samples)
    }
}

/// Splits by position: every expansion of a position lands on the same side.
/// The test side holds one sample per position.
pub fn split<R: Rng + ?Sized>(dataset: &Dataset, train_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut sources: Vec<usize> = dataset.samples.iter().map(|s| s.source).collect::<BTreeSet<_>>().into_iter().collect();
    sources.shuffle(rng);
    let n_train = (sources.len() as f64 * train_fraction).round() as usize;
    let train_sources: BTreeSet<usize> = sources[..n_train].iter().copied().collect();
    let train = dataset.filter_sources(|s| train_sources.contains(&s));
    let test = dataset.filter_sources(|s| !train_sources.contains(&s)).unique_per_position();
    Ok((train, test))
}

/// Keeps every `k`-th native sample of each trace, `k = period / native`.
pub fn undersample(dataset: &Dataset, period_ms: f64) -> Result<Dataset> {
    let Provenance::Traces {
        count,
        speed,
        period,
        samples_per_trace,
        stride,
    } = dataset.provenance
    else {
        return Err(Error::InvalidArgument("undersampling needs a trace dataset".into()));
    };
    let native_ms = period * 1e3;
    let ratio = period_ms / native_ms;
    let k = ratio.round();
    if !(k >= 1.0 && (ratio - k).abs() < 1e-9 * ratio.max(1.0)) {
        return Err(Error::InvalidArgument(format!(
            "undersampling period {period_ms} ms is not a whole multiple of the native {native_ms} ms"
        )));
    }
    let k = k as usize;
    if k % stride != 0 {
        return Err(Error::InvalidArgument(format!(
            "dataset already undersampled by {stride}; {k} is not a multiple"
        )));
    }
    let mut out = dataset.filter_sources(|s| (s % samples_per_trace) % k == 0);
    out.provenance = Provenance::Traces {
        count,
        speed,
        period,
        samples_per_trace,
        stride: k,
    };
    Ok(out)
}

/// Gini coefficient of a set of counts: 0 for perfectly even, towards 1 for
/// concentration in few entries.
pub fn gini_coefficient(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let weighted: f64 = sorted.iter().enumerate().map(|(i, c)| (i as f64 + 1.0) * c).sum();
    (2.0 * weighted) / (n * total) - (n + 1.0) / n
}

const MAGIC: &str = "# coordra dataset v1";

/// Writes the canonical text form.
///
/// Header lines start with `#`. Each data line is
/// `x,y,label,set_1;set_2;...,source`.
pub fn to_text(dataset: &Dataset) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("# formulation {}\n", dataset.formulation));
    match &dataset.provenance {
        Provenance::Uncorrelated => out.push_str("# provenance uncorrelated\n"),
        Provenance::Traces {
            count,
            speed,
            period,
            samples_per_trace,
            stride,
        } => out.push_str(&format!(
            "# provenance traces {count} {speed:?} {period:?} {samples_per_trace} {stride}\n"
        )),
    }
    for (id, a) in &dataset.class_registry {
        out.push_str(&format!("# class {id} {} {} {}\n", a.v_idx, a.u_idx, a.m_idx));
    }
    for s in &dataset.samples {
        let set: Vec<String> = s.label_set.iter().map(u32::to_string).collect();
        out.push_str(&format!(
            "{:?},{:?},{},{},{}\n",
            s.input.x,
            s.input.y,
            s.label,
            set.join(";"),
            s.source
        ));
    }
    out
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(dataset))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_text(&std::fs::read_to_string(path)?, path)
}

/// Parses [`to_text`] output; errors carry 1-based line numbers.
pub fn from_text(text: &str, path: &Path) -> Result<Dataset> {
    let mut formulation = None;
    let mut provenance = None;
    let mut class_registry = BTreeMap::new();
    let mut samples = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::parse(path, 1, "missing dataset header")),
    }
    for (i, raw) in lines {
        let lineno = i + 1;
        let err = |msg: String| Error::parse(path, lineno, msg);
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let words: Vec<&str> = header.split_whitespace().collect();
            match words.as_slice() {
                ["formulation", f] => formulation = Some(f.parse().map_err(|e: Error| err(e.to_string()))?),
                ["provenance", "uncorrelated"] => provenance = Some(Provenance::Uncorrelated),
                ["provenance", "traces", count, speed, period, spt, stride] => {
                    let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("provenance: {e}")));
                    let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("provenance: {e}")));
                    provenance = Some(Provenance::Traces {
                        count: int(count)?,
                        speed: num(speed)?,
                        period: num(period)?,
                        samples_per_trace: int(spt)?,
                        stride: int(stride)?,
                    });
                }
                ["class", id, v, u, m] => {
                    let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("class entry: {e}")));
                    let id: u32 = id.parse().map_err(|e| err(format!("class id: {e}")))?;
                    class_registry.insert(
                        id,
                        ResourceAllocation {
                            v_idx: int(v)?,
                            u_idx: int(u)?,
                            m_idx: int(m)?,
                            class_id: id,
                        },
                    );
                }
                _ => return Err(err(format!("unrecognised header {line:?}"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let x: f64 = fields[0].parse().map_err(|e| err(format!("x: {e}")))?;
        let y: f64 = fields[1].parse().map_err(|e| err(format!("y: {e}")))?;
        let label: u32 = fields[2].parse().map_err(|e| err(format!("label: {e}")))?;
        if fields[3].is_empty() {
            return Err(err("empty label set".into()));
        }
        let label_set = fields[3]
            .split(';')
            .map(|t| t.parse::<u32>().map_err(|e| err(format!("label set: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if !label_set.contains(&label) {
            return Err(err(format!("label {label} missing from its label set")));
        }
        if label_set.iter().collect::<BTreeSet<_>>().len() != label_set.len() {
            return Err(err("duplicate entries in label set".into()));
        }
        let source: usize = fields[4].parse().map_err(|e| err(format!("source: {e}")))?;
        samples.push(Sample {
            input: Position::new(x, y),
            label,
            label_set,
            source,
        });
    }
    let line_count = text.lines().count();
    Ok(Dataset {
        formulation: formulation.ok_or_else(|| Error::parse(path, line_count, "missing formulation header"))?,
        samples,
        provenance: provenance.ok_or_else(|| Error::parse(path, line_count, "missing provenance header"))?,
        class_registry,
    })
}
