//! Scoring of allocation schemes on test channels.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelRealization};
use crate::dataset::{Dataset, LabeledPlacement};
use crate::error::{Error, Result};
use crate::learn::Predictor;
use crate::link::{Codebook, LinkModel};
use crate::oracle::{allocation_goodput, ClassEncoding, ResourceAllocation};
use crate::scenario::{Position, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    Csi,
    Rf,
    Knn,
    Geometry,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Csi, Scheme::Rf, Scheme::Knn, Scheme::Geometry];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Scheme::Csi => "csi",
            Scheme::Rf => "rf",
            Scheme::Knn => "knn",
            Scheme::Geometry => "geometry",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme {s:?}")))
    }
}

/// A test position with the channel it was labelled on.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub input: Position,
    pub label: u32,
    pub label_set: Vec<u32>,
    pub channel: ChannelRealization,
    pub optimal_goodput: f64,
}

/// Attaches the true channel of every test sample. Sample sources index
/// into `labeled`.
pub fn prepare_test(test: &Dataset, labeled: &[LabeledPlacement], config: &ScenarioConfig) -> Result<Vec<EvalSample>> {
    test.samples
        .par_iter()
        .map(|s| {
            let item = labeled.get(s.source).ok_or_else(|| {
                Error::InvalidArgument(format!("test sample refers to unknown position {}", s.source))
            })?;
            Ok(EvalSample {
                input: s.input,
                label: s.label,
                label_set: s.label_set.clone(),
                channel: channel::realize(config, &item.placement),
                optimal_goodput: item.optimal.optimal_goodput,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Row and column classes, ascending.
    pub classes: Vec<u32>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<usize>>,
    /// Per true class, predictions that fell outside `classes`.
    pub outside: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn row_sum(&self, row: usize) -> usize {
        self.counts[row].iter().sum::<usize>() + self.outside[row]
    }

    pub fn diagonal(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Rows are true classes, columns predicted. With `subset`, only samples
/// whose true class is in it are counted and the matrix is restricted to it.
pub fn confusion_matrix(predictions: &[u32], labels: &[u32], subset: Option<&[u32]>) -> ConfusionMatrix {
    let mut classes: Vec<u32> = match subset {
        Some(s) => s.to_vec(),
        None => labels.iter().chain(predictions).copied().collect(),
    };
    classes.sort_unstable();
    classes.dedup();
    let index: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![vec![0; classes.len()]; classes.len()];
    let mut outside = vec![0; classes.len()];
    for (p, l) in predictions.iter().zip(labels) {
        let Some(&row) = index.get(l) else { continue };
        match index.get(p) {
            Some(&col) => counts[row][col] += 1,
            None => outside[row] += 1,
        }
    }
    ConfusionMatrix {
        classes,
        counts,
        outside,
    }
}

/// Indices of samples whose input lies in the axis-aligned box.
pub fn in_area(inputs: &[Position], x: [f64; 2], y: [f64; 2]) -> Vec<usize> {
    inputs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.x >= x[0] && p.x <= x[1] && p.y >= y[0] && p.y <= y[1])
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub avg_goodput: f64,
    pub test_accuracy: f64,
    pub perf_adjusted_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub train_time: Option<f64>,
    pub predict_time_per_sample: Option<f64>,
    pub per_sample_goodput: Vec<f64>,
}

/// Scores `predictions` on the test channels. CSI is credited with the
/// oracle optimum; every other scheme's predicted class is decoded and its
/// goodput computed on the true channel.
pub fn evaluate(
    scheme: Scheme,
    predictions: &[u32],
    test: &[EvalSample],
    link: &LinkModel,
    encoding: &ClassEncoding,
) -> Result<SchemeResult> {
    if predictions.len() != test.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} test samples",
            predictions.len(),
            test.len()
        )));
    }
    let per_sample_goodput: Vec<f64> = predictions
        .par_iter()
        .zip(test.par_iter())
        .map(|(&pred, s)| {
            if scheme == Scheme::Csi {
                return Ok(s.optimal_goodput);
            }
            let alloc = encoding.decode(pred)?;
            Ok(allocation_goodput(&s.channel, link, &alloc).0)
        })
        .collect::<Result<_>>()?;
    let n = test.len().max(1) as f64;
    let hits = predictions.iter().zip(test).filter(|(p, s)| **p == s.label).count();
    let set_hits = predictions.iter().zip(test).filter(|(p, s)| s.label_set.contains(p)).count();
    let labels: Vec<u32> = test.iter().map(|s| s.label).collect();
    Ok(SchemeResult {
        scheme,
        avg_goodput: per_sample_goodput.iter().sum::<f64>() / n,
        test_accuracy: hits as f64 / n,
        perf_adjusted_accuracy: set_hits as f64 / n,
        confusion: confusion_matrix(predictions, &labels, None),
        train_time: None,
        predict_time_per_sample: None,
        per_sample_goodput,
    })
}

/// The oracle's own choice for each test sample.
pub fn csi_predictions(test: &[EvalSample]) -> Vec<u32> {
    test.iter().map(|s| s.label).collect()
}

/// Decile bins of BS distance, each mapped to a modal MCS index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMcsTable {
    /// Inner bin edges, ascending; bin `i` holds `edges[i-1] <= d < edges[i]`.
    pub edges: Vec<f64>,
    pub mcs: Vec<usize>,
}

impl DistanceMcsTable {
    pub fn bin(&self, distance: f64) -> usize {
        self.edges.partition_point(|&e| e <= distance)
    }

    pub fn lookup(&self, distance: f64) -> usize {
        self.mcs[self.bin(distance)]
    }
}

pub const DISTANCE_BINS: usize = 10;

/// Bins training distances into deciles and takes the modal optimal MCS of
/// each bin (lowest index on ties). An empty bin copies the nearest
/// non-empty bin below it, or above when there is none below.
pub fn calibrate_distance_mcs(distances: &[f64], mcs: &[usize]) -> Result<DistanceMcsTable> {
    if distances.is_empty() {
        return Err(Error::EmptyInput("distance calibration needs training samples"));
    }
    if distances.len() != mcs.len() {
        return Err(Error::InvalidArgument("distances and MCS indices differ in length".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = (1..DISTANCE_BINS).map(|i| sorted[i * n / DISTANCE_BINS]).collect();
    let table = DistanceMcsTable {
        edges,
        mcs: vec![0; DISTANCE_BINS],
    };
    let mut histograms: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); DISTANCE_BINS];
    for (&d, &m) in distances.iter().zip(mcs) {
        *histograms[table.bin(d)].entry(m).or_insert(0) += 1;
    }
    let modes: Vec<Option<usize>> = histograms
        .iter()
        .map(|h| {
            let top = h.values().copied().max()?;
            h.iter().find(|(_, &c)| c == top).map(|(&m, _)| m)
        })
        .collect();
    let mut out = Vec::with_capacity(DISTANCE_BINS);
    for i in 0..DISTANCE_BINS {
        let below = (0..=i).rev().find_map(|j| modes[j]);
        let value = below.or_else(|| (i..DISTANCE_BINS).find_map(|j| modes[j]));
        out.push(value.expect("at least one bin is populated"));
    }
    Ok(DistanceMcsTable { mcs: out, ..table })
}

/// Angle in degrees between the x-axis and the horizontal direction `from → to`,
/// in `[0, 180]`. Coincident points give broadside.
pub fn axis_angle_deg(from: &Position, to: &Position) -> f64 {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let r = dx.hypot(dy);
    if r == 0.0 {
        return 90.0;
    }
    (dx / r).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Beams from position geometry alone, MCS from calibrated distance bins.
#[derive(Debug, Clone)]
pub struct GeometryScheme {
    pub tx_codebook: Codebook,
    pub rx_codebook: Codebook,
    pub bs: Position,
    pub table: DistanceMcsTable,
    pub encoding: ClassEncoding,
}

impl GeometryScheme {
    pub fn new(link: &LinkModel, config: &ScenarioConfig, table: DistanceMcsTable) -> Self {
        Self {
            tx_codebook: link.tx_codebook.clone(),
            rx_codebook: link.rx_codebook.clone(),
            bs: config.bs_ground(),
            table,
            encoding: ClassEncoding::for_link(link),
        }
    }

    /// Calibrates the distance table from a training set's labels.
    pub fn calibrate(link: &LinkModel, config: &ScenarioConfig, train: &Dataset) -> Result<Self> {
        let encoding = ClassEncoding::for_link(link);
        let bs = config.bs_ground();
        let distances: Vec<f64> = train.samples.iter().map(|s| s.input.distance(&bs)).collect();
        let mcs = train
            .samples
            .iter()
            .map(|s| Ok(encoding.decode(s.label)?.m_idx))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(link, config, calibrate_distance_mcs(&distances, &mcs)?))
    }

    pub fn allocate(&self, p: &Position) -> ResourceAllocation {
        let v = self.tx_codebook.nearest(axis_angle_deg(&self.bs, p));
        let u = self.rx_codebook.nearest(axis_angle_deg(p, &self.bs));
        let m = self.table.lookup(p.distance(&self.bs)).min(self.encoding.mcs_count - 1);
        self.encoding.allocation(v, u, m)
    }
}

impl Predictor for GeometryScheme {
    fn predict(&self, p: &Position) -> u32 {
        self.allocate(p).class_id
    }
}

/// Median wall-clock seconds over `runs` calls (at least 5), plus the last
/// result.
pub fn median_time<T>(runs: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let runs = runs.max(5);
    let mut times = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs {
        let start = Instant::now();
        let out = f();
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    times.sort_by(f64::total_cmp);
    (times[runs / 2], last.expect("ran at least once"))
}

/// Mean single-threaded prediction time per sample; `None` for an empty set.
pub fn predict_time_per_sample(predictor: &dyn Predictor, points: &[Position]) -> (Option<f64>, Vec<u32>) {
    if points.is_empty() {
        return (None, Vec::new());
    }
    let start = Instant::now();
    let preds: Vec<u32> = points.iter().map(|p| predictor.predict(p)).collect();
    (Some(start.elapsed().as_secs_f64() / points.len() as f64), preds)
}

/// One line of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub axis: String,
    pub value: String,
    pub formulation: String,
    pub scheme: Scheme,
    pub avg_goodput: f64,
    pub goodput_ratio_to_csi: f64,
    pub test_accuracy: f64,
    pub perf_adjusted_accuracy: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub class_count: usize,
    pub train_time_s: Option<f64>,
    pub predict_time_s: Option<f64>,
    pub model_bytes: Option<usize>,
}

pub const RESULTS_HEADER: &str = "axis,value,formulation,scheme,avg_goodput_bps,goodput_ratio_to_csi,test_accuracy,perf_adjusted_accuracy,train_samples,test_samples,class_count";

/// One results-table line, without the newline.
pub fn results_line(r: &ReportRow) -> String {
    format!(
        "{},{},{},{},{:.6e},{:.6},{:.6},{:.6},{},{},{}",
        r.axis,
        r.value,
        r.formulation,
        r.scheme,
        r.avg_goodput,
        r.goodput_ratio_to_csi,
        r.test_accuracy,
        r.perf_adjusted_accuracy,
        r.train_samples,
        r.test_samples,
        r.class_count
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Result columns only; deterministic for a fixed seed.
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&results_line(r));
            out.push('\n');
        }
        out
    }

    /// Wall-clock measurements, which vary between runs.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("axis,value,formulation,scheme,train_time_s,predict_time_per_sample_s,model_bytes\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |t| format!("{t:.6e}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.axis,
                r.value,
                r.formulation,
                r.scheme,
                opt(r.train_time_s),
                opt(r.predict_time_s),
                r.model_bytes.map_or(String::new(), |b| b.to_string())
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build, Formulation, Provenance};
    use crate::link::LinkModel;
    use crate::pipeline::label_placements;
    use crate::scenario::generate_drops;

    #[test]
    fn confusion_counts() {
        let labels = [1, 1, 2, 3, 3, 3];
        let perfect = confusion_matrix(&labels, &labels, None);
        assert_eq!(perfect.diagonal(), 6);
        assert_eq!(perfect.counts, vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 3]]);
        let preds = [1, 2, 2, 3, 1, 9];
        let m = confusion_matrix(&preds, &labels, None);
        assert_eq!(m.classes, vec![1, 2, 3, 9]);
        assert_eq!((0..4).map(|i| m.row_sum(i)).collect::<Vec<_>>(), vec![2, 1, 3, 0]);
        let sub = confusion_matrix(&preds, &labels, Some(&[3, 1]));
        assert_eq!(sub.classes, vec![1, 3]);
        assert_eq!(sub.counts, vec![vec![1, 0], vec![1, 1]]);
        assert_eq!(sub.outside, vec![1, 1]);
        assert_eq!(sub.row_sum(1), 3);
    }

    #[test]
    fn calibration_rules() {
        let d: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let flat = calibrate_distance_mcs(&d, &vec![4; 100]).unwrap();
        assert_eq!(flat.mcs, vec![4; 10]);
        // free-space-like: MCS falls with distance
        let m: Vec<usize> = d.iter().map(|&x| 14 - (x / 8.0) as usize).collect();
        let table = calibrate_distance_mcs(&d, &m).unwrap();
        assert!(table.mcs.windows(2).all(|w| w[0] >= w[1]), "{:?}", table.mcs);
        for (&x, _) in d.iter().zip(&m) {
            let bin = table.bin(x);
            let members: Vec<usize> = d
                .iter()
                .zip(&m)
                .filter(|(&y, _)| table.bin(y) == bin)
                .map(|(_, &k)| k)
                .collect();
            let mut counts = BTreeMap::new();
            for k in members {
                *counts.entry(k).or_insert(0) += 1;
            }
            let top = *counts.values().max().unwrap();
            let mode = counts.iter().find(|(_, &c)| c == top).map(|(&k, _)| k).unwrap();
            assert_eq!(table.lookup(x), mode);
        }
        // identical distances leave most bins empty; they inherit
        let same = calibrate_distance_mcs(&[5.0; 20], &[3; 20]).unwrap();
        assert_eq!(same.mcs, vec![3; 10]);
        assert!(calibrate_distance_mcs(&[], &[]).is_err());
    }

    #[test]
    fn geometry_beam_choice() {
        let config = ScenarioConfig::case1();
        let link = LinkModel::from_config(&config).unwrap();
        let table = DistanceMcsTable {
            edges: vec![],
            mcs: vec![2],
        };
        let g = GeometryScheme::new(&link, &config, table);
        let bs = config.bs_ground();
        // 120 degrees is a transmit beam; 60 degrees is a receive filter
        let r = 10.0;
        let a = 120f64.to_radians();
        let p = Position::new(bs.x + r * a.cos(), bs.y + r * a.sin());
        let alloc = g.allocate(&p);
        assert_eq!(link.tx_codebook.angles_deg[alloc.v_idx], 120.0);
        assert_eq!(link.rx_codebook.angles_deg[alloc.u_idx], 60.0);
        assert_eq!(alloc.m_idx, 2);
        // midway between transmit beams at 120 and 123 degrees
        assert_eq!(link.tx_codebook.nearest(121.5), alloc.v_idx);
        assert_eq!(axis_angle_deg(&bs, &bs), 90.0);
    }

    #[test]
    fn evaluation_identities() {
        let config = ScenarioConfig::case3();
        let link = LinkModel::from_config(&config).unwrap();
        let enc = ClassEncoding::for_link(&link);
        let labeled = label_placements(&config, &link, &generate_drops(&config, 40));
        let d = build(&labeled, Formulation::D1, Provenance::Uncorrelated).unwrap();
        let test = prepare_test(&d, &labeled, &config).unwrap();
        let csi = evaluate(Scheme::Csi, &csi_predictions(&test), &test, &link, &enc).unwrap();
        let same = evaluate(Scheme::Rf, &csi_predictions(&test), &test, &link, &enc).unwrap();
        assert_eq!(same.test_accuracy, 1.0);
        assert_eq!(same.perf_adjusted_accuracy, 1.0);
        assert_eq!(same.per_sample_goodput, csi.per_sample_goodput);

        // another member of the optimum set: wrong label, optimal goodput
        let alt: Vec<u32> = test.iter().map(|s| *s.label_set.last().unwrap()).collect();
        let r = evaluate(Scheme::Knn, &alt, &test, &link, &enc).unwrap();
        assert_eq!(r.perf_adjusted_accuracy, 1.0);
        assert_eq!(r.per_sample_goodput, csi.per_sample_goodput);
        let multi = test.iter().filter(|s| s.label_set.len() > 1).count();
        assert_eq!(r.test_accuracy, (test.len() - multi) as f64 / test.len() as f64);

        let fixed = vec![enc.encode(0, 0, 0); test.len()];
        let bad = evaluate(Scheme::Geometry, &fixed, &test, &link, &enc).unwrap();
        assert!(bad.perf_adjusted_accuracy >= bad.test_accuracy);
        for (g, t) in bad.per_sample_goodput.iter().zip(&csi.per_sample_goodput) {
            assert!(g <= t);
        }
        assert!(evaluate(Scheme::Rf, &vec![u32::MAX; test.len()], &test, &link, &enc).is_err());
    }

    #[test]
    fn timing_harness() {
        let (t, v) = median_time(3, || 7);
        assert!(t >= 0.0);
        assert_eq!(v, 7);
        let table = DistanceMcsTable {
            edges: vec![],
            mcs: vec![0],
        };
        let config = ScenarioConfig::case1();
        let link = LinkModel::from_config(&config).unwrap();
        let g = GeometryScheme::new(&link, &config, table);
        assert_eq!(predict_time_per_sample(&g, &[]).0, None);
        assert!(predict_time_per_sample(&g, &[Position::new(1.0, 1.0)]).0.is_some());
    }

    #[test]
    fn csv_is_stable() {
        let row = ReportRow {
            axis: "sigma".into(),
            value: "0.25".into(),
            formulation: "d2".into(),
            scheme: Scheme::Rf,
            avg_goodput: 1.23456789e8,
            goodput_ratio_to_csi: 0.95,
            test_accuracy: 0.5,
            perf_adjusted_accuracy: 0.75,
            train_samples: 10,
            test_samples: 5,
            class_count: 3,
            train_time_s: Some(0.1),
            predict_time_s: None,
            model_bytes: Some(99),
        };
        let report = ExperimentReport {
            seed: 1,
            config: ScenarioConfig::case1(),
            rows: vec![row],
        };
        assert_eq!(
            report.results_csv().lines().nth(1).unwrap(),
            "sigma,0.25,d2,rf,1.234568e8,0.950000,0.500000,0.750000,10,5,3"
        );
        assert!(report.timing_csv().lines().nth(1).unwrap().ends_with(",99"));
        let back: ExperimentReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }
}
