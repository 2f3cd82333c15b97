//! End-to-end experiments: generate, label, split, train, evaluate.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, Formulation, LabeledPlacement, Provenance};
use crate::error::{Error, Result};
use crate::eval::{
    self, csi_predictions, median_time, predict_time_per_sample, EvalSample, ExperimentReport, GeometryScheme,
    ReportRow, Scheme, SchemeResult,
};
use crate::learn::{model_size, rf_train, KnnModel, Predictor};
use crate::link::LinkModel;
use crate::oracle::ClassEncoding;
use crate::pipeline::{label_placements, LabelCache};
use crate::rng::{self, Domain};
use crate::scenario::{generate_drops, generate_traces, with_position_error, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    None,
    Sigma,
    Rho,
    Antennas,
    SampleCount,
    Traces,
    UndersamplePeriod,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::None => "none",
            SweepAxis::Sigma => "sigma",
            SweepAxis::Rho => "rho",
            SweepAxis::Antennas => "antennas",
            SweepAxis::SampleCount => "sample_count",
            SweepAxis::Traces => "traces",
            SweepAxis::UndersamplePeriod => "undersample_period",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => SweepAxis::None,
            "sigma" => SweepAxis::Sigma,
            "rho" => SweepAxis::Rho,
            "antennas" => SweepAxis::Antennas,
            "sample_count" => SweepAxis::SampleCount,
            "traces" => SweepAxis::Traces,
            "undersample_period" => SweepAxis::UndersamplePeriod,
            other => return Err(Error::InvalidArgument(format!("unknown sweep axis {other:?}"))),
        })
    }
}

/// One sweep axis and its values, written `axis=v1,v2,...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

impl Sweep {
    pub fn none() -> Self {
        Self {
            axis: SweepAxis::None,
            values: vec![String::new()],
        }
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (axis, list) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("sweep must look like axis=v1,v2; got {s:?}")))?;
        let axis: SweepAxis = axis.trim().parse()?;
        if axis == SweepAxis::None {
            return Ok(Sweep::none());
        }
        let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!("sweep {axis} has no values")));
        }
        let sweep = Sweep { axis, values };
        for v in &sweep.values {
            sweep.check_value(v)?;
        }
        Ok(sweep)
    }
}

impl Sweep {
    fn check_value(&self, v: &str) -> Result<()> {
        let bad = |why: &str| Error::InvalidArgument(format!("{} value {v:?}: {why}", self.axis));
        match self.axis {
            SweepAxis::None => Ok(()),
            SweepAxis::Sigma | SweepAxis::Rho => match v.parse::<f64>() {
                Ok(x) if x >= 0.0 && x.is_finite() => Ok(()),
                _ => Err(bad("expected a non-negative number")),
            },
            SweepAxis::UndersamplePeriod => match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x.is_finite() => Ok(()),
                _ => Err(bad("expected a positive period in ms")),
            },
            SweepAxis::SampleCount | SweepAxis::Traces => match v.parse::<usize>() {
                Ok(x) if x > 0 => Ok(()),
                _ => Err(bad("expected a positive integer")),
            },
            SweepAxis::Antennas => parse_antennas(v).map(|_| ()),
        }
    }
}

/// Parses `AxB` into (transmit, receive) antenna counts.
pub fn parse_antennas(v: &str) -> Result<(usize, usize)> {
    let err = || Error::InvalidArgument(format!("antenna setting {v:?} must look like 8x2"));
    let (a, b) = v.split_once(['x', 'X']).ok_or_else(err)?;
    Ok((a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?))
}

/// Learner hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Learners {
    pub trees: usize,
    pub depth: usize,
    pub k: usize,
}

impl Default for Learners {
    fn default() -> Self {
        Self {
            trees: 50,
            depth: 12,
            k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub config: ScenarioConfig,
    pub formulations: Vec<Formulation>,
    pub learners: Vec<Learners>,
    pub positions: usize,
    pub train_fraction: f64,
    pub traces: usize,
    pub trace_speed: f64,
    pub trace_period: f64,
    pub sweep: Sweep,
    pub seed: u64,
    /// Time training as a median over repeated runs.
    pub timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            config: ScenarioConfig::case1(),
            formulations: vec![Formulation::D2],
            learners: vec![Learners::default()],
            positions: 20_000,
            train_fraction: 2.0 / 3.0,
            traces: 10,
            trace_speed: 15.0,
            trace_period: 1e-3,
            sweep: Sweep::none(),
            seed: 1,
            timing: false,
        }
    }
}

/// Outcome of one scheme in one run, with model-specific extras.
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub result: SchemeResult,
    pub model_bytes: Option<usize>,
}

/// Trains RF, KNN and the geometry baseline on `train` and scores them, plus
/// the CSI optimum, on `test`. Results come in [`Scheme::ALL`] order.
pub fn run_schemes(
    config: &ScenarioConfig,
    link: &LinkModel,
    train: &Dataset,
    test: &[EvalSample],
    learners: &Learners,
    seed: u64,
    timing: bool,
) -> Result<Vec<SchemeRun>> {
    let enc = ClassEncoding::for_link(link);
    let points = train.inputs();
    let labels = train.labels();
    let queries: Vec<_> = test.iter().map(|s| s.input).collect();

    let timed = |f: &mut dyn FnMut() -> Result<Box<dyn Predictor>>| -> Result<(f64, Box<dyn Predictor>)> {
        if timing {
            let (t, model) = median_time(5, &mut *f);
            Ok((t, model?))
        } else {
            let start = Instant::now();
            let model = f()?;
            Ok((start.elapsed().as_secs_f64(), model))
        }
    };

    let mut out = Vec::with_capacity(4);
    let csi = eval::evaluate(Scheme::Csi, &csi_predictions(test), test, link, &enc)?;
    out.push(SchemeRun {
        result: csi,
        model_bytes: None,
    });

    let mut forest_bytes = None;
    let (rf_time, rf) = timed(&mut || {
        let forest = rf_train(&points, &labels, learners.trees, learners.depth, seed)?;
        forest_bytes = Some(model_size(&forest));
        Ok(Box::new(forest) as Box<dyn Predictor>)
    })?;
    let (knn_time, knn) = timed(&mut || {
        Ok(Box::new(KnnModel::fit(points.clone(), labels.clone(), learners.k)?) as Box<dyn Predictor>)
    })?;
    let (geo_time, geo) = timed(&mut || Ok(Box::new(GeometryScheme::calibrate(link, config, train)?) as Box<dyn Predictor>))?;

    for (scheme, time, model, bytes) in [
        (Scheme::Rf, rf_time, rf, forest_bytes),
        (Scheme::Knn, knn_time, knn, None),
        (Scheme::Geometry, geo_time, geo, None),
    ] {
        let (per_sample, preds) = predict_time_per_sample(model.as_ref(), &queries);
        let mut result = eval::evaluate(scheme, &preds, test, link, &enc)?;
        result.train_time = Some(time);
        result.predict_time_per_sample = per_sample;
        out.push(SchemeRun {
            result,
            model_bytes: bytes,
        });
    }
    Ok(out)
}

/// Seeded position-wise split of a labelled dataset.
pub fn split_dataset(d: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    dataset::split(d, fraction, &mut rng::stream(seed, Domain::Split, 0))
}

struct Point {
    config: ScenarioConfig,
    positions: usize,
    sigma: f64,
    train_traces: Option<usize>,
    undersample_ms: Option<f64>,
}

fn point_for(spec: &ExperimentSpec, value: &str) -> Result<Point> {
    let mut p = Point {
        config: spec.config.clone(),
        positions: spec.positions,
        sigma: spec.config.position_error_sigma,
        train_traces: None,
        undersample_ms: None,
    };
    p.config.rng_seed = spec.seed;
    let num = |v: &str| {
        v.parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad {} value {v:?}", spec.sweep.axis)))
    };
    let int = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad {} value {v:?}", spec.sweep.axis)))
    };
    match spec.sweep.axis {
        SweepAxis::None => {}
        SweepAxis::Sigma => p.sigma = num(value)?,
        SweepAxis::Rho => p.config.scatterer_density = num(value)?,
        SweepAxis::Antennas => {
            let (a_r, a_u) = parse_antennas(value)?;
            p.config.tx_antennas = a_r;
            p.config.rx_antennas = a_u;
        }
        SweepAxis::SampleCount => p.positions = int(value)?,
        SweepAxis::Traces => p.train_traces = Some(int(value)?),
        SweepAxis::UndersamplePeriod => {
            p.train_traces = Some(spec.traces);
            p.undersample_ms = Some(num(value)?);
        }
    }
    // labels never depend on the position error, so they are computed once
    // with exact positions and the error is applied afterwards
    p.config.position_error_sigma = 0.0;
    p.config.validate()?;
    Ok(p)
}

/// Labels `count` uncorrelated drops, through the cache when one is given.
pub fn labeled_drops(
    config: &ScenarioConfig,
    link: &LinkModel,
    count: usize,
    cache: Option<&LabelCache>,
) -> Result<Vec<LabeledPlacement>> {
    let generate = || Ok(generate_drops(config, count));
    match cache {
        Some(c) => c.get_or_label(config, link, &format!("drops-{count}"), generate),
        None => Ok(label_placements(config, link, &generate()?)),
    }
}

/// Labels `count` traces, through the cache when one is given.
pub fn labeled_traces(
    config: &ScenarioConfig,
    link: &LinkModel,
    count: usize,
    speed: f64,
    period: f64,
    cache: Option<&LabelCache>,
) -> Result<Vec<LabeledPlacement>> {
    let generate = || generate_traces(config, count, speed, period);
    match cache {
        Some(c) => c.get_or_label(config, link, &format!("traces-{count}-{speed}-{period}"), generate),
        None => Ok(label_placements(config, link, &generate()?)),
    }
}

/// Replaces position estimates, keeping placements and labels.
pub fn with_error(items: &[LabeledPlacement], sigma: f64, seed: u64) -> Vec<LabeledPlacement> {
    let placements: Vec<_> = items.iter().map(|i| i.placement.clone()).collect();
    with_position_error(&placements, sigma, seed)
        .into_iter()
        .zip(items)
        .map(|(placement, item)| LabeledPlacement {
            placement,
            optimal: item.optimal.clone(),
        })
        .collect()
}

/// Runs every sweep point, formulation and learner setting of `spec`.
///
/// `on_row` sees each finished row as soon as it exists, so callers can
/// flush partial results.
pub fn run(spec: &ExperimentSpec, cache: Option<&LabelCache>, mut on_row: impl FnMut(&ReportRow)) -> Result<ExperimentReport> {
    if spec.formulations.is_empty() || spec.learners.is_empty() {
        return Err(Error::InvalidArgument("experiment needs a formulation and a learner setting".into()));
    }
    let mut rows = Vec::new();
    for value in &spec.sweep.values {
        let point = point_for(spec, value)?;
        let config = &point.config;
        let link = LinkModel::from_config(config)?;
        let drops = labeled_drops(config, &link, point.positions, cache)?;
        let drops = if point.sigma > 0.0 {
            with_error(&drops, point.sigma, spec.seed)
        } else {
            drops
        };
        let traces = match point.train_traces {
            Some(n) => Some(labeled_traces(config, &link, n, spec.trace_speed, spec.trace_period, cache)?),
            None => None,
        };
        for &formulation in &spec.formulations {
            let full = dataset::build(&drops, formulation, Provenance::Uncorrelated)?;
            let (mut train, test) = split_dataset(&full, spec.train_fraction, spec.seed)?;
            if let Some(items) = &traces {
                let spt = crate::scenario::trace_len(config.street_length, spec.trace_speed, spec.trace_period);
                train = dataset::build(
                    items,
                    formulation,
                    Provenance::Traces {
                        count: point.train_traces.unwrap_or(0),
                        speed: spec.trace_speed,
                        period: spec.trace_period,
                        samples_per_trace: spt,
                        stride: 1,
                    },
                )?;
                if let Some(ms) = point.undersample_ms {
                    train = dataset::undersample(&train, ms)?;
                }
            }
            let eval_samples = eval::prepare_test(&test, &drops, config)?;
            for learners in &spec.learners {
                let runs = run_schemes(config, &link, &train, &eval_samples, learners, spec.seed, spec.timing)?;
                let csi = runs[0].result.avg_goodput;
                for r in runs {
                    let row = ReportRow {
                        axis: spec.sweep.axis.to_string(),
                        value: value.clone(),
                        formulation: format!("{formulation}/rf{}x{}/k{}", learners.trees, learners.depth, learners.k),
                        scheme: r.result.scheme,
                        avg_goodput: r.result.avg_goodput,
                        goodput_ratio_to_csi: if csi > 0.0 { r.result.avg_goodput / csi } else { 0.0 },
                        test_accuracy: r.result.test_accuracy,
                        perf_adjusted_accuracy: r.result.perf_adjusted_accuracy,
                        train_samples: train.len(),
                        test_samples: eval_samples.len(),
                        class_count: train.class_counts().len(),
                        train_time_s: r.result.train_time,
                        predict_time_s: r.result.predict_time_per_sample,
                        model_bytes: r.model_bytes,
                    };
                    on_row(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(ExperimentReport {
        seed: spec.seed,
        config: spec.config.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        let s: Sweep = "sigma=0,0.25,0.4,1.0".parse().unwrap();
        assert_eq!(s.axis, SweepAxis::Sigma);
        assert_eq!(s.values.len(), 4);
        let a: Sweep = "antennas=8x2,8x1,4x2,4x1".parse().unwrap();
        assert_eq!(parse_antennas(&a.values[2]).unwrap(), (4, 2));
        assert!("sigma=-1".parse::<Sweep>().is_err());
        assert!("antennas=8by2".parse::<Sweep>().is_err());
        assert!("speed=1".parse::<Sweep>().is_err());
        assert!("sigma".parse::<Sweep>().is_err());
        assert!("traces=0".parse::<Sweep>().is_err());
    }

    #[test]
    fn small_run_is_deterministic() {
        let spec = ExperimentSpec {
            config: ScenarioConfig::case3(),
            positions: 120,
            learners: vec![Learners {
                trees: 5,
                depth: 6,
                k: 1,
            }],
            sweep: "sigma=0,0.4".parse().unwrap(),
            ..ExperimentSpec::default()
        };
        let a = run(&spec, None, |_| {}).unwrap();
        let b = run(&spec, None, |_| {}).unwrap();
        assert_eq!(a.rows.len(), 8);
        assert_eq!(a.results_csv(), b.results_csv());
        for chunk in a.rows.chunks(4) {
            assert_eq!(chunk[0].scheme, Scheme::Csi);
            for r in chunk {
                assert!(r.avg_goodput <= chunk[0].avg_goodput);
                assert!(r.perf_adjusted_accuracy >= r.test_accuracy);
            }
        }
    }

    #[test]
    fn invalid_antenna_point_is_rejected() {
        let spec = ExperimentSpec {
            positions: 10,
            sweep: "antennas=3x2".parse().unwrap(),
            ..ExperimentSpec::default()
        };
        assert!(run(&spec, None, |_| {}).is_err());
    }
}
