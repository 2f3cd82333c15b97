use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use coordra_core::channel;
use coordra_core::dataset::{self, Dataset, Formulation, LabeledPlacement, Provenance};
use coordra_core::eval::{self, ExperimentReport, ReportRow, RESULTS_HEADER};
use coordra_core::experiment::{self, ExperimentSpec, Learners, Sweep};
use coordra_core::learn::{self, KnnModel};
use coordra_core::link::LinkModel;
use coordra_core::pipeline::{self, LabelCache};
use coordra_core::scenario::{self, Placement, ScenarioConfig};

#[derive(Parser)]
#[command(name = "coordra", version, about = "Position-based beam and MCS selection experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario config file (flat key = value); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's rng_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw terminal positions and scatterers.
    Generate(GenerateArgs),
    /// Run the exhaustive search on generated placements.
    Label(LabelArgs),
    /// Build a dataset from labels and split it into train and test files.
    Dataset(DatasetArgs),
    /// Train a model on a training file.
    Train(TrainArgs),
    /// Score CSI, RF, KNN and geometry on a test file.
    Eval(EvalArgs),
    /// Run the whole pipeline for each point of a sweep.
    Sweep(SweepArgs),
    /// Print a saved report and rewrite its CSV tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of uncorrelated drops.
    #[arg(long, default_value_t = 20_000)]
    count: usize,
    /// Generate this many straight-line traces instead of drops.
    #[arg(long)]
    traces: Option<usize>,
    #[arg(long, default_value_t = 15.0)]
    speed: f64,
    /// Trace sampling period, seconds.
    #[arg(long, default_value_t = 1e-3)]
    period: f64,
    /// Also dump the channel matrices in the binary batch format.
    #[arg(long)]
    channels: bool,
}

#[derive(Args)]
struct LabelArgs {
    /// Placements file written by `generate`.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    /// Labels file written by `label`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "d2")]
    formulation: String,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    train_fraction: f64,
    /// Keep only every k-th trace sample, expressed as a period in ms.
    #[arg(long)]
    undersample_ms: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Rf,
    Knn,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value = "rf")]
    model: ModelKind,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Labels file the test samples were drawn from.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Trained forest; trained from `--train` when absent.
    #[arg(long)]
    rf: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    #[arg(long, default_value_t = 12)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// `axis=v1,v2,...` with axis one of none, sigma, rho, antennas,
    /// sample_count, traces, undersample_period.
    #[arg(long, default_value = "none=")]
    sweep: String,
    /// Comma-separated formulations.
    #[arg(long, default_value = "d2")]
    formulation: String,
    /// Comma-separated tree counts.
    #[arg(long, default_value = "50")]
    trees: String,
    /// Comma-separated maximum depths.
    #[arg(long, default_value = "12")]
    depth: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 20_000)]
    positions: usize,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    train_fraction: f64,
    /// Trace count used by the undersample_period axis.
    #[arg(long, default_value_t = 10)]
    traces: usize,
    #[arg(long, default_value_t = 15.0)]
    speed: f64,
    #[arg(long, default_value_t = 1e-3)]
    period: f64,
    /// Label cache directory; defaults to `<out>/cache`.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Time training as the median of five runs.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json written by `eval` or `sweep`.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct PlacementFile {
    digest: String,
    config: ScenarioConfig,
    provenance: Provenance,
    placements: Vec<Placement>,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    digest: String,
    config: ScenarioConfig,
    provenance: Provenance,
    items: Vec<LabeledPlacement>,
}

#[derive(Serialize, Deserialize)]
struct KnnFile {
    k: usize,
    train: PathBuf,
}

fn load_config(global: &Global) -> Result<ScenarioConfig> {
    let mut config = match &global.config {
        Some(path) => ScenarioConfig::load(path).with_context(|| format!("reading config {}", path.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.rng_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    pipeline::read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    pipeline::write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

fn parse_list<T: std::str::FromStr>(what: &str, list: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("bad {what} {s:?}: {e}")))
        .collect()
}

fn generate(global: &Global, args: &GenerateArgs) -> Result<()> {
    let config = load_config(global)?;
    let (placements, provenance) = match args.traces {
        Some(count) => (
            scenario::generate_traces(&config, count, args.speed, args.period)?,
            Provenance::Traces {
                count,
                speed: args.speed,
                period: args.period,
                samples_per_trace: scenario::trace_len(config.street_length, args.speed, args.period),
                stride: 1,
            },
        ),
        None => (scenario::generate_drops(&config, args.count), Provenance::Uncorrelated),
    };
    let path = global.out.join("placements.json");
    write_json(
        &path,
        &PlacementFile {
            digest: config.digest(),
            config: config.clone(),
            provenance,
            placements: placements.clone(),
        },
    )?;
    config.save(&global.out.join("config.toml"))?;
    if args.channels {
        use rayon::prelude::*;
        let realizations: Vec<_> = placements.par_iter().map(|p| channel::realize(&config, p)).collect();
        let file = File::create(global.out.join("channels.bin"))?;
        channel::write_batch(BufWriter::new(file), &realizations)?;
    }
    println!("wrote {} placements to {}", placements.len(), path.display());
    Ok(())
}

fn label(global: &Global, args: &LabelArgs) -> Result<()> {
    let file: PlacementFile = read_json(&args.input)?;
    if file.digest != file.config.digest() {
        bail!("{} was edited after generation: digest mismatch", args.input.display());
    }
    let link = LinkModel::from_config(&file.config)?;
    let items = pipeline::label_placements(&file.config, &link, &file.placements);
    let path = global.out.join("labels.json");
    write_json(
        &path,
        &LabelFile {
            digest: file.digest,
            config: file.config,
            provenance: file.provenance,
            items,
        },
    )?;
    println!("wrote labels to {}", path.display());
    Ok(())
}

fn make_dataset(global: &Global, args: &DatasetArgs) -> Result<()> {
    let file: LabelFile = read_json(&args.input)?;
    let formulation: Formulation = args.formulation.parse()?;
    let full = dataset::build(&file.items, formulation, file.provenance.clone())?;
    let seed = global.seed.unwrap_or(file.config.rng_seed);
    let (mut train, test) = experiment::split_dataset(&full, args.train_fraction, seed)?;
    if let Some(ms) = args.undersample_ms {
        train = dataset::undersample(&train, ms)?;
    }
    dataset::save(&full, &global.out.join("full.txt"))?;
    dataset::save(&train, &global.out.join("train.txt"))?;
    dataset::save(&test, &global.out.join("test.txt"))?;
    let counts: Vec<usize> = full.class_counts().into_values().collect();
    println!(
        "{formulation}: {} samples, {} classes, class Gini {:.3}; train {} / test {}",
        full.len(),
        counts.len(),
        dataset::gini_coefficient(&counts),
        train.len(),
        test.len()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn train(global: &Global, args: &TrainArgs) -> Result<()> {
    let train = load_dataset(&args.train)?;
    match args.model {
        ModelKind::Rf => {
            let seed = global.seed.unwrap_or(1);
            let (time, forest) =
                eval::median_time(5, || learn::rf_train(&train.inputs(), &train.labels(), args.trees, args.depth, seed));
            let forest = forest?;
            let path = global.out.join("model.crrf");
            fs::write(&path, learn::serialize_forest(&forest))?;
            println!(
                "trained {}x{} forest in {time:.3} s (median of 5), {} bytes -> {}",
                args.trees,
                args.depth,
                learn::model_size(&forest),
                path.display()
            );
        }
        ModelKind::Knn => {
            KnnModel::fit(train.inputs(), train.labels(), args.k)?;
            let path = global.out.join("knn.json");
            write_json(
                &path,
                &KnnFile {
                    k: args.k,
                    train: fs::canonicalize(&args.train)?,
                },
            )?;
            println!("KNN with K={} over {} samples -> {}", args.k, train.len(), path.display());
        }
    }
    Ok(())
}

fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    fs::write(out.join("report.json"), report.to_json()?)?;
    fs::write(out.join("results.csv"), report.results_csv())?;
    fs::write(out.join("timing.csv"), report.timing_csv())?;
    Ok(())
}

fn print_rows(rows: &[ReportRow]) {
    println!(
        "{:<10} {:<8} {:<20} {:<9} {:>12} {:>8} {:>8} {:>8}",
        "axis", "value", "setting", "scheme", "goodput", "ratio", "acc", "padj"
    );
    for r in rows {
        println!(
            "{:<10} {:<8} {:<20} {:<9} {:>12.4e} {:>8.4} {:>8.4} {:>8.4}",
            r.axis, r.value, r.formulation, r.scheme, r.avg_goodput, r.goodput_ratio_to_csi, r.test_accuracy, r.perf_adjusted_accuracy
        );
    }
}

fn evaluate(global: &Global, args: &EvalArgs) -> Result<()> {
    let file: LabelFile = read_json(&args.labels)?;
    let config = &file.config;
    let link = LinkModel::from_config(config)?;
    let train = load_dataset(&args.train)?;
    let test = load_dataset(&args.test)?;
    let samples = eval::prepare_test(&test, &file.items, config)?;
    let seed = global.seed.unwrap_or(config.rng_seed);
    let learners = Learners {
        trees: args.trees,
        depth: args.depth,
        k: args.k,
    };
    let mut runs = experiment::run_schemes(config, &link, &train, &samples, &learners, seed, true)?;
    if let Some(path) = &args.rf {
        let forest = learn::deserialize_forest(&fs::read(path)?).with_context(|| format!("reading {}", path.display()))?;
        let queries: Vec<_> = samples.iter().map(|s| s.input).collect();
        let (per_sample, preds) = eval::predict_time_per_sample(&forest, &queries);
        let mut result = eval::evaluate(eval::Scheme::Rf, &preds, &samples, &link, &coordra_core::oracle::ClassEncoding::for_link(&link))?;
        result.predict_time_per_sample = per_sample;
        runs[1] = experiment::SchemeRun {
            result,
            model_bytes: Some(learn::model_size(&forest)),
        };
    }
    let csi = runs[0].result.avg_goodput;
    let rows: Vec<ReportRow> = runs
        .into_iter()
        .map(|r| ReportRow {
            axis: "none".into(),
            value: String::new(),
            formulation: train.formulation.to_string(),
            scheme: r.result.scheme,
            avg_goodput: r.result.avg_goodput,
            goodput_ratio_to_csi: if csi > 0.0 { r.result.avg_goodput / csi } else { 0.0 },
            test_accuracy: r.result.test_accuracy,
            perf_adjusted_accuracy: r.result.perf_adjusted_accuracy,
            train_samples: train.len(),
            test_samples: samples.len(),
            class_count: train.class_counts().len(),
            train_time_s: r.result.train_time,
            predict_time_s: r.result.predict_time_per_sample,
            model_bytes: r.model_bytes,
        })
        .collect();
    let report = ExperimentReport {
        seed,
        config: config.clone(),
        rows,
    };
    write_report(&global.out, &report)?;
    print_rows(&report.rows);
    Ok(())
}

fn sweep(global: &Global, args: &SweepArgs) -> Result<()> {
    let config = load_config(global)?;
    let sweep: Sweep = args.sweep.parse()?;
    let formulations: Vec<Formulation> = parse_list("formulation", &args.formulation)?;
    let trees: Vec<usize> = parse_list("tree count", &args.trees)?;
    let depths: Vec<usize> = parse_list("depth", &args.depth)?;
    let mut learners = Vec::new();
    for &t in &trees {
        for &d in &depths {
            learners.push(Learners { trees: t, depth: d, k: args.k });
        }
    }
    let spec = ExperimentSpec {
        seed: config.rng_seed,
        config,
        formulations,
        learners,
        positions: args.positions,
        train_fraction: args.train_fraction,
        traces: args.traces,
        trace_speed: args.speed,
        trace_period: args.period,
        sweep,
        timing: args.timing,
    };
    let cache = LabelCache::new(args.cache.clone().unwrap_or_else(|| global.out.join("cache")));

    // rows are appended as they finish so a failure leaves partial results
    let partial_path = global.out.join("results.partial.csv");
    let mut partial = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&partial_path)
            .with_context(|| format!("creating {}", partial_path.display()))?,
    );
    writeln!(partial, "{RESULTS_HEADER}")?;
    let mut io_error = None;
    let result = experiment::run(&spec, Some(&cache), |row| {
        if let Err(e) = writeln!(partial, "{}", eval::results_line(row)).and_then(|_| partial.flush()) {
            io_error.get_or_insert(e);
        }
    });
    if let Some(e) = io_error {
        return Err(e).context("writing partial results");
    }
    let report = result?;
    drop(partial);
    write_report(&global.out, &report)?;
    fs::remove_file(&partial_path)?;
    print_rows(&report.rows);
    Ok(())
}

fn report(global: &Global, args: &ReportArgs) -> Result<()> {
    let report: ExperimentReport = read_json(&args.input)?;
    write_report(&global.out, &report)?;
    print_rows(&report.rows);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.global.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
    match &cli.command {
        Command::Generate(a) => generate(&cli.global, a),
        Command::Label(a) => label(&cli.global, a),
        Command::Dataset(a) => make_dataset(&cli.global, a),
        Command::Train(a) => train(&cli.global, a),
        Command::Eval(a) => evaluate(&cli.global, a),
        Command::Sweep(a) => sweep(&cli.global, a),
        Command::Report(a) => report(&cli.global, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
