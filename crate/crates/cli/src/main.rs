use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use qrnet::datasets::{load_csv, Dataset, ExampleFunction, NormalizationKind};
use qrnet::diagnostics;
use qrnet::distributions::ErrorDistribution;
use qrnet::experiments::{self, ExperimentConfig, ExperimentKind, RunRecord};
use qrnet::linalg::Matrix;
use qrnet::losses::QuantileGrid;
use qrnet::metrics::{evaluate, EvalResult};
use qrnet::models::{ModelFamily, ModelSpec, QuantileModel};
use qrnet::nn::Activation;
use qrnet::sorting::SortMode;
use qrnet::training::{fit, AdamConfig, FitConfig, StopRule};

#[derive(Parser)]
#[command(name = "qrnet", version, about = "Non-crossing multi-quantile regression networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed; overrides the seed in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON file overlaid on the experiment defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    GenData(GenDataArgs),
    /// Train one model on a CSV dataset.
    Train(TrainArgs),
    /// Evaluate a saved model on a CSV dataset.
    Eval(EvalArgs),
    /// Monte-Carlo comparison of all model families.
    Exp1(ExpArgs),
    /// Paired-seed convergence race.
    Exp2(Exp2Args),
    /// Forward-pass timing of SCQRNN against MCQRNN.
    Bench(BenchArgs),
    /// Sorted-loss dominance and gradient self-checks.
    SortCheck(SortCheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    example: ExampleFunction,
    /// normal, t or chi2.
    #[arg(long)]
    dist: ErrorDistribution,
    #[arg(long, default_value_t = 600)]
    n: usize,
    /// Also write the true quantiles on this many evenly spaced levels.
    #[arg(long)]
    ideal_levels: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    /// Validation data; without it a third of --data is held out.
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long, default_value = "scqrnn")]
    family: ModelFamily,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 5])]
    hidden: Vec<usize>,
    #[arg(long, default_value = "tanh")]
    activation: Activation,
    #[arg(long, default_value_t = 19)]
    levels: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    /// Stop once the validation loss falls below this value.
    #[arg(long)]
    threshold: Option<f64>,
    /// `hard`, `soft` or `soft:<epsilon>`.
    #[arg(long, default_value = "hard", value_parser = parse_sort_mode)]
    sort: SortMode,
    /// Huber smoothing width of the training loss.
    #[arg(long)]
    smoothing: Option<f64>,
    #[arg(long, default_value = "none")]
    normalize: NormalizationKind,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    target: String,
    /// True quantiles, one column per level, rows aligned with --data.
    #[arg(long)]
    ideal: Option<PathBuf>,
    #[arg(long, default_value = "none")]
    normalize: NormalizationKind,
}

#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct Exp2Args {
    #[arg(long)]
    runs: Option<usize>,
    /// Use the large network, small learning rate and tight threshold.
    #[arg(long)]
    full_scale: bool,
    /// External dataset replacing the synthetic stand-in.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    target: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct SortCheckArgs {
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    /// Random configurations per gradient suite.
    #[arg(long, default_value_t = 100)]
    configs: usize,
}

fn parse_sort_mode(s: &str) -> Result<SortMode, String> {
    let mode = match s.split_once(':') {
        None if s == "hard" => SortMode::Hard,
        None if s == "soft" => SortMode::Soft {
            epsilon: SortMode::DEFAULT_EPSILON,
        },
        Some(("soft", eps)) => SortMode::Soft {
            epsilon: eps.parse().map_err(|_| format!("bad epsilon '{eps}'"))?,
        },
        _ => return Err(format!("expected hard, soft or soft:<epsilon>, got '{s}'")),
    };
    mode.validate().map_err(|e| e.to_string())?;
    Ok(mode)
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(default))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn done(out: &Path, extra: serde_json::Value) {
    let mut status = json!({"status": "ok", "out": out.display().to_string()});
    if let (Some(s), serde_json::Value::Object(e)) = (status.as_object_mut(), extra) {
        s.extend(e);
    }
    println!("{status}");
}

fn experiment_config(cli: &Cli, kind: ExperimentKind, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(kind, path)?,
        None => base,
    };
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    Ok(config)
}

fn write_records(dir: &Path, format: Format, records: &[RunRecord]) -> Result<()> {
    if format == Format::Json {
        // Wall-clock time lives in timing.json only, so result files stay reproducible.
        let mut value = serde_json::to_value(records)?;
        for record in value.as_array_mut().into_iter().flatten() {
            if let Some(report) = record.get_mut("report").and_then(|r| r.as_object_mut()) {
                report.remove("wall_clock_millis");
            }
        }
        write_json(&dir.join("runs.json"), &value)?;
        let csv = dir.join("runs.csv");
        if csv.exists() {
            std::fs::remove_file(&csv)?;
        }
    }
    Ok(())
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut data: Dataset<f64> = args.example.generate(args.n, args.dist, seed)?;
    if let Some(t) = args.ideal_levels {
        data.attach_ideal(&QuantileGrid::evenly_spaced(t)?)?;
    }
    let dir = out_dir(cli, "data");
    create_dir(&dir)?;
    match cli.format {
        Format::Csv => {
            data.write_csv(dir.join("data.csv"))?;
            if data.ideal.is_some() {
                data.write_ideal_csv(dir.join("ideal.csv"))?;
            }
        }
        Format::Json => {
            let rows: Vec<&[f64]> = data.x.row_iter().collect();
            let ideal: Option<Vec<&[f64]>> = data.ideal.as_ref().map(|m| m.row_iter().collect());
            write_json(&dir.join("data.json"), &json!({"x": rows, "y": data.y, "ideal": ideal}))?;
        }
    }
    data.meta.write_json(dir.join("meta.json"))?;
    done(&dir, json!({"rows": data.len()}));
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let data: Dataset<f64> = load_csv(&args.data, &args.target, args.normalize)?;
    let (train_set, val_set) = match &args.val_data {
        Some(path) => (data, load_csv(path, &args.target, args.normalize)?),
        None => data.holdout(1.0 / 3.0, seed)?,
    };
    let mut spec = ModelSpec::new(
        args.family,
        train_set.input_width(),
        args.hidden.clone(),
        QuantileGrid::evenly_spaced(args.levels)?,
    );
    spec.activation = args.activation;
    spec.sort_mode = args.sort;
    spec.smoothing = args.smoothing;
    let mut stop_rules = vec![
        StopRule::EarlyStopping {
            patience: args.patience,
            min_delta: 0.0,
            restore_best: true,
        },
        StopRule::MaxEpochs {
            epochs: args.max_epochs,
        },
    ];
    if let Some(value) = args.threshold {
        stop_rules[0] = StopRule::Threshold { value };
    }
    let config = FitConfig {
        optimizer: AdamConfig {
            lr: args.lr,
            weight_decay: args.weight_decay,
            ..AdamConfig::default()
        },
        batch_size: args.batch_size,
        stop_rules,
        seed,
    };
    let mut model = QuantileModel::new(spec, seed)?;
    let report = fit(&mut model, &train_set, &val_set, &config)?;
    let dir = out_dir(cli, "train");
    create_dir(&dir)?;
    model.save(dir.join("model.json"))?;
    write_json(&dir.join("report.json"), &report)?;
    done(
        &dir,
        json!({"epochs": report.epochs_run, "stop_reason": report.stop_reason}),
    );
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<Matrix<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .with_context(|| format!("{}: row {} is not numeric", path.display(), i + 2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(Matrix::from_rows(&rows)?)
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let model: QuantileModel<f64> = QuantileModel::load(&args.model)?;
    let data: Dataset<f64> = load_csv(&args.data, &args.target, args.normalize)?;
    let ideal = args.ideal.as_deref().map(read_matrix_csv).transpose()?;
    let pred = model.predict(&data.x)?;
    let result = evaluate(&pred, &data.y, ideal.as_ref(), &model.spec().grid)?;
    let dir = out_dir(cli, "eval");
    create_dir(&dir)?;
    match cli.format {
        Format::Json => write_json(&dir.join("eval.json"), &result)?,
        Format::Csv => {
            let header = EvalResult::csv_header(&model.spec().grid).join(",");
            std::fs::write(
                dir.join("eval.csv"),
                format!("{header}\n{}\n", result.csv_row().join(",")),
            )?;
        }
    }
    let mut lines = vec![model
        .spec()
        .grid
        .taus()
        .iter()
        .map(|t| format!("q{t}"))
        .collect::<Vec<_>>()
        .join(",")];
    lines.extend(
        pred.row_iter()
            .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
    );
    std::fs::write(dir.join("predictions.csv"), lines.join("\n") + "\n")?;
    done(
        &dir,
        json!({"reliability": result.overall_reliability, "rmse": result.rmse}),
    );
    Ok(())
}

fn exp1(cli: &Cli, args: &ExpArgs) -> Result<()> {
    let mut config = experiment_config(cli, ExperimentKind::Exp1, ExperimentConfig::experiment1())?;
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    let output = experiments::run_experiment1(&config)?;
    let dir = out_dir(cli, "exp1");
    output.write(&dir)?;
    write_records(&dir, cli.format, &output.records)?;
    let failures: usize = output.cells.iter().map(|c| c.failures).sum();
    done(&dir, json!({"records": output.records.len(), "failures": failures}));
    Ok(())
}

fn exp2(cli: &Cli, args: &Exp2Args) -> Result<()> {
    let base = if args.full_scale {
        ExperimentConfig::experiment2_full_scale()
    } else {
        ExperimentConfig::experiment2()
    };
    let mut config = experiment_config(cli, ExperimentKind::Exp2, base)?;
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(path) = &args.data {
        config.data = Some(experiments::CsvSource {
            path: path.clone(),
            target: args.target.clone(),
            normalization: NormalizationKind::None,
        });
    }
    config.validate()?;
    let output = experiments::run_experiment2(&config)?;
    let dir = out_dir(cli, "exp2");
    output.write(&dir)?;
    write_records(&dir, cli.format, &output.records)?;
    done(&dir, json!({"faster": output.summary.faster}));
    Ok(())
}

fn bench(cli: &Cli, args: &BenchArgs) -> Result<()> {
    let mut config = experiment_config(cli, ExperimentKind::Bench, ExperimentConfig::bench())?;
    if let Some(r) = args.repetitions {
        config.bench.repetitions = r;
    }
    config.validate()?;
    let report = experiments::run_complexity_bench(&config)?;
    let dir = out_dir(cli, "bench");
    report.write(&dir, &config)?;
    if cli.format == Format::Json {
        std::fs::remove_file(dir.join("bench.csv"))?;
    }
    done(&dir, json!({"cells": report.rows.len()}));
    Ok(())
}

fn sort_check(cli: &Cli, args: &SortCheckArgs) -> Result<()> {
    let report = diagnostics::sort_check(cli.seed.unwrap_or(0), args.pairs, args.configs)?;
    if let Some(dir) = &cli.out {
        create_dir(dir)?;
        write_json(&dir.join("sort_check.json"), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.passed {
        bail!(qrnet::error::Error::State("sort-check failed".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Exp1(a) => exp1(cli, a),
        Command::Exp2(a) => exp2(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::SortCheck(a) => sort_check(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err.downcast_ref::<qrnet::error::Error>().map_or("cli", |e| e.kind());
            let chain: Vec<String> = err.chain().map(ToString::to_string).collect();
            eprintln!("{}", json!({"error": {"kind": kind, "message": chain.join(": ")}}));
            ExitCode::FAILURE
        }
    }
}
