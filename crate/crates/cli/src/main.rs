use std::path::PathBuf;
use std::process::ExitCode;

use censorml::ingest::Platform;
use censorml::models::ModelFamily;
use censorml::pipeline::{self, LabelSource, Overrides, PipelineConfig, PipelineError};
use censorml::synth::{generate, Scenario, SynthOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};

const WORKERS_ENV: &str = "CENSORML_WORKERS";

/// Curate DNS censorship measurements, train anomaly detectors and report.
#[derive(Parser)]
#[command(name = "censorml", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, validate, label and sample measurements into a curated dataset.
    Ingest(RunArgs),
    /// Build features, grid-search and fit the model.
    Train(RunArgs),
    /// Partition metrics and the optional temporal, CV and agreement reports.
    Evaluate(RunArgs),
    /// Feature importance, signatures, disagreements and per-AS inconsistency.
    Analyze(RunArgs),
    /// Write summary.json and summary.md from the stage outputs.
    Report(RunArgs),
    /// Every stage in order.
    Run(RunArgs),
    /// Write a synthetic measurement world and a config that runs on it.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse::<Platform>)]
    platform: Option<Platform>,
    #[arg(long, value_parser = parse::<LabelSource>)]
    label_source: Option<LabelSource>,
    #[arg(long, value_parser = parse::<ModelFamily>)]
    family: Option<ModelFamily>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Censorship,
    CleanControl,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the measurements, tables and config.toml.
    dir: PathBuf,
    #[arg(long, default_value = "satellite", value_parser = parse::<Platform>)]
    platform: Platform,
    #[arg(long, value_enum, default_value = "censorship")]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 10_000)]
    records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gbdt", value_parser = parse::<ModelFamily>)]
    family: ModelFamily,
    /// Write the measurements gzip-compressed.
    #[arg(long)]
    gzip: bool,
}

fn parse<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) => e.exit_code() as u8,
            CliError::Config(_) => 1,
            CliError::Io { .. } => 3,
        }
    }
}

fn load(args: &RunArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        output: args.output.clone(),
        seed: args.seed,
        platform: args.platform,
        label_source: args.label_source,
        family: args.family,
    });
    Ok(cfg)
}

fn workers() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("{WORKERS_ENV}={v:?} is not a worker count")))?;
        censorml::set_workers(n);
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let scenario = match args.scenario {
        ScenarioArg::Censorship => Scenario::Censorship,
        ScenarioArg::CleanControl => Scenario::CleanControl,
    };
    let world = generate(&SynthOptions {
        platform: args.platform,
        scenario,
        records: args.records,
        seed: args.seed,
        ..SynthOptions::default()
    });
    let io = |source| CliError::Io {
        path: args.dir.clone(),
        source,
    };
    let paths = world.write(&args.dir, args.gzip).map_err(io)?;
    let mut cfg = PipelineConfig::new(
        args.platform,
        LabelSource::Platform,
        paths.relative_to(&args.dir).paths_config("run"),
        args.family,
    );
    cfg.countries = vec![match scenario {
        Scenario::Censorship => "CN".into(),
        Scenario::CleanControl => "US".into(),
    }];
    cfg.seed = args.seed;
    let config = args.dir.join("config.toml");
    std::fs::write(&config, cfg.to_toml()).map_err(io)?;
    let expected = world.expected_counts(&[cfg.countries[0].as_str()]);
    println!(
        "wrote {} records to {} (expected after curation: {} clean, {} anomalous)",
        world.records.len(),
        paths.measurements.display(),
        expected.clean,
        expected.anomalous
    );
    println!("config: {}", config.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    workers()?;
    match cli.command {
        Command::Ingest(a) => {
            let s = pipeline::cmd_ingest(&load(&a)?)?;
            let c = &s.curation;
            println!(
                "ingested {} records ({} malformed, {} schema violations); curated {} clean, {} anomalous",
                s.ingest.parsed, s.ingest.malformed, s.ingest.schema_violations, c.clean, c.anomalous
            );
        }
        Command::Train(a) => {
            let r = pipeline::cmd_train(&load(&a)?)?;
            println!("trained {} with {}", r.family, r.hyperparams.label());
            print_partitions(&r.partitions);
        }
        Command::Evaluate(a) => {
            let s = pipeline::cmd_evaluate(&load(&a)?)?;
            print_partitions(&s.partitions);
        }
        Command::Analyze(a) => {
            let s = pipeline::cmd_analyze(&load(&a)?)?;
            println!(
                "{} signature candidates ({} new), {} disagreements",
                s.signatures, s.new_signatures, s.disagreements
            );
        }
        Command::Report(a) => {
            let cfg = load(&a)?;
            pipeline::cmd_report(&cfg)?;
            println!("{}", cfg.paths.output.join("reports/summary.md").display());
        }
        Command::Run(a) => {
            let cfg = load(&a)?;
            let s = pipeline::run_all(&cfg)?;
            print_partitions(&s.train.partitions);
            println!("{}", cfg.paths.output.join("reports/summary.md").display());
        }
        Command::Synth(a) => synth(&a)?,
    }
    Ok(())
}

fn print_partitions(parts: &[pipeline::PartitionMetrics]) {
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
    for p in parts {
        if let Some(m) = &p.metrics {
            println!(
                "{:<5} rows {:>7}  TPR {:>6}  FPR {:>6}  Acc {:>6}",
                p.partition,
                p.rows,
                pct(m.tpr),
                pct(m.fpr),
                pct(Some(m.accuracy))
            );
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
