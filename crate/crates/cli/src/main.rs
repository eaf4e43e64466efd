use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use margsynth::data_model::{load_domain_spec, read_csv, save_csv, Dataset};
use margsynth::error::Error;
use margsynth::evaluation::{evaluate, DEFAULT_QUERIES};
use margsynth::pipeline::{self, default_delta, PipelineConfig};
use margsynth::privacy::{dp_to_zcdp, seeded_rng};
use margsynth::selection::publish_indif;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "margsynth", version, about = "Differentially private synthetic data from noisy marginals")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write a synthetic CSV.
    Synthesize(SynthesizeArgs),
    /// Compare a synthetic CSV with the original.
    Evaluate(EvaluateArgs),
    /// Show pairwise InDif scores.
    Indif(IndifArgs),
}

#[derive(Args)]
struct Input {
    /// Headered CSV with one column per attribute.
    #[arg(long)]
    data: PathBuf,
    /// JSON object mapping each attribute to its list of values.
    #[arg(long)]
    domain: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    input: Input,
    /// JSON config; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Defaults to 1/n².
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: Input,
    /// Synthetic CSV over the same domain spec.
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUERIES)]
    queries: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Args)]
struct IndifArgs {
    #[command(flatten)]
    input: Input,
    /// Budget spent on the scores; required unless --no-noise.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Print exact scores. Not private; debug builds only.
    #[cfg(debug_assertions)]
    #[arg(long)]
    no_noise: bool,
}

/// Failure with the exit code it maps to.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Csv(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load(input: &Input) -> Result<Dataset, Failure> {
    let domains = load_domain_spec(&input.domain)?;
    let file = File::open(&input.data).map_err(|e| io_failure(&input.data, e))?;
    Ok(read_csv(io::BufReader::new(file), domains)?)
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    data: PathBuf,
    domain: PathBuf,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    epsilon: f64,
    delta: f64,
    rho: f64,
    records: usize,
    attributes: usize,
    synthetic_records: usize,
    settings: PipelineConfig,
}

fn synthesize(args: SynthesizeArgs) -> Result<(), Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            PipelineConfig::from_json(&text)?
        }
        None => PipelineConfig::default(),
    };
    let epsilon = args
        .epsilon
        .or(config.epsilon)
        .ok_or_else(|| Failure::Usage("--epsilon is required (or set `epsilon` in the config)".into()))?;
    let seed = seed_or_entropy(args.seed.or(config.seed));
    config.seed = Some(seed);
    config.epsilon = Some(epsilon);

    let data = load(&args.input)?;
    let delta = args.delta.or(config.delta).unwrap_or_else(|| default_delta(data.n()));
    config.delta = Some(delta);
    let run = pipeline::run(&data, epsilon, Some(delta), &config, seed).map_err(|f| {
        let msg = format!("{f} (privacy spent before failure: {} entries)", f.audit.len());
        match f.stage {
            "setup" => Failure::Usage(msg),
            _ => Failure::Runtime(msg),
        }
    })?;

    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    save_csv(args.out.join("synthetic.csv"), &run.synthetic)?;
    write_json(&args.out.join("selection.json"), &run.selection_report())?;
    let manifest = RunManifest {
        command: "synthesize",
        version: env!("CARGO_PKG_VERSION"),
        data: args.input.data,
        domain: args.input.domain,
        config: args.config,
        out: args.out.clone(),
        seed,
        epsilon,
        delta,
        rho: run.budget.rho_total,
        records: data.n(),
        attributes: data.d(),
        synthetic_records: run.synthetic.n(),
        settings: config,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    eprintln!(
        "wrote {} records to {} (seed {seed})",
        run.synthetic.n(),
        args.out.join("synthetic.csv").display()
    );
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), Failure> {
    let original = load(&args.input)?;
    let synthetic = load(&Input {
        data: args.synthetic.clone(),
        domain: args.input.domain.clone(),
    })?;
    let seed = seed_or_entropy(args.seed);
    let report = evaluate(&original, &synthetic, args.queries, seed)?;
    match &args.out {
        Some(path) => write_json(path, &report),
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct IndifRow {
    a: String,
    b: String,
    indif: f64,
    cells: usize,
}

fn indif_cmd(args: IndifArgs) -> Result<(), Failure> {
    #[cfg(debug_assertions)]
    let no_noise = args.no_noise;
    #[cfg(not(debug_assertions))]
    let no_noise = false;

    let data = load(&args.input)?;
    let seed = seed_or_entropy(args.seed);
    let rho = if no_noise {
        eprintln!("WARNING: --no-noise prints exact scores. This output is NOT differentially private.");
        f64::INFINITY
    } else {
        let epsilon = args
            .epsilon
            .ok_or_else(|| Failure::Usage("--epsilon is required unless --no-noise".into()))?;
        dp_to_zcdp(epsilon, args.delta.unwrap_or_else(|| default_delta(data.n())))?
    };
    let scores = publish_indif(&data, rho, &mut seeded_rng(seed))?;
    let rows: Vec<IndifRow> = scores
        .iter()
        .map(|s| IndifRow {
            a: data.domains()[s.pair.0].name().to_string(),
            b: data.domains()[s.pair.1].name().to_string(),
            indif: s.noisy_indif,
            cells: s.cell_count,
        })
        .collect();
    let mut out = io::stdout().lock();
    let res = match args.format {
        Format::Json => {
            let value = serde_json::json!({ "seed": seed, "noise": !no_noise, "pairs": rows });
            writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("serializable"))
        }
        Format::Table => {
            let wa = rows.iter().map(|r| r.a.len()).max().unwrap_or(0).max(1);
            let wb = rows.iter().map(|r| r.b.len()).max().unwrap_or(0).max(1);
            let mut res = writeln!(out, "{:wa$}  {:wb$}  {:>12}  {:>8}", "a", "b", "indif", "cells");
            for r in &rows {
                res = res.and_then(|_| writeln!(out, "{:wa$}  {:wb$}  {:>12.4}  {:>8}", r.a, r.b, r.indif, r.cells));
            }
            res
        }
    };
    res.map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Synthesize(args) => synthesize(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Indif(args) => indif_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
