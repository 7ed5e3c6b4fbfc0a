use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use syscd::dataset::Orientation;
use syscd::experiment::{run_experiment, DatasetSource, ExperimentSpec, ReferenceMode};
use syscd::objective::SmoothLoss;
use syscd::partitioning::{bucket_size_for_cache_line, Sampling, DEFAULT_BUCKET_SIZE};
use syscd::solvers::{Algorithm, Repartition, SolverConfig, WildSchedule, DEFAULT_TOLERANCE};
use syscd::theory::{bound_sequence, RateParams};
use syscd::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ALL_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "syscd",
    version,
    about = "Parallel coordinate descent for generalized linear models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more solver configurations and write per-epoch metrics.
    Train(TrainArgs),
    /// Print the convergence bound for each outer round as CSV.
    Theory(TheoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Sequential,
    Wild,
    Syscd,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Squared,
    Logistic,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    /// Coordinates are features (primal form).
    Features,
    /// Coordinates are examples (dual form).
    Examples,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Perm,
    Iid,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepartitionArg {
    Dynamic,
    Static,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReferenceArg {
    Auto,
    ClosedForm,
    HighAccuracyRun,
}

#[derive(Clone, Copy, ValueEnum)]
enum WildScheduleArg {
    Free,
    Lockstep,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["synthetic", "libsvm"]))]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "syscd")]
    solver: SolverArg,
    /// Synthetic data of shape EXAMPLESxFEATURES.
    #[arg(long, value_parser = parse_shape)]
    synthetic: Option<(usize, usize)>,
    /// Fraction of nonzero entries for synthetic data; dense when omitted.
    #[arg(long, requires = "synthetic")]
    density: Option<f64>,
    /// LIBSVM file to train on.
    #[arg(long)]
    libsvm: Option<PathBuf>,
    /// Number of features in the LIBSVM file; inferred when omitted.
    #[arg(long, requires = "libsvm")]
    features: Option<usize>,
    #[arg(long, value_enum, default_value = "features")]
    orientation: OrientationArg,
    #[arg(long, value_enum, default_value = "squared")]
    loss: LossArg,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Total thread counts to sweep (K * P each).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    /// Node groups K.
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Summary CSV path.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Bucket sizes to sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "cache_line_bytes")]
    bucket_size: Vec<usize>,
    /// Derive the bucket size from the cache line size.
    #[arg(long)]
    cache_line_bytes: Option<usize>,
    #[arg(long, value_enum, default_value = "perm")]
    sampling: SamplingArg,
    #[arg(long, value_enum, default_value = "dynamic")]
    repartition: RepartitionArg,
    /// Outer rounds; runs until the epoch budget or convergence when omitted.
    #[arg(long)]
    t1: Option<usize>,
    /// Node-local rounds per outer round.
    #[arg(long, default_value_t = 1)]
    t2: usize,
    /// Buckets per thread per local round.
    #[arg(long)]
    t3: Option<usize>,
    /// Coordinate updates per bucket visit.
    #[arg(long)]
    t4: Option<usize>,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    /// Relative model change that counts as converged.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
    /// Check solver invariants during the run.
    #[arg(long)]
    verify: bool,
    #[arg(long, value_enum, default_value = "auto")]
    reference: ReferenceArg,
    #[arg(long, value_enum, default_value = "free")]
    wild_schedule: WildScheduleArg,
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Largest eigenvalue of the Gram matrix.
    #[arg(long = "cA")]
    c_a: f64,
    /// Number of coordinates.
    #[arg(long)]
    n: usize,
    #[arg(long = "B", default_value_t = DEFAULT_BUCKET_SIZE)]
    bucket_size: usize,
    #[arg(long = "K", default_value_t = 1)]
    nodes: usize,
    #[arg(long = "P", default_value_t = 1)]
    threads_per_node: usize,
    #[arg(long = "T1", default_value_t = 30)]
    t1: u64,
    #[arg(long = "T2", default_value_t = 1)]
    t2: u64,
    /// Defaults to n / (P B K), rounded up.
    #[arg(long = "T3")]
    t3: Option<u64>,
    /// Defaults to B.
    #[arg(long = "T4")]
    t4: Option<u64>,
    /// Initial suboptimality.
    #[arg(long, default_value_t = 1.0)]
    eps0: f64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_shape(s: &str) -> Result<(usize, usize), String> {
    let (rows, cols) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected EXAMPLESxFEATURES, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(rows)?, parse(cols)?))
}

fn train_spec(args: &TrainArgs) -> ExperimentSpec {
    let source = match (args.synthetic, &args.libsvm) {
        (Some((examples, features)), _) => match args.density {
            Some(density) => DatasetSource::SyntheticSparse {
                examples,
                features,
                density,
                seed: args.seed,
            },
            None => DatasetSource::SyntheticDense {
                examples,
                features,
                seed: args.seed,
            },
        },
        (None, Some(path)) => DatasetSource::Libsvm {
            path: path.clone(),
            n_features: args.features,
            orientation: match args.orientation {
                OrientationArg::Features => Orientation::CoordinatesAreFeatures,
                OrientationArg::Examples => Orientation::CoordinatesAreExamples,
            },
        },
        (None, None) => unreachable!("clap requires a data source"),
    };
    let loss = match args.loss {
        LossArg::Squared => SmoothLoss::SQUARED,
        LossArg::Logistic => SmoothLoss::LOGISTIC,
    };
    let bucket_sizes = match (args.cache_line_bytes, args.bucket_size.is_empty()) {
        (Some(bytes), _) => vec![bucket_size_for_cache_line(bytes)],
        (None, true) => vec![DEFAULT_BUCKET_SIZE],
        (None, false) => args.bucket_size.clone(),
    };
    let solver = SolverConfig {
        algorithm: match args.solver {
            SolverArg::Sequential => Algorithm::Sequential,
            SolverArg::Wild => Algorithm::Wild,
            SolverArg::Syscd => Algorithm::Syscd,
        },
        nodes: args.nodes,
        threads_per_node: 1,
        bucket_size: bucket_sizes[0],
        global_rounds: args.t1,
        local_rounds: args.t2,
        buckets_per_thread: args.t3,
        updates_per_bucket: args.t4,
        sampling: match args.sampling {
            SamplingArg::Perm => Sampling::Perm,
            SamplingArg::Iid => Sampling::Iid,
        },
        repartition: match args.repartition {
            RepartitionArg::Dynamic => Repartition::Dynamic,
            RepartitionArg::Static => Repartition::Static,
        },
        wild_schedule: match args.wild_schedule {
            WildScheduleArg::Free => WildSchedule::Free,
            WildScheduleArg::Lockstep => WildSchedule::Lockstep,
        },
        seed: args.seed,
        max_epochs: args.max_epochs,
        tolerance: args.tol,
        verify: args.verify,
    };
    let mut spec = ExperimentSpec::new(source, loss, args.lambda, solver);
    spec.threads = args.threads.clone();
    spec.bucket_sizes = bucket_sizes;
    spec.metrics_path = args.out.clone();
    spec.summary_path = args.summary.clone();
    spec.reference = match args.reference {
        ReferenceArg::Auto => ReferenceMode::Auto,
        ReferenceArg::ClosedForm => ReferenceMode::ClosedForm,
        ReferenceArg::HighAccuracyRun => ReferenceMode::HighAccuracyRun,
    };
    spec
}

fn train(args: &TrainArgs) -> Result<ExitCode, Error> {
    let spec = train_spec(args);
    // reject a bad sweep before any data is generated or read
    spec.configurations()?;
    let report = run_experiment(&spec)?;
    for run in &report.runs {
        let cfg = &run.config;
        eprintln!(
            "{} K={} P={} B={}: {} epochs, objective {:.6e}, {}",
            cfg.algorithm.name(),
            cfg.nodes,
            cfg.threads_per_node,
            cfg.bucket_size,
            run.result.epochs(),
            run.result.final_objective(),
            run.result.status.reason()
        );
    }
    if report.all_diverged() {
        eprintln!("every configuration diverged");
        return Ok(ExitCode::from(EXIT_ALL_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn theory(args: &TheoryArgs) -> Result<ExitCode, Error> {
    let defaults = RateParams::with_default_schedule(
        args.gamma,
        args.mu,
        args.c_a,
        args.n,
        args.bucket_size,
        args.nodes,
        args.threads_per_node,
        args.eps0,
    );
    let params = RateParams {
        t1: args.t1,
        t2: args.t2,
        t3: args.t3.unwrap_or(defaults.t3),
        t4: args.t4.unwrap_or(defaults.t4),
        ..defaults
    };
    params.validate()?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let write = |out: &mut dyn Write| -> io::Result<()> {
        writeln!(out, "round,bound")?;
        for (round, bound) in bound_sequence(&params) {
            writeln!(out, "{round},{bound}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io("theory output", e))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args),
        Command::Theory(args) => theory(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(EXIT_USAGE),
                _ => ExitCode::from(EXIT_FAILURE),
            }
        }
    }
}
