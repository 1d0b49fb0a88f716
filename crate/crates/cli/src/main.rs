//! `eldp`: command-line front end for the eldp-core mechanisms.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eldp_core::io::{
    mechanism_to_json, read_data, read_observations, read_reports, write_observations, write_reports,
};
use eldp_core::matrix_mech::{es_sweep, optimal_prefix_scales, optimize_frequency_scales, MatrixMechanism};
use eldp_core::mdrq::{
    accumulate_observations, encode_batch, encode_weighted_batch, estimate_weighted_private, Backend,
    Estimator, FlipChannel, RangeOracle, RangeQuery,
};
use eldp_core::quantile::quantile;
use eldp_core::sim::{run_experiment, ExperimentConfig, Task};
use eldp_core::{DomainSpec, Error, MetricSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPACITY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "eldp", version, about = "Metric-based local differential privacy: encode, aggregate, query, optimize, simulate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte-Carlo experiment and write one CSV row per (epsilon, D_R)
    Simulate(SimulateArgs),
    /// Compute noise scales for matrix mechanisms
    #[command(subcommand)]
    Optimize(OptimizeCommand),
    /// Randomize owner data into range-query reports
    Encode(EncodeArgs),
    /// Sum reports into observation counts
    Aggregate(AggregateArgs),
    /// Answer a range count or quantile from observation counts
    Query(QueryArgs),
    /// Check that a metric is symmetric, zero on the diagonal and satisfies the triangle inequality
    ValidateMetric(ValidateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Task: freq, range, quantile, weighted or workload
    task: String,
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the backend in the config (observations, frequencies, prefix-sums, on-the-fly)
    #[arg(long)]
    backend: Option<String>,
    /// Output CSV; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the large grid (D = 5 and 6, m = 10, n = 1000)
    #[arg(long)]
    full_scale: bool,
    /// Record wall-clock time per row (the output is then no longer reproducible)
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum OptimizeCommand {
    /// Per-value scales for the frequency oracle under a metric
    FreqScales {
        /// Metric as inline JSON or a path to a JSON file
        #[arg(long)]
        metric: String,
        /// Domain size
        #[arg(long)]
        m: usize,
        /// Write the mechanism (A, B, s) as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scales for the prefix workload under the L1 metric
    PrefixScales {
        /// Privacy parameter; alternatively pass an l1 metric
        #[arg(long, required_unless_present = "metric", conflicts_with = "metric")]
        epsilon: Option<f64>,
        /// l1 metric as inline JSON or a path to a JSON file
        #[arg(long)]
        metric: Option<String>,
        /// Domain size
        #[arg(long)]
        m: usize,
        /// Write the mechanism (A, B, s) as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimized total error against the uniform baseline as |S| varies
    EsSweep {
        /// Domain size
        #[arg(long)]
        m: usize,
        #[arg(long)]
        epsilon: f64,
        /// Comma-separated sensitive-set sizes; every size from m down to 1 when omitted
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Number of owners
        #[arg(long, default_value_t = 1)]
        n: u64,
        /// Output CSV; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// Data CSV: D coordinates per line, optional trailing weight
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Output report CSV
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated domain sizes, one per dimension
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    /// Extend every dimension by a dummy value before encoding
    #[arg(long)]
    dummy_extension: bool,
    /// Weight bound; encodes the weight column privately
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Report CSV written by `encode`
    #[arg(long)]
    reports: PathBuf,
    /// Output observation CSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    /// Observation CSV written by `aggregate`
    #[arg(long)]
    obs: PathBuf,
    /// Comma-separated sizes of the encoded domain (including dummy and weight dimensions)
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long)]
    epsilon: f64,
    /// Range "l1:r1,...,lD:rD", 1-based and inclusive
    #[arg(long, required_unless_present = "quantile", conflicts_with = "quantile")]
    range: Option<String>,
    /// Quantile level in [0, 1] (one-dimensional domains)
    #[arg(long, requires = "n")]
    quantile: Option<f64>,
    /// Number of owners
    #[arg(long)]
    n: Option<u64>,
    /// The reports were encoded with a dummy value in every value dimension
    #[arg(long)]
    dummy_extension: bool,
    /// Weight bound used at encoding; the last dimension is the weight dimension
    #[arg(long)]
    delta: Option<f64>,
    /// Query backend (observations, frequencies, prefix-sums)
    #[arg(long, default_value = "observations")]
    backend: String,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Metric as inline JSON or a path to a JSON file
    #[arg(long)]
    metric: String,
    /// Domain size per dimension
    #[arg(long)]
    m: usize,
    /// Number of dimensions
    #[arg(long, default_value_t = 1)]
    d: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Capacity(_) => EXIT_CAPACITY,
                _ => EXIT_CONFIG,
            })
        }
    }
}

fn run(command: Command) -> eldp_core::Result<ExitCode> {
    match command {
        Command::Simulate(args) => simulate(args)?,
        Command::Optimize(cmd) => optimize(cmd)?,
        Command::Encode(args) => encode(args)?,
        Command::Aggregate(args) => aggregate(args)?,
        Command::Query(args) => query(args)?,
        Command::ValidateMetric(args) => return validate_metric(args),
    }
    Ok(ExitCode::SUCCESS)
}

fn check_input(path: &Path) -> eldp_core::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("input file {} does not exist", path.display())))
    }
}

fn check_output(path: &Path) -> eldp_core::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Error::Config(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn open(path: &Path) -> eldp_core::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn output(path: Option<&Path>) -> eldp_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Inline JSON when the argument starts with `{`, a file path otherwise.
fn load_metric(arg: &str) -> eldp_core::Result<MetricSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        check_input(Path::new(arg))?;
        std::fs::read_to_string(arg)?
    };
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad metric: {e}")))
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn simulate(args: SimulateArgs) -> eldp_core::Result<()> {
    check_input(&args.config)?;
    if let Some(out) = &args.out {
        check_output(out)?;
    }
    let task: Task = args.task.parse()?;
    let mut cfg = ExperimentConfig::load(&args.config)?;
    match cfg.task {
        Some(t) if t != task => {
            return Err(Error::Config(format!("config is for task {}, not {}", t.name(), task.name())));
        }
        _ => cfg.task = Some(task),
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(b) = &args.backend {
        cfg.backend = b.parse()?;
    }
    cfg.full_scale |= args.full_scale;
    let csv = run_experiment(&cfg)?.to_csv(args.timing)?;
    let mut out = output(args.out.as_deref())?;
    out.write_all(csv.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn write_mechanism(mech: &MatrixMechanism, out: Option<&Path>) -> eldp_core::Result<()> {
    if let Some(path) = out {
        std::fs::write(path, mechanism_to_json(mech)?)?;
    }
    Ok(())
}

fn optimize(cmd: OptimizeCommand) -> eldp_core::Result<()> {
    match cmd {
        OptimizeCommand::FreqScales { metric, m, out } => {
            if let Some(p) = &out {
                check_output(p)?;
            }
            let metric = load_metric(&metric)?.bind(&DomainSpec::line(m)?)?;
            let opt = optimize_frequency_scales(&metric)?;
            println!("scales: {}", join(&opt.scales));
            println!("total_error_per_owner: {}", opt.objective);
            write_mechanism(&opt.mechanism()?, out.as_deref())
        }
        OptimizeCommand::PrefixScales { epsilon, metric, m, out } => {
            if let Some(p) = &out {
                check_output(p)?;
            }
            let epsilon = match (epsilon, metric) {
                (Some(e), _) => e,
                (None, Some(spec)) => match load_metric(&spec)? {
                    MetricSpec::L1 { epsilon } => epsilon,
                    _ => return Err(Error::Config("prefix scales are defined for the l1 metric only".into())),
                },
                (None, None) => unreachable!("clap requires one of --epsilon and --metric"),
            };
            let mech = MatrixMechanism::prefix(m, optimal_prefix_scales(epsilon, m)?)?;
            println!("scales: {}", join(mech.scales()));
            println!("total_error_per_owner: {}", mech.expected_total_sq_error(1));
            write_mechanism(&mech, out.as_deref())
        }
        OptimizeCommand::EsSweep { m, epsilon, sizes, n, out } => {
            if let Some(p) = &out {
                check_output(p)?;
            }
            let sizes = sizes.unwrap_or_else(|| (1..=m).rev().collect());
            let rows = es_sweep(m, n, epsilon, &sizes)?;
            let mut w = output(out.as_deref())?;
            writeln!(w, "S_size,m,n,epsilon,optimized_total_error,baseline_total_error")?;
            for r in rows {
                writeln!(w, "{},{m},{n},{epsilon},{},{}", r.sensitive_count, r.optimized_total, r.baseline_total)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn encode(args: EncodeArgs) -> eldp_core::Result<()> {
    check_input(&args.data)?;
    check_output(&args.out)?;
    let dom = DomainSpec::new(args.dims.clone())?;
    let channel = FlipChannel::new(args.epsilon)?;
    let (values, weights) = read_data(open(&args.data)?, dom.num_dims())?;
    for x in &values {
        dom.check(x)?;
    }
    let enc = if args.dummy_extension { dom.with_dummy() } else { dom.clone() };
    let reports = match (args.delta, weights) {
        (Some(delta), Some(w)) => encode_weighted_batch(&values, &w, delta, &enc, &channel, args.seed, 0)?,
        (Some(_), None) => return Err(Error::Config("--delta needs a weight column in the data".into())),
        (None, _) => encode_batch(&values, &enc, &channel, args.seed, 0)?,
    };
    write_reports(&reports, BufWriter::new(File::create(&args.out)?))
}

fn aggregate(args: AggregateArgs) -> eldp_core::Result<()> {
    check_input(&args.reports)?;
    check_output(&args.out)?;
    let (reports, dom) = read_reports(open(&args.reports)?)?;
    let obs = accumulate_observations(&reports, &dom)?;
    write_observations(&obs, BufWriter::new(File::create(&args.out)?))?;
    eprintln!("aggregated {} reports over domain {:?}", reports.len(), dom.dims());
    Ok(())
}

fn query(args: QueryArgs) -> eldp_core::Result<()> {
    check_input(&args.obs)?;
    let dom = DomainSpec::new(args.dims.clone())?;
    let channel = FlipChannel::new(args.epsilon)?;
    let backend: Backend = args.backend.parse()?;
    let obs = read_observations(open(&args.obs)?, &dom, args.n)?;
    let value_dims = dom.num_dims() - usize::from(args.delta.is_some());
    let dummy_dims = if args.dummy_extension { value_dims } else { 0 };
    let est = Estimator::from_observations(obs, &channel, backend)?.with_dummy_dims(dummy_dims);
    if let Some(p) = args.quantile {
        if dom.num_dims() != 1 || args.delta.is_some() {
            return Err(Error::Config("quantiles need a one-dimensional unweighted domain".into()));
        }
        let m = dom.dims()[0] - usize::from(args.dummy_extension);
        let n = args.n.expect("clap requires --n with --quantile");
        let r = quantile(&est, p, m, n)?;
        println!("{}", r.value);
        return Ok(());
    }
    let q: RangeQuery = args.range.as_deref().expect("clap requires --range or --quantile").parse()?;
    let answer = match args.delta {
        Some(delta) => estimate_weighted_private(&est, &q, delta)?,
        None => est.estimate_range(&q)?,
    };
    println!("{answer}");
    Ok(())
}

/// Prints the validation report; exits with the config status when the table is not a metric.
fn validate_metric(args: ValidateArgs) -> eldp_core::Result<ExitCode> {
    let dom = DomainSpec::cube(args.m, args.d)?;
    let metric = load_metric(&args.metric)?.bind(&dom)?;
    let report = metric.validate();
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.is_metric() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: not a metric");
        Ok(ExitCode::from(EXIT_CONFIG))
    }
}
