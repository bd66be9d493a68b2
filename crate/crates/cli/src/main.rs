use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lmft::io::{
    self, classify_corpus, ClassifySpec, DataSource, ExperimentConfig, LabeledSeries, QuerySpec, CONFIG_VERSION,
};
use lmft::pipeline::{loess, nw_smooth, seed_demo, DemoSweep, QueryGrid, SeedStrategy, TimeSeries};
use lmft::synth::{GeneratorKind, GeneratorSpec};
use lmft::wgpr::oracle::run_suite;
use lmft::{CovExpr, Error, ErrorKind, KernelSpec, ObjectiveForm, WeightingMode};

#[derive(Parser)]
#[command(name = "lmft", version, about = "Local model feature transformations for time series")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path or prefix; stdout where a command allows it.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Root RNG seed; overrides the config's rng_seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "LMFT_THREADS")]
    threads: Option<usize>,
    /// Evaluate every s-th sample instead of all of them.
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Progress messages on stderr
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    VariableNoise,
    VariablePeriod,
    LabeledSegments,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    FullDiagonal,
    NoiseOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Full,
    Simplified,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic series (CSV) or labeled corpus (long CSV).
    Synth {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Series length, or segment length for a corpus.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Extract LMFT features from a series CSV.
    Extract {
        input: Option<PathBuf>,
        /// Kernel JSON, e.g. '{"family":"tricube","h":120}'. A leading @ reads a file.
        #[arg(long)]
        kernel: Option<String>,
        /// Covariance expression JSON. A leading @ reads a file.
        #[arg(long)]
        expr: Option<String>,
        /// Seed strategy JSON, e.g. '{"kind":"neighbor"}'.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        form: Option<Form>,
    },
    /// Nadaraya-Watson smoothing of every column of a CSV.
    Smooth {
        input: PathBuf,
        #[arg(long)]
        kernel: String,
    },
    /// Local linear smoothing of every column of a CSV.
    Loess {
        input: PathBuf,
        #[arg(long)]
        kernel: String,
    },
    /// 1NN-DTW classification of a long-format corpus CSV.
    Classify {
        input: PathBuf,
        #[arg(long)]
        train_per_class: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        no_scale: bool,
        #[arg(long)]
        positive: Option<String>,
    },
    /// Run the randomized weighting identity checks.
    CheckWeights {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Seeding trajectories on the toy quartic families.
    DemoSeeds {
        #[arg(long, default_value_t = 41)]
        steps: usize,
        /// Custom sweep JSON instead of the two built-in ones.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Execute an experiment config end to end.
    Run,
}

fn arg_json(s: &str) -> Result<String, Error> {
    match s.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}"))),
        None => Ok(s.to_string()),
    }
}

fn parse<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, Error> {
    serde_json::from_str(&arg_json(s)?).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn emit(out: Option<&str>, bytes: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, Error> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn log(cli: &Cli, msg: impl AsRef<str>) {
    if cli.verbose {
        eprintln!("lmft: {}", msg.as_ref());
    }
}

fn grid(stride: Option<usize>) -> QueryGrid {
    stride.map_or(QueryGrid::All, QueryGrid::Stride)
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>, Error> {
    let Some(path) = &cli.config else { return Ok(None) };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = &cli.out {
        cfg.output = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    if cli.stride.is_some() {
        cfg.query.grid = grid(cli.stride);
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

fn smooth_cmd(cli: &Cli, input: &Path, kernel: &str, local_linear: bool) -> Result<(), Error> {
    let kernel: KernelSpec = parse("kernel", kernel)?;
    let series = io::read_csv(input)?;
    let q = grid(cli.stride).times(&series)?;
    let f = if local_linear { loess } else { nw_smooth };
    let m = f(series.times(), series.values(), &kernel, &q)?;
    let out = TimeSeries::new(q, m, series.channel_names().to_vec())?;
    let mut buf = Vec::new();
    io::write_series(&mut buf, &out)?;
    emit(cli.out.as_deref(), &buf)
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Synth { kind, n, per_class } => {
            let kind = match kind {
                Kind::VariableNoise => GeneratorKind::VariableNoise,
                Kind::VariablePeriod => GeneratorKind::VariablePeriod,
                Kind::LabeledSegments => GeneratorKind::LabeledSegments,
            };
            let mut spec = GeneratorSpec::new(kind, cli.seed.unwrap_or(0));
            spec.n = *n;
            spec.per_class = *per_class;
            let mut buf = Vec::new();
            if kind == GeneratorKind::LabeledSegments {
                let items: Vec<LabeledSeries> = spec
                    .corpus()?
                    .into_iter()
                    .enumerate()
                    .map(|(i, (series, label))| LabeledSeries {
                        id: format!("item{i}"),
                        label: label.to_string(),
                        series,
                    })
                    .collect();
                log(cli, format!("{} segments", items.len()));
                io::write_corpus(&mut buf, &items)?;
            } else {
                io::write_series(&mut buf, &spec.series()?)?;
            }
            emit(cli.out.as_deref(), &buf)
        }
        Command::Extract { input, kernel, expr, strategy, mode, form } => {
            let mut cfg = match load_config(cli)? {
                Some(c) => c,
                None => {
                    let (Some(kernel), Some(expr)) = (kernel, expr) else {
                        return Err(Error::Config("extract needs --config or both --kernel and --expr".into()));
                    };
                    ExperimentConfig {
                        version: CONFIG_VERSION,
                        data: DataSource::Csv(PathBuf::new()),
                        kernel: parse("kernel", kernel)?,
                        covariance: CovExpr::from_json(&arg_json(expr)?)?,
                        strategy: SeedStrategy::default(),
                        query: QuerySpec { grid: grid(cli.stride) },
                        weighting_mode: WeightingMode::default(),
                        objective_form: ObjectiveForm::default(),
                        smoothing: None,
                        classify: None,
                        output: cli.out.clone().unwrap_or_else(|| "lmft".into()),
                        rng_seed: cli.seed.unwrap_or(0),
                    }
                }
            };
            if let Some(s) = strategy {
                cfg.strategy = parse("strategy", s)?;
            }
            if let Some(m) = mode {
                cfg.weighting_mode = match m {
                    Mode::FullDiagonal => WeightingMode::FullDiagonal,
                    Mode::NoiseOnly => WeightingMode::NoiseOnly,
                };
            }
            if let Some(f) = form {
                cfg.objective_form = match f {
                    Form::Full => ObjectiveForm::Full,
                    Form::Simplified => ObjectiveForm::Simplified,
                };
            }
            let series = match input {
                Some(p) => io::read_csv(p)?,
                None if cli.config.is_some() => cfg.load_series()?,
                None => return Err(Error::Config("extract needs an input series".into())),
            };
            cfg.validate()?;
            let q = cfg.query.grid.times(&series)?;
            log(cli, format!("{} queries x {} channels", q.len(), series.n_channels()));
            let fs = io::extract_checked(&series, &q, &cfg.lmft())?;
            let (csv, diag) = io::write_feature_files(&fs, series.channel_names(), &cfg.output)?;
            log(cli, format!("{} failed cells; wrote {csv} and {diag}", fs.failed_cells()));
            Ok(())
        }
        Command::Smooth { input, kernel } => smooth_cmd(cli, input, kernel, false),
        Command::Loess { input, kernel } => smooth_cmd(cli, input, kernel, true),
        Command::Classify { input, train_per_class, window, no_scale, positive } => {
            let items = io::read_corpus_csv(input)?;
            let spec = ClassifySpec {
                train_per_class: *train_per_class,
                scale: !no_scale,
                window: *window,
                positive: positive.clone(),
            };
            let c = classify_corpus(&items, &spec)?;
            let report = json!({
                "confusion": c.confusion.counts,
                "labels": c.confusion.labels,
                "positive": c.positive,
                "accuracy": c.metrics.accuracy,
                "precision": c.metrics.precision,
                "recall": c.metrics.recall,
                "f1": c.metrics.f1,
            });
            let body = to_json(&report)?;
            match cli.out.as_deref() {
                Some(prefix) => {
                    std::fs::write(format!("{prefix}.metrics.json"), &body)?;
                    let mut buf = Vec::new();
                    io::write_neighbors(&mut buf, &c)?;
                    std::fs::write(format!("{prefix}.neighbors.csv"), buf)?;
                }
                None => emit(None, &body)?,
            }
            Ok(())
        }
        Command::CheckWeights { instances } => {
            let report = run_suite(cli.seed.unwrap_or(0), *instances);
            log(cli, format!("{} checks", report.checks.len()));
            emit(cli.out.as_deref(), &to_json(&report)?)?;
            if report.failures > 0 {
                return Err(Error::Numerical(format!(
                    "{} of {} identity checks failed (max error {:e})",
                    report.failures, report.instances, report.max_abs_error
                )));
            }
            Ok(())
        }
        Command::DemoSeeds { steps, sweep } => {
            let sweeps = match sweep {
                Some(s) => vec![parse::<DemoSweep>("sweep", s)?],
                None => vec![DemoSweep::neighbor_line(0.0, 1.0, *steps), DemoSweep::fixed_line(-0.5, 0.5, *steps)],
            };
            let runs: Vec<_> = sweeps.iter().map(seed_demo).collect();
            for r in &runs {
                log(cli, format!("{:?}: jumps at {:?}", r.family, r.jumps));
            }
            emit(cli.out.as_deref(), &to_json(&runs)?)
        }
        Command::Run => {
            let Some(cfg) = load_config(cli)? else {
                return Err(Error::Config("run needs --config".into()));
            };
            let summary = io::run(&cfg)?;
            for f in &summary.files {
                log(cli, format!("wrote {f}"));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": {"kind": "validation", "message": e.to_string()}}));
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Numerical => ("numerical", 2),
                ErrorKind::Validation => ("validation", 1),
                ErrorKind::Io => ("io", 1),
            };
            eprintln!("{}", json!({"error": {"kind": kind, "message": e.to_string()}}));
            ExitCode::from(code)
        }
    }
}
