//! Batch front-end for loss-tomography experiments.
//!
//! Subcommands: `simulate` (write an observation dump), `estimate`
//! (path/link rates from a dump or an inline simulation), `analyze`
//! (closed-form information and variance tables), `mc` (Monte-Carlo
//! validation reports), and `reproduce-example` (the four-estimator
//! variance table of the symmetric three-child configuration).
//!
//! Exit codes: 0 on success, 2 on configuration or parse errors, 3 when
//! an input exceeds an enumeration/subset capacity limit.
//! `LOSSTOMO_THREADS` caps the worker-thread count.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use losstomo::analysis::{
    analysis_to_csv, analysis_to_json, analyze_model, crb_variance, monte_carlo, reports_to_csv,
    reports_to_json, AnalysisError, McConfig,
};
use losstomo::estimators::{estimate_tree, EstimatorError, EstimatorTag, Method};
use losstomo::sim::{exact_outcome_distribution, simulate, ObservationMatrix, SimError};
use losstomo::stats::{StatsError, SubtreeStatistics};
use losstomo::tree::{parse_tree_spec, LossModel, Tree, TreeError, TrueRates};

#[derive(Parser)]
#[command(
    name = "losstomo",
    version,
    about = "Multicast loss tomography toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct TreeArgs {
    /// Tree spec file: one `<node> <parent> <pass-rate>` line per link.
    #[arg(long)]
    tree: PathBuf,
    /// Override every link's pass rate with one uniform value.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an experiment and write the observation dump.
    Simulate {
        #[command(flatten)]
        tree: TreeArgs,
        /// Probes to send.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate path and link pass rates.
    Estimate {
        #[command(flatten)]
        tree: TreeArgs,
        /// Observation dump to replay; alternatively simulate inline with --n.
        #[arg(long, conflicts_with = "n")]
        input: Option<PathBuf>,
        /// Probes for an inline simulation.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Estimator: mle | rse[:size] | bwe[:degree] | ibe[:pair|:all] | merged.
        #[arg(long, default_value = "mle")]
        method: String,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Closed-form Fisher information and variance tables for a model.
    Analyze {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Monte-Carlo validation of the estimators against the closed forms.
    Mc {
        #[command(flatten)]
        tree: TreeArgs,
        /// Probes per replication.
        #[arg(long)]
        n: usize,
        /// Number of replications (each re-seeds with seed + r).
        #[arg(long)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated estimator list.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// The four-estimator per-observation variance table (direct, mle,
    /// ibe-pair, ibe-all) for the symmetric three-child configuration.
    ReproduceExample {
        /// Uniform pass rate of all four links.
        #[arg(long)]
        alpha: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Exhaustive outcome distribution of a small tree (oracle dump).
    Distribution {
        #[command(flatten)]
        tree: TreeArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
}

enum CliError {
    Config(String),
    Capacity(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Capacity(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Capacity(m) => write!(f, "{m}"),
        }
    }
}

fn config<E: fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::SubsetCap { .. } => CliError::Capacity(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::SubsetCap { .. } => CliError::Capacity(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::EnumerationCap { .. } => CliError::Capacity(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Stats(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Tree(t) => t.into(),
            AnalysisError::Estimator(s) => s.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads().and_then(|_| run(cli.command)) {
        eprintln!("losstomo: {e}");
        return ExitCode::from(e.exit_code());
    }
    ExitCode::SUCCESS
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("LOSSTOMO_THREADS") {
        let threads: usize = v.parse().ok().filter(|&t| t >= 1).ok_or_else(|| {
            CliError::Config(format!(
                "LOSSTOMO_THREADS must be a positive integer, found `{v}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(config)?;
    }
    Ok(())
}

fn load_tree(args: &TreeArgs) -> Result<(Tree, LossModel), CliError> {
    let text = fs::read_to_string(&args.tree)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.tree.display())))?;
    let (tree, model) = parse_tree_spec(&text).map_err(config)?;
    let model = match args.alpha {
        Some(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(CliError::Config(format!("--alpha {a} outside [0, 1]")));
            }
            LossModel::uniform(&tree, a)
        }
        None => model,
    };
    Ok((tree, model))
}

fn emit(output: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate {
            tree,
            n,
            seed,
            output,
        } => {
            if n < 1 {
                return Err(CliError::Config("--n must be at least 1".into()));
            }
            let (tree, model) = load_tree(&tree)?;
            let (obs, _) = simulate(&tree, &model, n, seed);
            emit(&output, &obs.to_csv())
        }
        Command::Estimate {
            tree,
            input,
            n,
            seed,
            method,
            out,
        } => {
            let (tree, model) = load_tree(&tree)?;
            let method: Method = method.parse().map_err(config)?;
            let obs = match (input, n) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).map_err(|e| {
                        CliError::Config(format!("cannot read {}: {e}", path.display()))
                    })?;
                    ObservationMatrix::from_csv(&text).map_err(config)?
                }
                (None, Some(n)) if n >= 1 => simulate(&tree, &model, n, seed).0,
                (None, Some(_)) => return Err(CliError::Config("--n must be at least 1".into())),
                (None, None) => {
                    return Err(CliError::Config("either --input or --n is required".into()))
                }
            };
            let stats = SubtreeStatistics::from_observations(&tree, &obs)?;
            let set = estimate_tree(&tree, &stats, &method)?;
            let rendered = match out.format {
                Format::Csv => set.to_csv(),
                Format::Json => set.to_json(),
            };
            emit(&out.output, &rendered)
        }
        Command::Analyze { tree, out } => {
            let (tree, model) = load_tree(&tree)?;
            let rates = TrueRates::compute(&tree, &model);
            let rows = analyze_model(&tree, &rates)?;
            let rendered = match out.format {
                Format::Csv => analysis_to_csv(&rows),
                Format::Json => analysis_to_json(&rows),
            };
            emit(&out.output, &rendered)
        }
        Command::Mc {
            tree,
            n,
            reps,
            seed,
            methods,
            out,
        } => {
            if n < 1 {
                return Err(CliError::Config("--n must be at least 1".into()));
            }
            let (tree, model) = load_tree(&tree)?;
            let methods: Vec<Method> = methods
                .iter()
                .map(|m| m.parse().map_err(config))
                .collect::<Result<_, _>>()?;
            if methods.is_empty() {
                return Err(CliError::Config(
                    "--methods must name at least one estimator".into(),
                ));
            }
            let cfg = McConfig {
                n,
                replications: reps,
                base_seed: seed,
                methods,
            };
            let reports = monte_carlo(&tree, &model, &cfg)?;
            let rendered = match out.format {
                Format::Csv => reports_to_csv(&reports),
                Format::Json => reports_to_json(&reports),
            };
            emit(&out.output, &rendered)
        }
        Command::ReproduceExample { alpha, out } => {
            if alpha.is_nan() || alpha <= 0.0 || alpha > 1.0 {
                return Err(CliError::Config(format!("--alpha {alpha} outside (0, 1]")));
            }
            let tree = Tree::from_links(&[(1, 0), (2, 1), (3, 1), (4, 1)]).expect("static tree");
            let model = LossModel::uniform(&tree, alpha);
            let rates = TrueRates::compute(&tree, &model);
            let table = [
                ("direct", EstimatorTag::Direct),
                ("mle", EstimatorTag::Mle),
                ("ibe-pair", EstimatorTag::Ibe(vec![2, 3])),
                ("ibe-all", EstimatorTag::Ibe(vec![2, 3, 4])),
            ];
            #[derive(Serialize)]
            struct Row {
                estimator: &'static str,
                variance: f64,
            }
            let mut rows = Vec::new();
            for (name, tag) in table {
                rows.push(Row {
                    estimator: name,
                    variance: crb_variance(&tree, &rates, 1, &tag)?,
                });
            }
            let rendered = match out.format {
                Format::Csv => {
                    let mut s = String::from("estimator,variance\n");
                    for r in &rows {
                        s.push_str(&format!("{},{}\n", r.estimator, r.variance));
                    }
                    s
                }
                Format::Json => serde_json::to_string_pretty(&rows).expect("serializable"),
            };
            emit(&out.output, &rendered)
        }
        Command::Distribution { tree, out } => {
            let (tree, model) = load_tree(&tree)?;
            let dist = exact_outcome_distribution(&tree, &model)?;
            #[derive(Serialize)]
            struct Row {
                pattern: String,
                probability: f64,
            }
            let width = dist.receiver_ids().len();
            let rows: Vec<Row> = dist
                .probabilities()
                .iter()
                .map(|(&mask, &p)| Row {
                    pattern: (0..width)
                        .map(|i| if mask >> i & 1 == 1 { '1' } else { '0' })
                        .collect(),
                    probability: p,
                })
                .collect();
            let rendered = match out.format {
                Format::Csv => {
                    let ids = dist
                        .receiver_ids()
                        .iter()
                        .map(|r| r.to_string())
                        .collect::<Vec<_>>()
                        .join(";");
                    let mut s = format!("# receiver order: {ids}\npattern,probability\n");
                    for r in &rows {
                        s.push_str(&format!("{},{}\n", r.pattern, r.probability));
                    }
                    s
                }
                Format::Json => serde_json::to_string_pretty(&rows).expect("serializable"),
            };
            emit(&out.output, &rendered)
        }
    }
}
