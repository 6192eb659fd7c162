use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use treeicp::eval::{self, EvalReport};
use treeicp::icp::{self, DiscoveryResult, IcpParams, Method};
use treeicp::io::{self, GraphDocument};
use treeicp::{sem, Dataset, PValue, SemSpec};

#[derive(Parser, Debug)]
#[command(name = "treeicp", version, about = "Causal discovery with tree-generated environments")]
struct Cli {
    /// Worker threads for parallel sections (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a dataset from a builtin or JSON structural equation model.
    Simulate {
        /// Builtin model name or path to a JSON model file.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Find the causal parents of one target, or of every column.
    Discover {
        /// Input CSV with `name:kind` headers.
        #[arg(long)]
        data: PathBuf,
        /// Target column; every column takes a turn when omitted.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = Method::V1, value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        icp: IcpArgs,
        /// JSON report path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the discovered graph as Graphviz DOT.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Repeated simulate-and-discover runs scored against the true graph.
    Evaluate {
        /// Builtin model names or JSON model paths (default: every builtin).
        #[arg(long, num_args = 1..)]
        spec: Vec<String>,
        #[arg(long, num_args = 1.., default_values_t = [Method::V1], value_parser = parse_method)]
        method: Vec<Method>,
        #[command(flatten)]
        icp: IcpArgs,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        sims: usize,
        /// Simulation `i` uses seed `seed + i`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON report path.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Text table path (stdout when omitted).
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Emit a graph as Graphviz DOT.
    Graph {
        /// True graph of a builtin or JSON model.
        #[arg(long, conflicts_with = "result", required_unless_present = "result")]
        spec: Option<String>,
        /// Discovered graph from a `discover` report.
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct IcpArgs {
    #[arg(long, default_value_t = 3)]
    k_envs: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha_vote: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha_shift: f64,
    #[arg(long, default_value_t = 5)]
    cap: usize,
    /// Minimum samples per environment (default: max(30, n / (10 K))).
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    max_report_subsets: usize,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: treeicp::Error| e.to_string())
}

impl IcpArgs {
    fn params(&self) -> anyhow::Result<IcpParams> {
        let prob = |name: &str, v: f64| -> anyhow::Result<PValue> {
            PValue::checked(v).with_context(|| format!("--{name} must lie in [0, 1]"))
        };
        let params = IcpParams {
            k_envs: self.k_envs,
            alpha: prob("alpha", self.alpha)?,
            alpha_vote: prob("alpha-vote", self.alpha_vote)?,
            alpha_shift: prob("alpha-shift", self.alpha_shift)?,
            cap: self.cap,
            min_leaf: self.min_leaf,
            max_report_subsets: self.max_report_subsets,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Output of `discover`: one result per target plus the merged graph.
#[derive(Debug, Serialize, Deserialize)]
struct DiscoverReport {
    dataset: String,
    method: Method,
    results: Vec<DiscoveryResult>,
    graph: GraphDocument,
}

fn load_spec(arg: &str) -> anyhow::Result<SemSpec> {
    if let Some(spec) = sem::builtin_spec(arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if path.is_file() {
        return io::read_spec(path).with_context(|| format!("reading model {}", path.display()));
    }
    bail!(
        "unknown model `{arg}`; builtin models are: {}",
        sem::builtin_names().join(", ")
    )
}

fn emit(text: &str, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn simulate_cmd(spec: &str, n: usize, seed: u64, output: &Path) -> anyhow::Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    let spec = load_spec(spec)?;
    let data = sem::simulate(&spec, n, seed)?;
    io::write_dataset(&data, output, Some(&spec.name))?;
    info!("wrote {} rows x {} columns to {}", data.n_rows(), data.n_cols(), output.display());
    Ok(())
}

fn discover_cmd(
    data_path: &Path,
    target: Option<&str>,
    method: Method,
    params: &IcpParams,
    output: Option<&Path>,
    dot: Option<&Path>,
) -> anyhow::Result<()> {
    let (data, warnings) =
        io::read_dataset(data_path).with_context(|| format!("reading {}", data_path.display()))?;
    for w in warnings {
        warn!("{w}");
    }
    let targets: Vec<String> = match target {
        Some(t) => {
            data.index_of(t)?;
            vec![t.to_owned()]
        }
        None => data.names().map(str::to_owned).collect(),
    };
    let results = discover_all(&data, &targets, method, params)?;
    for r in &results {
        for w in &r.warnings {
            warn!("{}: {w}", r.target);
        }
    }

    let name = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let metadata = [
        ("method".to_string(), method.to_string()),
        ("alpha".to_string(), params.alpha.get().to_string()),
    ]
    .into();
    let graph = GraphDocument::from_discoveries(
        &name,
        data.names().map(str::to_owned),
        results.iter().map(|r| (r.target.as_str(), r.parents.as_slice())),
        metadata,
    )?;
    if let Some(path) = dot {
        io::export_dot(&graph, path)?;
    }
    let report = DiscoverReport { dataset: name, method, results, graph };
    emit(&io::to_json(&report)?, output)
}

fn discover_all(
    data: &Dataset,
    targets: &[String],
    method: Method,
    params: &IcpParams,
) -> anyhow::Result<Vec<DiscoveryResult>> {
    targets
        .iter()
        .map(|t| icp::discover(data, t, method, params).with_context(|| format!("target {t}")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    specs: &[String],
    methods: &[Method],
    params: &IcpParams,
    n: usize,
    sims: usize,
    seed: u64,
    output: Option<&Path>,
    table: Option<&Path>,
) -> anyhow::Result<()> {
    if n == 0 {
        bail!("--n must be positive");
    }
    if sims == 0 {
        bail!("--sims must be positive");
    }
    let specs: Vec<SemSpec> = if specs.is_empty() {
        sem::builtin_specs()
    } else {
        specs.iter().map(|s| load_spec(s)).collect::<anyhow::Result<_>>()?
    };
    let seeds = eval::default_seeds(seed, sims);
    let mut reports: Vec<EvalReport> = Vec::new();
    for spec in &specs {
        for &method in methods {
            info!("evaluating {} with {method}", spec.name);
            reports.push(eval::run_experiment(spec, method, n, &seeds, params)?);
        }
    }
    if let Some(path) = output {
        io::write_json(&reports, path)?;
    }
    emit(&eval::render_table(&reports), table)
}

fn graph_cmd(spec: Option<&str>, result: Option<&Path>, output: Option<&Path>) -> anyhow::Result<()> {
    let graph = match (spec, result) {
        (Some(s), _) => {
            let spec = load_spec(s)?;
            GraphDocument::from_causal_graph(&spec.name, &sem::ground_truth(&spec)?)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let report: DiscoverReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            report.graph
        }
        (None, None) => bail!("pass --spec or --result"),
    };
    emit(&io::to_dot(&graph), output)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { spec, n, seed, output } => simulate_cmd(&spec, n, seed, &output),
        Command::Discover { data, target, method, icp, output, dot } => {
            let params = icp.params()?;
            discover_cmd(&data, target.as_deref(), method, &params, output.as_deref(), dot.as_deref())
        }
        Command::Evaluate { spec, method, icp, n, sims, seed, output, table } => {
            let params = icp.params()?;
            evaluate_cmd(&spec, &method, &params, n, sims, seed, output.as_deref(), table.as_deref())
        }
        Command::Graph { spec, result, output } => graph_cmd(spec.as_deref(), result.as_deref(), output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    if cli.workers == Some(0) {
        eprintln!("error: --workers must be positive");
        return ExitCode::FAILURE;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
