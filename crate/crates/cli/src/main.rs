use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use breathmap::ablation::{channel_sweep, node_report_csv, node_subset_report, NodeSubset};
use breathmap::io::{self, RunConfig};
use breathmap::pipeline::{evaluate, rate_rows, run_estimate, run_localize};
use breathmap::{generate, Channel, EstimatorConfig, Method, NodeId, ScenarioConfig, Trace};
use clap::{Args, Parser, Subcommand};

/// Breathing rate and location from multi-link RSS traces.
#[derive(Parser)]
#[command(name = "breathmap", version)]
struct Cli {
    /// Log progress and timing to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace with ground truth.
    Simulate(SimulateArgs),
    /// Sliding-window breathing rate estimates.
    Estimate(EstimateArgs),
    /// Per-window breathing images and location estimates.
    Localize(LocalizeArgs),
    /// Metrics for rate (and location) estimates.
    Evaluate(EvaluateArgs),
    /// Channel-subset and node-subset sweeps.
    Ablate(AblateArgs),
    /// Print the default run configuration.
    Config,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (key = value with a `preset`).
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: two_node, apartment or nap.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Trace CSV to write; companions are written next to it.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Run configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rescale window length and t-test group size to the trace's period.
    #[arg(long)]
    scale_window: bool,
    /// Keep only links among these node ids, e.g. 0,2,4,6.
    #[arg(long)]
    nodes: Option<String>,
    /// Keep only these channel indices, e.g. 0,3.
    #[arg(long)]
    channels: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: TraceArgs,
    /// basic or breakpoint; overrides the configuration.
    #[arg(long)]
    method: Option<Method>,
    /// Rate CSV to write; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    input: TraceArgs,
    /// Location CSV to write; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Directory for one image matrix CSV per window.
    #[arg(long)]
    image_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    rates: PathBuf,
    #[arg(long)]
    locations: Option<PathBuf>,
    /// Ground truth file written by `simulate`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 90.0)]
    median_span_s: f64,
    /// Metrics CSV to write.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    input: TraceArgs,
    #[arg(long)]
    method: Option<Method>,
    /// Channel subset sizes to sweep, e.g. 1,5; every size when empty.
    #[arg(long)]
    channel_sizes: Option<String>,
    /// Skip the channel sweep.
    #[arg(long)]
    no_channel_sweep: bool,
    /// Named node subset, e.g. floor=0,2,4,6; repeatable.
    #[arg(long = "node-subset")]
    node_subsets: Vec<String>,
    /// Ground truth file for acceptable fractions.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory for channel_sweep.csv and node_subsets.csv.
    #[arg(long, short)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<breathmap::Error>() {
        Some(err) if err.is_data_error() => 2,
        _ => 1,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Localize(a) => localize(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate(a),
        Command::Config => {
            print!("{}", RunConfig::default().to_key_values());
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let mut scenario = match (&a.scenario, a.preset.as_deref()) {
        (Some(path), _) => io::read_scenario(path)?,
        (None, Some("nap")) => ScenarioConfig::nap(0),
        (None, Some("apartment")) => ScenarioConfig::apartment(0),
        (None, Some("two_node") | None) => ScenarioConfig::two_node(0),
        (None, Some(other)) => return Err(anyhow!("unknown preset {other:?}")),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let sim = generate(&scenario)?;
    io::write_trace(&a.out, &sim.trace)?;
    io::write_truth(&io::truth_path(&a.out), &sim.truth)?;
    log::info!(
        "wrote {} links x {} samples to {}",
        sim.trace.series.len(),
        sim.trace.sample_count(),
        a.out.display()
    );
    Ok(())
}

fn load_input(a: &TraceArgs) -> anyhow::Result<(Trace, RunConfig)> {
    let mut config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let trace = io::read_trace(&a.trace)?;
    if a.scale_window {
        let scaled = EstimatorConfig::scaled_to_period(trace.period_s);
        config.estimator.window = scaled.window;
        config.estimator.ttest.q = scaled.ttest.q;
    }
    let nodes: Option<Vec<NodeId>> = a.nodes.as_deref().map(io::parse_id_list).transpose()?;
    let channels: Option<Vec<Channel>> = a.channels.as_deref().map(io::parse_id_list).transpose()?;
    let trace = if nodes.is_some() || channels.is_some() {
        trace.subset(nodes.as_deref(), channels.as_deref())?
    } else {
        trace
    };
    log::info!("{} links, {} samples", trace.series.len(), trace.sample_count());
    Ok((trace, config))
}

fn write_output(
    path: Option<&Path>,
    to_file: impl FnOnce(&Path) -> breathmap::Result<()>,
    to_writer: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> anyhow::Result<()> {
    match path {
        Some(p) => Ok(to_file(p)?),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            to_writer(&mut lock)?;
            Ok(lock.flush()?)
        }
    }
}

fn estimate(a: EstimateArgs) -> anyhow::Result<()> {
    let (trace, config) = load_input(&a.input)?;
    let method = a.method.unwrap_or(config.rate_method);
    let estimates = run_estimate(&trace, &config, method)?;
    let rows = rate_rows(&estimates, config.estimator.median_span_s);
    let out = a.out.or(config.rate_out);
    write_output(out.as_deref(), |p| io::write_rates(p, &rows), |w| io::write_rates_to(w, &rows))
}

fn localize(a: LocalizeArgs) -> anyhow::Result<()> {
    let (trace, config) = load_input(&a.input)?;
    let run = run_localize(&trace, &config)?;
    let mean = run.mean_location();
    log::info!("mean location ({:.2}, {:.2}) m", mean.x, mean.y);
    if let Some(dir) = a.image_dir.or_else(|| config.image_dir.clone()) {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, image) in run.images.iter().enumerate() {
            io::write_image(&dir.join(format!("image_{i:05}.csv")), image, &run.model.grid)?;
        }
    }
    let out = a.out.or(config.location_out);
    write_output(
        out.as_deref(),
        |p| io::write_locations(p, &run.rows),
        |w| io::write_locations_to(w, &run.rows),
    )
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let rates = io::read_rates(&a.rates)?;
    let locations = a.locations.as_deref().map(io::read_locations).transpose()?;
    let truth = a.truth.as_deref().map(io::read_truth).transpose()?;
    let report = evaluate(&rates, locations.as_deref(), truth.as_ref(), a.median_span_s)?;
    print!("{report}");
    if let Some(out) = &a.out {
        io::write_metrics(out, &report.metrics())?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let (trace, config) = load_input(&a.input)?;
    let method = a.method.unwrap_or(config.rate_method);
    let truth_bpm = a.truth.as_deref().map(io::read_truth).transpose()?.map(|t| t.rate_bpm);
    let subsets: Vec<NodeSubset> = a.node_subsets.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    if !a.no_channel_sweep {
        let sizes: Vec<usize> = match a.channel_sizes.as_deref() {
            Some(s) => io::parse_id_list(s)?,
            None => Vec::new(),
        };
        let sweep = channel_sweep(&trace, &config, method, &sizes, truth_bpm)?;
        let csv = sweep.to_csv();
        print!("{csv}");
        io::write_atomic(&a.out.join("channel_sweep.csv"), |w| w.write_all(csv.as_bytes()))?;
    }
    if !subsets.is_empty() {
        let rows = node_subset_report(&trace, &config, method, &subsets, truth_bpm)?;
        let csv = node_report_csv(&rows);
        print!("{csv}");
        io::write_atomic(&a.out.join("node_subsets.csv"), |w| w.write_all(csv.as_bytes()))?;
    }
    Ok(())
}
