use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lassoconn::config::PipelineConfig;
use lassoconn::eval::EvalSummary;
use lassoconn::pipeline;

#[derive(Parser)]
#[command(
    name = "lassoconn",
    version,
    about = "Infer spiking-network topology from voltage traces"
)]
struct Cli {
    /// Pipeline configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    fields: FieldOverrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FieldOverrides {
    /// Neurons in the generated network.
    #[arg(long, global = true)]
    n_nodes: Option<usize>,
    /// Probability of each directed connection.
    #[arg(long, global = true)]
    p_connect: Option<f64>,
    /// Simulated time in ms.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Bin width in ms.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Cross-correlation lags in bins.
    #[arg(long, global = true)]
    max_lag: Option<usize>,
    /// Rasters as dense 0/1 matrices (one file per process kind).
    #[arg(long, global = true)]
    dense: bool,
    /// Any config field, e.g. `--set lasso.path.n_lambdas=80`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph and simulate it.
    Simulate,
    /// Detect spikes and events and bin them.
    Detect(Input),
    /// Fit the lasso path for every event raster.
    Infer(Input),
    /// Cross-correlation baseline on the spike raster.
    Baseline(Input),
    /// ROC and PPC curves for every ranked edge list.
    Evaluate(Input),
    /// All stages.
    Pipeline,
}

#[derive(Args)]
struct Input {
    /// Directory holding the previous stage's outputs (default: --out).
    #[arg(long)]
    input: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> lassoconn::Result<PipelineConfig> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    let f = &cli.fields;
    let mut sets = Vec::new();
    if let Some(s) = cli.seed {
        sets.push(format!("seed={s}"));
    }
    if let Some(v) = f.n_nodes {
        sets.push(format!("graph.n_nodes={v}"));
    }
    if let Some(v) = f.p_connect {
        sets.push(format!("graph.p_connect={v}"));
    }
    if let Some(v) = f.duration {
        sets.push(format!("sim.run.duration={v}"));
    }
    if let Some(v) = f.delta {
        sets.push(format!("events.delta={v}"));
    }
    if let Some(v) = f.max_lag {
        sets.push(format!("xcorr.max_lag={v}"));
    }
    if f.dense {
        sets.push("events.dense=true".into());
    }
    sets.extend(f.set.iter().cloned());
    let cfg = base.with_overrides(&sets)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_summaries(summaries: &[EvalSummary]) {
    let mut out = String::from("method,auc,max_ppc,max_ppc_plateau,bidirectional\n");
    for s in summaries {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{}/{}\n",
            s.method,
            s.auc,
            s.max_ppc,
            s.max_ppc_plateau,
            s.bidirectional_recovered,
            s.bidirectional_total
        ));
    }
    // a closed pipe (e.g. `| head`) is not an error
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
}

fn run(cli: &Cli) -> lassoconn::Result<()> {
    let cfg = resolve_config(cli).map_err(|e| e.in_stage("config"))?;
    let out = &cli.out;
    let input = |i: &Input| i.input.clone().unwrap_or_else(|| out.clone());
    match &cli.command {
        Command::Simulate => pipeline::cmd_simulate(&cfg, out),
        Command::Detect(i) => pipeline::cmd_detect(&cfg, &input(i), out).map(|_| ()),
        Command::Infer(i) => pipeline::cmd_infer(&cfg, &input(i), out),
        Command::Baseline(i) => pipeline::cmd_baseline(&cfg, &input(i), out),
        Command::Evaluate(i) => {
            pipeline::cmd_evaluate(&cfg, &input(i), out).map(|s| print_summaries(&s))
        }
        Command::Pipeline => pipeline::run_pipeline(&cfg, out).map(|s| print_summaries(&s)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: cannot start {t} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
