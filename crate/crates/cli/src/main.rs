use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cascadim::experiments::{self, ExperimentConfig, ExperimentKind};
use cascadim::par;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascadim", version, about = "Dimension experiments for random cascades and percolations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Entropy dimension of a Mandelbrot cascade on a tiling image.
    CascadeDim(RunArgs),
    /// Box dimension of the image of a percolated subshift.
    PercImageDim(RunArgs),
    /// Box dimension of sums of two percolation sets.
    SumsetDim(RunArgs),
    /// Entropy dimensions of linear projections of a product measure.
    ProjectionScan(RunArgs),
    /// Entropy dimension of a convolution of two Bernoulli convolutions.
    Bconv(RunArgs),
    /// Overlap counts and their growth exponent.
    Gamma(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; the experiment's defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default `runs/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of trials (overrides the config).
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Skip plot.svg.
    #[arg(long)]
    no_plot: bool,
    /// Record the wall-clock runtime in report.json (it is always in timing.json).
    #[arg(long)]
    timing: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::CascadeDim(a) => (ExperimentKind::CascadeDim, a),
            Command::PercImageDim(a) => (ExperimentKind::PercImageDim, a),
            Command::SumsetDim(a) => (ExperimentKind::SumsetDim, a),
            Command::ProjectionScan(a) => (ExperimentKind::ProjectionScan, a),
            Command::Bconv(a) => (ExperimentKind::Bconv, a),
            Command::Gamma(a) => (ExperimentKind::Gamma, a),
        }
    }
}

fn run(kind: ExperimentKind, args: RunArgs) -> cascadim::Result<i32> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::preset(kind),
    };
    if config.kind() != kind {
        return Err(cascadim::Error::Config(format!(
            "config is for `{}`, not `{}`",
            config.kind().name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.params.set_trials(trials);
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(kind.name()));

    let start = Instant::now();
    let mut output = par::with_threads(args.threads, || experiments::run(&config))?;
    let runtime = start.elapsed().as_secs_f64();
    if args.timing {
        output.report.runtime_s = Some(runtime);
    }
    experiments::write_outputs(&out_dir, &output, !args.no_plot)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml_string()?)?;
    let timing = serde_json::json!({ "runtime_s": runtime, "threads": args.threads, "parallel": par::parallel_enabled() });
    std::fs::write(out_dir.join("timing.json"), format!("{timing}\n"))?;

    let r = &output.report;
    for case in &r.cases {
        println!(
            "{:<24} estimate {:.4} ± {:.4}  target {:.4}  [{}]",
            case.label,
            case.estimate.value,
            case.estimate.stderr,
            case.target.value,
            if case.verdict == experiments::Verdict::Pass { "pass" } else { "fail" }
        );
    }
    if let Some(b) = &r.bound {
        println!("upper bound {:.4} = {}", b.value, b.formula);
    }
    println!(
        "{}: {}{} (discarded seeds {}, {:.1} s) -> {}",
        r.experiment,
        if r.passed() { "PASS" } else { "FAIL" },
        if r.advisory { " (advisory)" } else { "" },
        r.discarded_seeds,
        runtime,
        out_dir.display()
    );
    eprintln!("runtime {runtime:.3} s");
    Ok(r.exit_code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match run(kind, args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
