use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use entrobound::config::RunConfig;
use entrobound::pipeline::{cmd_abstract, cmd_bounds, cmd_simulate, cmd_synthesize, parse_range};
use entrobound::Result;

#[derive(Parser)]
#[command(name = "entrobound", version, about = "Certified trajectory-entropy bounds and entropy-regularized synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of cached abstractions.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample count override.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the interval abstraction and write it to disk.
    Abstract(Common),
    /// Certified bounds on the KL to uniform of a chain.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Resolutions `A..B` (cells per dimension) to sweep.
        #[arg(long)]
        sweep: Option<String>,
        /// Use this abstraction file instead of building one.
        #[arg(long)]
        abstraction: Option<PathBuf>,
        /// Action to pin when the model has several.
        #[arg(long)]
        action: Option<usize>,
    },
    /// Entropy-regularized policies, their bounds, and the cost-only baseline.
    Synthesize(Common),
    /// Monte Carlo estimates, checked against a report when one is given.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Constant action instead of a policy file.
        #[arg(long)]
        action: Option<usize>,
        /// Bounds or synthesis report holding the certified interval.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.solver.seed = s;
    }
    if let Some(m) = c.samples {
        cfg.solver.samples = m;
    }
    cfg.validate()?;
    let out = c.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Abstract(c) => {
            let (cfg, out) = load(&c)?;
            let path = cmd_abstract(&cfg, &out, c.cache.as_deref())?;
            println!("{}", path.display());
        }
        Command::Bounds { common, sweep, abstraction, action } => {
            let (cfg, out) = load(&common)?;
            let sweep = sweep.as_deref().map(parse_range).transpose()?;
            let r = cmd_bounds(&cfg, abstraction.as_deref(), action, sweep, &out, common.cache.as_deref())?;
            for run in &r.result {
                let b = &run.bounds;
                println!("cells={} lower={:.6} upper_global={:.6} upper_local={:.6}", run.cells, b.lower, b.upper_global, b.upper_local);
            }
        }
        Command::Synthesize(c) => {
            let (cfg, out) = load(&c)?;
            let r = cmd_synthesize(&cfg, &out, c.cache.as_deref())?;
            let s = &r.result.synthesis;
            println!("{}", s.mode);
            println!("global: {:.6} <= objective <= {:.6}", s.lower_global, s.upper_global);
            println!("local:  {:.6} <= objective <= {:.6}", s.lower_local, s.upper_local);
        }
        Command::Simulate { common, policy, action, report } => {
            let (cfg, out) = load(&common)?;
            let r = cmd_simulate(&cfg, policy.as_deref(), action, report.as_deref(), &out)?;
            println!("{}", serde_json::to_string_pretty(&r.result)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("ENTROBOUND_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not cap the thread pool: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
