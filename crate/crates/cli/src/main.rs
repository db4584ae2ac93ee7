use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use microtop::config::{self, ProblemConfig};
use microtop::{benchmark, output, run, CliError};

#[derive(Parser)]
#[command(name = "microtop", version, about = "Topology optimisation of periodic microstructures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for a random initial design.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    solver: Option<SolverArg>,
    /// Dotted-key override, e.g. `solver.lambda_threshold=6.5e-4`; repeatable.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Direct,
    Msfem,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimisation and write images, convergence log and summary.
    Optimize {
        /// JSON config; omit to use preset defaults (`-s preset=...`).
        config: Option<PathBuf>,
        /// Start from a design dump instead of the configured initial design.
        #[arg(long)]
        restart: Option<PathBuf>,
    },
    /// Coarse-space error and GMRES iteration sweep on the cross benchmark.
    Benchmark { config: Option<PathBuf> },
    /// Solve once for a stored design and report compliances.
    Analyze { config: PathBuf, design: PathBuf },
    /// Print the resolved configuration.
    Config { config: Option<PathBuf> },
}

fn resolve(cli: &Cli, path: Option<&PathBuf>) -> Result<ProblemConfig, CliError> {
    let mut overrides: Vec<(String, Value)> = cli
        .overrides
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<Result<_, _>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("optimizer.seed".into(), Value::from(seed)));
    }
    if let Some(s) = cli.solver {
        let kind = match s {
            SolverArg::Direct => "direct",
            SolverArg::Msfem => "msfem",
        };
        overrides.push(("solver.kind".into(), Value::from(kind)));
    }
    config::load(path.map(PathBuf::as_path), &overrides)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Optimize { config, restart } => {
            let cfg = resolve(cli, config.as_ref())?;
            let out = cli.output_dir.clone().unwrap_or_else(|| run::default_output_dir(&cfg));
            let restart = restart.as_deref().map(output::read_dump).transpose()?;
            let (_, summary) = run::optimize(&cfg, &out, restart)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serialises"));
        }
        Command::Benchmark { config } => {
            let cfg = resolve(cli, config.as_ref())?;
            let out = cli.output_dir.clone().unwrap_or_else(|| run::default_output_dir(&cfg));
            let rows = benchmark::run_benchmark(&cfg, &out)?;
            println!("variant,emin,lambda,n_t,energy_error,gmres_iterations");
            for r in rows {
                println!(
                    "{:?},{},{},{},{},{}",
                    r.variant, r.emin, r.lambda, r.n_t, r.energy_error, r.gmres_iterations
                );
            }
        }
        Command::Analyze { config, design } => {
            let cfg = resolve(cli, Some(config))?;
            let x = output::read_dump(design)?;
            let report = run::analyze(&cfg, &x)?;
            let text = serde_json::to_string_pretty(&report).expect("report serialises");
            if let Some(out) = &cli.output_dir {
                std::fs::create_dir_all(out).map_err(|e| CliError::Io(out.display().to_string(), e))?;
                let p = out.join("analysis.json");
                std::fs::write(&p, &text).map_err(|e| CliError::Io(p.display().to_string(), e))?;
            }
            println!("{text}");
        }
        Command::Config { config } => {
            let cfg = resolve(cli, config.as_ref())?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serialises"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
