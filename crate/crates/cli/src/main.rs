use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use monodiff::graph::catalog;
use monodiff_cli::config::ExperimentConfig;
use monodiff_cli::run::{replay, run_experiment};
use monodiff_cli::CliError;

#[derive(Parser)]
#[command(name = "monodiff", version, about = "Stochastic porous-media experiments with checksummed outputs")]
struct Cli {
    /// Worker threads (falls back to MONODIFF_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and verify one experiment.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides `verifier.seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a manifest and compare checksums.
    Replay { manifest: PathBuf },
    /// Print the built-in graph families.
    ListGraphs {
        /// Also screen each family's potential for symmetric growth.
        #[arg(long)]
        check_h3: bool,
    },
}

fn workers(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("MONODIFF_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::ConfigInvalid(format!("MONODIFF_WORKERS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn list_graphs(check_h3: bool) -> Result<(), CliError> {
    let grid: Vec<f64> = (0..60).map(|i| 1.25f64.powi(i) * 1e-2).collect();
    for entry in catalog() {
        println!("{}", entry.family);
        println!("  psi:       {}", entry.psi);
        println!("  potential: {}", entry.potential.unwrap_or("none in closed form"));
        println!("  growth:    {}", entry.h3);
        println!("  note:      {}", entry.note);
        if check_h3 {
            let spec: Option<monodiff::GraphSpec> = match entry.family {
                "power_law" => Some(monodiff::GraphSpec::PowerLaw { r: 2.0 }),
                "fast_diffusion" => Some(monodiff::GraphSpec::FastDiffusion),
                "logarithmic" => Some(monodiff::GraphSpec::Logarithmic { mu: 1.0 }),
                "exponential_power" => Some(monodiff::GraphSpec::ExponentialPower { a: 1.0, p: 1.0 }),
                "piecewise" => Some(monodiff::GraphSpec::Step),
                _ => None,
            };
            if let Some(spec) = spec {
                let g = spec.build().map_err(|e| CliError::SolverFailure(e.to_string()))?;
                match g.check_h3(&grid) {
                    Ok(r) => println!(
                        "  screen:    sup j(-s)/j(s) = {:.4}, surjective = {}, full domain = {}{}",
                        r.sup_ratio + 0.0,
                        r.surjective,
                        r.full_domain,
                        if r.overflow { " (overflow at the top of the grid)" } else { "" }
                    ),
                    Err(e) => println!("  screen:    unavailable ({e})"),
                }
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::ConfigInvalid(format!("cannot read {}: {e}", config.display())))?;
            let cfg = ExperimentConfig::parse(&text)?;
            let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let summary = run_experiment(&cfg, &out, seed)?;
            for c in &summary.checks {
                println!("{}", c.summary_line());
            }
            println!("manifest: {}", summary.manifest.display());
            if summary.all_passed() {
                Ok(())
            } else {
                let failed: Vec<&str> = summary.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(CliError::ChecksFailed(failed.join(", ")))
            }
        }
        Command::Replay { manifest } => {
            let inventory = replay(&manifest)?;
            for e in inventory {
                println!("ok {} {} ({} bytes)", e.file, e.sha256, e.bytes);
            }
            Ok(())
        }
        Command::ListGraphs { check_h3 } => list_graphs(check_h3),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = workers(cli.workers).and_then(|n| match n {
        Some(0) => Err(CliError::ConfigInvalid("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::SolverFailure(e.to_string()))
            .and_then(|pool| pool.install(|| execute(cli))),
        None => execute(cli),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
