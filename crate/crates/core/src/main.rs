use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ferryline::harness::{self, ExperimentSpec, HarnessError, InputSpec, Overrides};

/// Trace-driven data-ferry selection experiments.
#[derive(Parser)]
#[command(name = "ferryline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured (selector, days) experiment and write reports.
    Run(Common),
    /// Write the configured synthetic trace as CSV.
    Synth(Common),
    /// Check the config file without simulating.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs on the calling thread.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
        }
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let spec = ExperimentSpec::load(&args.config)?;
            let outcome = harness::run(&spec, &args.overrides())?;
            for ((days, selector), report) in &outcome.reports {
                let overall: Vec<String> = report
                    .classes
                    .iter()
                    .map(|c| match c.avg_overall {
                        Some(v) => format!("{}={:.2}", c.class, v / 60.0),
                        None => format!("{}=-", c.class),
                    })
                    .collect();
                println!(
                    "{days:>3}d {selector:<9} overall min: {}",
                    overall.join(" ")
                );
            }
            for ((days, class), selector) in outcome.winners() {
                println!("{days:>3}d {class:<6} best: {selector}");
            }
            println!("wrote {} files", outcome.files.len());
        }
        Command::Synth(args) => {
            let spec = ExperimentSpec::load(&args.config)?;
            let (path, s) = harness::synth(&spec, &args.overrides())?;
            println!("wrote {}", path.display());
            println!("blocks: {}", s.blocks);
            println!("arrivals: {}", s.arrivals);
            println!("offers: {}", s.candidates);
            println!("candidate fraction: {:.4}", s.candidate_fraction);
            println!("anchors: {}", s.anchors);
            let bounds: Vec<String> = s.segment_boundaries.iter().map(|b| b.to_string()).collect();
            println!("segment boundaries: {}", bounds.join(" "));
        }
        Command::Validate(args) => {
            let mut spec = ExperimentSpec::load(&args.config)?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            let input = match &spec.input {
                InputSpec::Csv(p) => format!("csv {}", p.display()),
                InputSpec::Synthetic(s) => format!(
                    "synthetic, {} blocks, {} segments",
                    s.blocks.len(),
                    s.segments.len()
                ),
            };
            println!("config ok: {input}");
            println!(
                "{} selectors x {} day spans",
                spec.selectors.len(),
                spec.days.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FERRYLINE_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ferryline: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
