use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use msda::run::{self, OUTPUT_ROOT_ENV};
use msda::Error;

#[derive(Parser)]
#[command(name = "msda", version, about = "Multi-source domain adaptation for text classification")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Amazon,
    Pheme,
    Canonical,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw corpus into canonical JSONL files.
    Ingest {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Train one model and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (overrides the config and the environment).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Parent directory for runs without an explicit output.
        #[arg(long, env = OUTPUT_ROOT_ENV, hide_env_values = true)]
        output_root: Option<PathBuf>,
    },
    /// Leave-one-out evaluation over every labelled domain.
    EvalLoo {
        #[arg(long)]
        config: PathBuf,
        /// Cells trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, env = OUTPUT_ROOT_ENV, hide_env_values = true)]
        output_root: Option<PathBuf>,
    },
    /// Post-hoc analyses of trained runs.
    Analyze {
        #[command(subcommand)]
        which: Analysis,
    },
}

#[derive(Subcommand)]
enum Analysis {
    /// Krippendorff's alpha between every pair of domain experts.
    Agreement {
        /// Run directory; repeat to compare runs side by side.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Dataset to score (defaults to the run's own).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA scatter of one encoder's final-layer representations.
    Project {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "global")]
        encoder: String,
        /// Points per split.
        #[arg(long, default_value_t = 500)]
        sample_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn output_for(
    config: &std::path::Path,
    output: Option<PathBuf>,
    root: Option<PathBuf>,
) -> Result<Option<PathBuf>, Error> {
    if output.is_some() {
        return Ok(output);
    }
    let Some(root) = root else {
        return Ok(None);
    };
    let cfg = run::RunConfig::load(config)?;
    if cfg.output_dir.is_some() {
        return Ok(None);
    }
    Ok(Some(root.join(cfg.variant.to_string())))
}

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Ingest {
            kind,
            input,
            output,
        } => {
            let kind = match kind {
                Kind::Amazon => "amazon",
                Kind::Pheme => "pheme",
                Kind::Canonical => "canonical",
            };
            let summary = run::cmd_ingest(kind, &input, &output)?;
            print!("{}", summary.render());
            Ok(true)
        }
        Command::Train {
            config,
            output,
            output_root,
        } => {
            let out = output_for(&config, output, output_root)?;
            let dir = run::cmd_train(&config, out.as_deref())?;
            println!("{}", dir.display());
            Ok(true)
        }
        Command::EvalLoo {
            config,
            jobs,
            output,
            output_root,
        } => {
            let out = output_for(&config, output, output_root)?;
            let (dir, report) = run::cmd_eval_loo(&config, jobs, out.as_deref())?;
            print!("{}", msda::evaluation::render_table(std::slice::from_ref(&report)));
            for r in &report.reports {
                for f in &r.failures {
                    eprintln!("cell {} seed {} failed: {}", r.held_out_domain, f.seed, f.error);
                }
            }
            println!("{}", dir.display());
            Ok(!report.any_failed())
        }
        Command::Analyze { which } => match which {
            Analysis::Agreement { runs, dataset, out } => {
                let entries = run::cmd_analyze_agreement(&runs, dataset.as_deref(), &out)?;
                for e in entries {
                    println!(
                        "{}  {}  mean off-diagonal alpha {:.4}",
                        e.run.display(),
                        e.backbone,
                        e.mean_off_diagonal
                    );
                }
                Ok(true)
            }
            Analysis::Project {
                run: dir,
                dataset,
                encoder,
                sample_size,
                seed,
                out,
            } => {
                let r = run::cmd_analyze_project(
                    &dir,
                    dataset.as_deref(),
                    &encoder,
                    sample_size,
                    seed,
                    &out,
                )?;
                println!(
                    "{} points, explained variance {:.3} / {:.3}",
                    r.coordinates.len(),
                    r.explained_variance[0],
                    r.explained_variance[1]
                );
                Ok(true)
            }
        },
    }
}

/// Usage errors (bad paths, bad configs) exit with 2; failures during a run
/// exit with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::Config(_)
        | Error::Validation(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
