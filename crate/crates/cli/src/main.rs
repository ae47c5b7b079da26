use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use shiftex::FeasibilityRule;
use shiftex_cli::{config, run, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "shiftex", version, about = "Learn and score group-aware shift explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to $SHIFTEX_OUT/<config name>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Named hyperparameter set, e.g. adult-kcluster.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Actionability,
    GroupPreservation,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an explanation and write a run directory.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        /// Extra fits with consecutive seeds, summarized as mean and std.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Recompute the metrics of an existing run.
    Evaluate {
        run_dir: PathBuf,
        /// Override the feasibility rule stored in the run config.
        #[arg(long, value_enum)]
        feasibility: Option<RuleArg>,
    },
    /// Fit, then measure sensitivity to small source perturbations.
    Robustness {
        #[command(flatten)]
        run: RunArgs,
        /// Trials averaged into omega.
        #[arg(long)]
        trials: Option<usize>,
        /// Trials maximized into omega_worst.
        #[arg(long = "worst-trials")]
        worst_trials: Option<usize>,
    },
    /// Write plotting CSVs for a run.
    Plotdata { run_dir: PathBuf },
}

fn resolve(args: &RunArgs, extra: Overrides) -> Result<(RunConfig, PathBuf)> {
    let cfg = config::load(&args.config)?.resolve(&Overrides {
        preset: args.preset.clone(),
        seed: args.seed,
        out: args.out.clone(),
        ..extra
    })?;
    let dir = cfg.run_dir(&args.config);
    Ok((cfg, dir))
}

fn summary_line(dir: &Path, r: &shiftex_cli::EvaluationReport) {
    println!(
        "{}: pe {:.2}  wg_pe {:.2}  feasible {:.1}%",
        dir.display(),
        r.pe,
        r.wg_pe,
        r.feasible_pct
    );
}

fn main_inner() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Explain { run: args, repeats } => {
            let (cfg, dir) = resolve(&args, Overrides { repeats, ..Default::default() })?;
            let r = run::explain(&cfg, &dir)?;
            summary_line(&dir, &r);
        }
        Command::Evaluate { run_dir, feasibility } => {
            let rule = feasibility.map(|f| match f {
                RuleArg::GroupPreservation => FeasibilityRule::GroupPreservation,
                RuleArg::Actionability => FeasibilityRule::Actionability {
                    protected: Vec::new(),
                    tolerance: 0.5,
                },
            });
            let rule = match rule {
                Some(FeasibilityRule::Actionability { .. }) => {
                    let data: shiftex_cli::report::RunData =
                        shiftex_cli::report::read_json(&run_dir, shiftex_cli::report::DATA)?;
                    Some(FeasibilityRule::from_schema(&data.source))
                }
                other => other,
            };
            let r = run::evaluate(&run_dir, rule)?;
            println!("{}", serde_json::to_string_pretty(&r).context("serializing report")?);
        }
        Command::Robustness {
            run: args,
            trials,
            worst_trials,
        } => {
            let (cfg, dir) = resolve(&args, Overrides { trials, worst_trials, ..Default::default() })?;
            let r = run::robustness_run(&cfg, &dir)?;
            summary_line(&dir, &r);
            if let Some(rob) = &r.robustness {
                println!("omega {:.4}  omega_worst {:.4}  ({} trials)", rob.omega, rob.omega_worst, rob.trials);
            }
        }
        Command::Plotdata { run_dir } => {
            for p in run::plotdata(&run_dir)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
