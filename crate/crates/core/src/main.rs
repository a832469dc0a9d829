use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use genselect::arms::{Arm, CategoricalArm, GaussianArm};
use genselect::bandit::PolicyKind;
use genselect::config::{load_config, Overrides};
use genselect::embeddings::{load_embeddings, write_embeddings, Dataset};
use genselect::matstats::SymMatrix;
use genselect::runner::{self, default_output_dir, fit_reference, save_ref_stats};
use genselect::Result;

#[derive(Parser)]
#[command(name = "genselect", version, about = "Online generative-model selection with optimistic bandits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a bandit experiment and write trials.csv, aggregate.csv, manifest.toml.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo check of the confidence-bound coverage for each arm.
    CheckBounds {
        #[command(flatten)]
        common: Common,
    },
    /// Compute reference mean and covariance from an embedding file.
    MakeRef {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic embedding dataset.
    GenSynthetic {
        #[command(subcommand)]
        kind: Synthetic,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory [default: $GENSELECT_OUTPUT_DIR or ./results].
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Comma-separated policies.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policies: Option<Vec<PolicyKind>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Switch to the bounded-norm bonus with this norm bound.
    #[arg(long)]
    norm_bound: Option<f64>,
    /// Trials per (arm, n) for check-bounds.
    #[arg(long)]
    check_trials: Option<usize>,
}

#[derive(Subcommand)]
enum Synthetic {
    /// Isotropic Gaussian samples `N(shift·e₁, variance·I)`.
    Gaussian {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.0)]
        shift: f64,
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Class-probability vectors from a symmetric mixture with a target score.
    Categorical {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        target_is: f64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn parse_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    match s.trim() {
        "fd_ucb" => Ok(PolicyKind::FdUcb),
        "is_ucb" => Ok(PolicyKind::IsUcb),
        "naive_ucb" => Ok(PolicyKind::NaiveUcb),
        "greedy" => Ok(PolicyKind::Greedy),
        "random" => Ok(PolicyKind::Random),
        other => Err(format!("unknown policy `{other}`")),
    }
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            policies: self.policies.clone(),
            steps: self.steps,
            batch_size: self.batch_size,
            delta: self.delta,
            trials: self.trials,
            seed: self.seed,
            kappa: self.kappa,
            threshold: self.threshold,
            burn_in: self.burn_in,
            norm_bound: self.norm_bound,
            check_trials: self.check_trials,
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(default_output_dir)
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common } => {
            let mut cfg = load_config(&common.config)?;
            cfg.apply_overrides(&common.overrides())?;
            let out = runner::run(&cfg, &common.out_dir())?;
            for s in &out.summaries {
                if let Some(last) = s.rows.last() {
                    println!(
                        "{:<10} avg_regret {:.6} ± {:.6}  opr {:.4} ± {:.4}",
                        s.policy.name(),
                        last.avg_regret_mean,
                        last.avg_regret_stderr,
                        last.opr_mean,
                        last.opr_stderr
                    );
                }
            }
            println!("wrote {}", out.trials_csv.parent().unwrap_or(&out.trials_csv).display());
            Ok(true)
        }
        Command::CheckBounds { common } => {
            let mut cfg = load_config(&common.config)?;
            cfg.apply_overrides(&common.overrides())?;
            let report = runner::check_bounds(&cfg)?;
            let csv = report.to_csv();
            print!("{csv}");
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("coverage.csv"), &csv)?;
            let violations = report.violations().count();
            if violations > 0 {
                eprintln!("{violations} (arm, n) cells below target coverage");
            }
            Ok(violations == 0)
        }
        Command::MakeRef { input, output } => {
            let data = load_embeddings(&input)?;
            let fit = fit_reference(&data)?;
            if let Some(eps) = fit.ridge {
                eprintln!("covariance was singular; added ridge {eps}");
            }
            save_ref_stats(&output, &fit, data.count())?;
            Ok(true)
        }
        Command::GenSynthetic { kind } => {
            let (rows, output) = match kind {
                Synthetic::Gaussian { dim, count, shift, variance, seed, output } => {
                    let mut mean = vec![0.0; dim];
                    if let Some(m) = mean.first_mut() {
                        *m = shift;
                    }
                    let mut arm = GaussianArm::new(mean, SymMatrix::identity(dim).scaled(variance), seed)?;
                    (arm.pull(count)?, output)
                }
                Synthetic::Categorical { classes, target_is, count, seed, output } => {
                    let mut arm = CategoricalArm::symmetric_with_is(classes, target_is, seed)?;
                    (arm.pull(count)?, output)
                }
            };
            write_embeddings(&output, &Dataset::from_rows(&rows)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
