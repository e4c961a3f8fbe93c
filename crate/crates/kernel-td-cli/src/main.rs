//! Command-line harness: configured runs, the rate table, the figure
//! experiments and the verification suite.
//!
//! Exit codes: 0 on success, 1 when a checked bound fails, 2 on a
//! configuration error.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use kernel_td::verify::{run_all_checks, VerifyConfig};
use kernel_td_cli::config::ExperimentConfig;
use kernel_td_cli::experiment::{run_experiment, write_aggregate_csv, write_runs_csv};
use kernel_td_cli::figures::{self, predicted_rate, SweepParam};
use kernel_td_cli::plot::{write_log_log_svg, Series};
use kernel_td_cli::report::Summary;

#[derive(Parser)]
#[command(
    name = "kernel-td",
    about = "Non-parametric TD(0) experiments on the circle restart chain",
    version
)]
struct Cli {
    /// Worker threads (also honors KERNEL_TD_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configured experiment and fit its convergence rate.
    Run {
        /// TOML experiment description.
        #[arg(long)]
        config: PathBuf,
        /// Base seed for all derived random streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Reproduce the four-cell convergence-rate table.
    Table1 {
        #[arg(long, default_value = "out/table1")]
        out: PathBuf,
        /// Reduced grid (n <= 512) and 5 seeds.
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Error curves while one chain parameter varies.
    FigSweep {
        /// "epsilon" or "gamma".
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults depend on the parameter.
        #[arg(long)]
        values: Option<String>,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Robustness to a mis-specified source exponent.
    FigTheta {
        /// Comma-separated exponents in [-1, 1].
        #[arg(long)]
        thetas: Option<String>,
        #[arg(long, default_value = "out/theta")]
        out: PathBuf,
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plain vs thinned trajectory TD at matched raw-sample budgets.
    FigSkip {
        /// Comma-separated restart probabilities in (0, 1).
        #[arg(long)]
        epsilons: Option<String>,
        #[arg(long, default_value = "out/skip")]
        out: PathBuf,
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full verification suite and write its report.
    Oracle {
        #[arg(long, default_value = "out/oracle")]
        out: PathBuf,
    },
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad numeric value '{t}'"))
        })
        .collect()
}

fn init_workers(cli_workers: Option<usize>) {
    let workers = cli_workers.or_else(|| {
        std::env::var("KERNEL_TD_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn run_command(cmd: Command) -> Result<Summary> {
    match cmd {
        Command::Run { config, seed, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let resolved = cfg.resolve()?;
            std::fs::create_dir_all(&out)?;
            let fit = run_experiment(&resolved, seed)?;
            write_runs_csv(&fit.records, &out.join("runs.csv"))?;
            write_aggregate_csv(&fit.aggregates, &out.join("aggregate.csv"))?;

            let mut summary = Summary::default();
            summary.note(format!(
                "setting {} on s={} {} reward, eps {}, gamma {}, theta {}, seeds {}",
                cfg.setting, cfg.kernel_s, cfg.reward, cfg.epsilon, cfg.gamma, cfg.theta, cfg.seeds
            ));
            summary.note(format!("fitted slope {:+.4}", fit.slope));
            summary.note(format!("predicted slope {:+.4}", predicted_rate(cfg.theta)));
            summary.note(format!("non_convergent {}", fit.non_convergent));
            summary.note(format!(
                "step sizes under the descent ceiling: {}",
                fit.rho_bar_ok
            ));
            let series = vec![Series {
                label: "mean".into(),
                points: fit
                    .aggregates
                    .iter()
                    .map(|a| (a.n as f64, a.mean))
                    .collect(),
                band: fit
                    .aggregates
                    .iter()
                    .map(|a| {
                        (
                            a.n as f64,
                            (a.mean - a.std).max(a.mean * 0.05),
                            a.mean + a.std,
                        )
                    })
                    .collect(),
            }];
            write_log_log_svg(
                &out.join("plot.svg"),
                "Averaged TD error",
                "iterations n",
                "squared L2(p) error",
                &series,
            )?;
            summary.write(&out.join("summary.txt"))?;
            Ok(summary)
        }
        Command::Table1 { out, fast, seed } => figures::table1(&out, fast, seed),
        Command::FigSweep {
            param,
            values,
            out,
            fast,
            seed,
        } => {
            let param = match param.as_str() {
                "epsilon" => SweepParam::Epsilon,
                "gamma" => SweepParam::Gamma,
                other => anyhow::bail!("unknown sweep parameter '{other}'"),
            };
            let values = match values {
                Some(text) => parse_list(&text)?,
                None => match param {
                    SweepParam::Epsilon => vec![0.2, 0.5, 0.8],
                    SweepParam::Gamma => vec![0.0, 0.5, 0.9],
                },
            };
            figures::fig_sweep(&out, param, &values, fast, seed)
        }
        Command::FigTheta {
            thetas,
            out,
            fast,
            seed,
        } => {
            let thetas = match thetas {
                Some(text) => parse_list(&text)?,
                None => vec![-1.0, -0.5, -0.25, 0.0, 1.0],
            };
            figures::fig_theta(&out, &thetas, fast, seed)
        }
        Command::FigSkip {
            epsilons,
            out,
            fast,
            seed,
        } => {
            let epsilons = match epsilons {
                Some(text) => parse_list(&text)?,
                None => vec![0.2, 0.8],
            };
            figures::fig_skip(&out, &epsilons, fast, seed)
        }
        Command::Oracle { out } => {
            std::fs::create_dir_all(&out)?;
            let checks = run_all_checks(&VerifyConfig::default());
            let mut summary = Summary::default();
            summary.note(format!("verification suite: {} checks", checks.len()));
            for c in &checks {
                summary.bound(
                    c.name.clone(),
                    c.passed,
                    format!(
                        "measured {:.4e} vs bound {:.4e} ({})",
                        c.measured, c.bound, c.details
                    ),
                );
            }
            summary.write(&out.join("oracle_report.txt"))?;
            Ok(summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers(cli.workers);
    match run_command(cli.command) {
        Ok(summary) => {
            print!("{}", summary.render());
            if summary.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
