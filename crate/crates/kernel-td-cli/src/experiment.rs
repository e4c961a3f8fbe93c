//! Running a configuration over its `(n, seed)` grid and fitting the
//! convergence-rate exponent.

use anyhow::{Context, Result};
use rayon::prelude::*;
use std::io::Write;
use std::path::Path;

use kernel_td::rng::derive_rng;
use kernel_td::td::{l2_error, td_run, SamplingMode, TdRunOptions, TdSchedule};

use crate::config::ResolvedConfig;

/// One `(n, seed)` run; a diverged run carries a NaN error.
#[derive(Debug, Clone, Copy)]
pub struct RunRecord {
    pub n: usize,
    pub seed: u64,
    pub sq_l2_error: f64,
    /// Raw chain transitions consumed (differs from `n` under thinning).
    pub raw_pairs: usize,
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        !self.sq_l2_error.is_finite()
    }
}

/// Per-`n` seed statistics.
#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub n: usize,
    pub raw_pairs: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean and spread of `ln(error)` over converged seeds.
    pub mean_log: f64,
    pub std_log: f64,
    pub diverged: usize,
}

/// Fitted log-log rate over the asymptotic (upper) half of the grid.
#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Any divergence, or a slope that fails to decrease.
    pub non_convergent: bool,
    /// Whether every step size stayed under the descent-lemma ceiling.
    pub rho_bar_ok: bool,
}

/// Executes every `(n, seed)` cell of the grid; deterministic in
/// `(config, base_seed)` regardless of scheduling.
pub fn run_grid(cfg: &ResolvedConfig, base_seed: u64) -> Result<Vec<RunRecord>> {
    let cells: Vec<(usize, u64)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let mut records: Vec<RunRecord> = cells
        .par_iter()
        .map(|&(n, seed)| -> Result<RunRecord> {
            let schedule = cfg.schedule(n)?;
            let mode = cfg.sampling_mode(&schedule);
            let projection = schedule
                .projection_radius(&cfg.kernel, &cfg.model.reward)
                .map_err(anyhow::Error::from)?;
            let mut rng = derive_rng(base_seed, &[n as u64, seed, 0x7d]);
            let options = TdRunOptions {
                projection,
                gram: cfg.gram,
            };
            let raw_pairs = match mode {
                SamplingMode::SkipMarkov { tau } => n * tau,
                _ => n,
            };
            match td_run(&cfg.model, cfg.kernel, &schedule, mode, options, &mut rng) {
                Ok(history) => {
                    let avg = history.averaged(&schedule);
                    Ok(RunRecord {
                        n,
                        seed,
                        sq_l2_error: l2_error(&avg, &cfg.model, cfg.grid_size),
                        raw_pairs,
                    })
                }
                Err(kernel_td::Error::Divergence(_)) => Ok(RunRecord {
                    n,
                    seed,
                    sq_l2_error: f64::NAN,
                    raw_pairs,
                }),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| (r.n, r.seed));
    Ok(records)
}

pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.iter()
        .map(|&n| {
            let group: Vec<&RunRecord> = records.iter().filter(|r| r.n == n).collect();
            let ok: Vec<f64> = group
                .iter()
                .filter(|r| !r.diverged())
                .map(|r| r.sq_l2_error)
                .collect();
            let diverged = group.len() - ok.len();
            let raw_pairs = group.first().map_or(n, |r| r.raw_pairs);
            if ok.is_empty() {
                return Aggregate {
                    n,
                    raw_pairs,
                    mean: f64::NAN,
                    std: f64::NAN,
                    mean_log: f64::NAN,
                    std_log: f64::NAN,
                    diverged,
                };
            }
            let count = ok.len() as f64;
            let mean = ok.iter().sum::<f64>() / count;
            let var = ok.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / count;
            let logs: Vec<f64> = ok.iter().map(|e| e.ln()).collect();
            let mean_log = logs.iter().sum::<f64>() / count;
            let var_log = logs.iter().map(|l| (l - mean_log).powi(2)).sum::<f64>() / count;
            Aggregate {
                n,
                raw_pairs,
                mean,
                std: var.sqrt(),
                mean_log,
                std_log: var_log.sqrt(),
                diverged,
            }
        })
        .collect()
}

/// Least-squares slope of `mean ln(error)` against `ln n` over the upper
/// half of the grid (the asymptotic regime; early iterates are transient).
pub fn fit_slope(aggregates: &[Aggregate]) -> (f64, f64) {
    let upper = &aggregates[aggregates.len() / 2..];
    let points: Vec<(f64, f64)> = upper
        .iter()
        .filter(|a| a.mean_log.is_finite())
        .map(|a| ((a.n as f64).ln(), a.mean_log))
        .collect();
    least_squares(&points)
}

/// Plain least squares through `(x, y)` points; `(slope, intercept)`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    if points.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    let slope = num / den;
    (slope, mean_y - slope * mean_x)
}

/// Full pipeline: grid, aggregation, rate fit.
pub fn run_experiment(cfg: &ResolvedConfig, base_seed: u64) -> Result<RateFit> {
    let records = run_grid(cfg, base_seed)?;
    let aggregates = aggregate(&records);
    let (slope, intercept) = fit_slope(&aggregates);
    let any_diverged = aggregates.iter().any(|a| a.diverged > 0);
    let non_convergent = any_diverged || !slope.is_finite() || slope >= -0.05;
    let rho_bar_ok = cfg.n_grid.iter().all(|&n| {
        cfg.schedule(n).is_ok_and(|s| {
            s.max_rho() <= TdSchedule::rho_bar(cfg.model.gamma, cfg.kernel.sup_diagonal())
        })
    });
    Ok(RateFit {
        slope,
        intercept,
        records,
        aggregates,
        non_convergent,
        rho_bar_ok,
    })
}

pub fn write_runs_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut f =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "n,seed,sq_l2_error")?;
    for r in records {
        writeln!(f, "{},{},{}", r.n, r.seed, r.sq_l2_error)?;
    }
    Ok(())
}

pub fn write_aggregate_csv(aggregates: &[Aggregate], path: &Path) -> Result<()> {
    let mut f =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    writeln!(f, "n,mean_sq_l2_error,std_sq_l2_error")?;
    for a in aggregates {
        writeln!(f, "{},{},{}", a.n, a.mean, a.std)?;
    }
    Ok(())
}
