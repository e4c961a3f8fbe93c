//! The batch experiments: convergence-rate table, parameter sweeps, the
//! source-exponent robustness figure, and the thinned-sampling comparison.

use anyhow::{bail, Result};
use std::io::Write;
use std::path::Path;

use kernel_td::kernels::KernelSpec;
use kernel_td::mrp::{MrpModel, Reward};
use kernel_td::rng::derive_rng;
use kernel_td::spectral::SpectralModel;
use kernel_td::td::{
    l2_error, run_recursion, skip_tau, td_run, GramMode, SamplingMode, Setting, TdData,
    TdRunOptions, TdSchedule, WeightFactor,
};

use crate::config::{spectral_oracle_radius, ExperimentConfig};
use crate::experiment::{aggregate, run_experiment, Aggregate, RateFit};
use crate::plot::{write_log_log_svg, Series};
use crate::report::Summary;

pub const THETA_PROBE_GRID: [f64; 7] = [-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];

/// The four kernel-reward cells of the rate table, with the rates reported
/// in the reference experiments.
pub const TABLE_CELLS: [TableCell; 4] = [
    TableCell {
        kernel_s: 1,
        reward: Reward::Abs,
        reference_observed: -0.72,
    },
    TableCell {
        kernel_s: 1,
        reward: Reward::Cos,
        reference_observed: -0.64,
    },
    TableCell {
        kernel_s: 2,
        reward: Reward::Abs,
        reference_observed: -0.58,
    },
    TableCell {
        kernel_s: 2,
        reward: Reward::Cos,
        reference_observed: -0.64,
    },
];

#[derive(Debug, Clone, Copy)]
pub struct TableCell {
    pub kernel_s: u32,
    pub reward: Reward,
    pub reference_observed: f64,
}

fn reward_name(reward: Reward) -> &'static str {
    match reward {
        Reward::Abs => "abs",
        Reward::Cos => "cos",
    }
}

/// Rate exponent implied by a source exponent: `-(1+θ)/(2+θ)`.
pub fn predicted_rate(theta: f64) -> f64 {
    -(1.0 + theta) / (2.0 + theta)
}

fn band_series(label: &str, aggregates: &[Aggregate], raw_axis: bool) -> Series {
    let x = |a: &Aggregate| {
        if raw_axis {
            a.raw_pairs as f64
        } else {
            a.n as f64
        }
    };
    Series {
        label: label.to_string(),
        points: aggregates.iter().map(|a| (x(a), a.mean)).collect(),
        band: aggregates
            .iter()
            .map(|a| (x(a), (a.mean - a.std).max(a.mean * 0.05), a.mean + a.std))
            .collect(),
    }
}

pub struct Table1Cell {
    pub cell: TableCell,
    pub max_theta: f64,
    pub predicted: f64,
    pub fit: RateFit,
}

/// Runs the four-cell rate table at ε = 0.8, γ = 0.5 with each cell's
/// empirically maximal source exponent.
pub fn table1_cells(fast: bool, base_seed: u64) -> Result<Vec<Table1Cell>> {
    TABLE_CELLS
        .iter()
        .map(|&cell| {
            let est = SpectralModel::estimate_max_theta(
                cell.kernel_s,
                0.8,
                0.5,
                cell.reward,
                &THETA_PROBE_GRID,
                256,
            )?;
            let mut cfg = ExperimentConfig {
                kernel_s: cell.kernel_s,
                reward: reward_name(cell.reward).into(),
                theta: est.theta,
                ..ExperimentConfig::default()
            };
            if fast {
                cfg = cfg.fast();
            }
            let fit = run_experiment(&cfg.resolve()?, base_seed)?;
            Ok(Table1Cell {
                cell,
                max_theta: est.theta,
                predicted: predicted_rate(est.theta),
                fit,
            })
        })
        .collect()
}

pub fn table1(out: &Path, fast: bool, base_seed: u64) -> Result<Summary> {
    std::fs::create_dir_all(out)?;
    let cells = table1_cells(fast, base_seed)?;
    let tolerance = if fast { 0.25 } else { 0.15 };

    let mut csv = std::fs::File::create(out.join("table1.csv"))?;
    writeln!(
        csv,
        "kernel_s,reward,max_theta,predicted_rate,observed_slope"
    )?;
    let mut summary = Summary::default();
    summary.note(format!(
        "rate table at eps = 0.8, gamma = 0.5 ({} variant, base seed {base_seed})",
        if fast { "fast" } else { "full" }
    ));
    let mut series = Vec::new();
    for c in &cells {
        let name = format!("s{}_{}", c.cell.kernel_s, reward_name(c.cell.reward));
        writeln!(
            csv,
            "{},{},{},{},{}",
            c.cell.kernel_s,
            reward_name(c.cell.reward),
            c.max_theta,
            c.predicted,
            c.fit.slope
        )?;
        crate::experiment::write_runs_csv(&c.fit.records, &out.join(format!("runs_{name}.csv")))?;
        crate::experiment::write_aggregate_csv(
            &c.fit.aggregates,
            &out.join(format!("aggregate_{name}.csv")),
        )?;
        series.push(band_series(&name, &c.fit.aggregates, false));

        summary.note(format!(
            "{name}: max_theta {:+.2}, predicted {:+.3}, observed {:+.3}, \
             reference {:+.2}, rho_bar_ok {}",
            c.max_theta, c.predicted, c.fit.slope, c.cell.reference_observed, c.fit.rho_bar_ok
        ));
        summary.bound(
            format!("{name}/slope_window"),
            (c.fit.slope - c.cell.reference_observed).abs() <= tolerance && c.fit.slope < -0.3,
            format!(
                "observed {:+.3} within {tolerance} of {:+.2} and below -0.3",
                c.fit.slope, c.cell.reference_observed
            ),
        );
    }

    // the predicted-rate arithmetic pinned to two decimals
    let expected_predicted = [-0.6, -0.67, -0.43, -0.67];
    for (c, expect) in cells.iter().zip(expected_predicted) {
        let rounded = (c.predicted * 100.0).round() / 100.0;
        summary.bound(
            format!(
                "s{}_{}/predicted_rate",
                c.cell.kernel_s,
                reward_name(c.cell.reward)
            ),
            (rounded - expect).abs() < 5e-3,
            format!(
                "-(1+theta)/(2+theta) = {:.4} rounds to {expect}",
                c.predicted
            ),
        );
    }

    write_log_log_svg(
        &out.join("table1.svg"),
        "Averaged TD error by kernel and reward",
        "iterations n",
        "squared L2(p) error",
        &series,
    )?;
    summary.write(&out.join("summary.txt"))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Epsilon,
    Gamma,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::Gamma => "gamma",
        }
    }
}

/// Error-vs-n curves while one chain parameter varies.
pub fn fig_sweep(
    out: &Path,
    param: SweepParam,
    values: &[f64],
    fast: bool,
    base_seed: u64,
) -> Result<Summary> {
    std::fs::create_dir_all(out)?;
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    for &v in values {
        let ok = match param {
            SweepParam::Epsilon => v > 0.0 && v <= 1.0,
            SweepParam::Gamma => (0.0..1.0).contains(&v),
        };
        if !ok {
            bail!("{} = {v} out of range", param.name());
        }
    }

    let mut summary = Summary::default();
    summary.note(format!(
        "sweep over {} at values {values:?} (base cell: s=1, abs reward, exp-averaged)",
        param.name()
    ));
    let mut csv = std::fs::File::create(out.join(format!("sweep_{}.csv", param.name())))?;
    writeln!(csv, "series,n,mean_sq_l2_error,std_sq_l2_error")?;

    let mut fits: Vec<(f64, RateFit)> = Vec::new();
    let mut series = Vec::new();
    for &value in values {
        let mut cfg = ExperimentConfig::default();
        match param {
            SweepParam::Epsilon => cfg.epsilon = value,
            SweepParam::Gamma => cfg.gamma = value,
        }
        if fast {
            cfg = cfg.fast();
        }
        let fit = run_experiment(&cfg.resolve()?, base_seed)?;
        let label = format!("{}={value}", param.name());
        for a in &fit.aggregates {
            writeln!(csv, "{label},{},{},{}", a.n, a.mean, a.std)?;
        }
        series.push(band_series(&label, &fit.aggregates, false));
        summary.note(format!("{label}: slope {:+.3}", fit.slope));
        fits.push((value, fit));
    }

    summary.bound(
        "series_count",
        series.len() == values.len(),
        format!(
            "{} labeled series for {} values",
            series.len(),
            values.len()
        ),
    );

    // convergence regime: means decrease over the upper half of the grid
    // (a NaN mean from a diverged cell also trips this)
    let mut monotone = true;
    for (_, fit) in &fits {
        let upper = &fit.aggregates[fit.aggregates.len() / 2..];
        for w in upper.windows(2) {
            let decreasing = w[1].mean < w[0].mean;
            if !decreasing {
                monotone = false;
            }
        }
    }
    summary.bound(
        "upper_half_monotone",
        monotone,
        "mean error decreasing over the upper half of the grid for every series",
    );

    // a harder horizon costs constants: the undiscounted curve stays below
    // the longest-horizon curve pointwise once past the transient
    if param == SweepParam::Gamma && values.len() >= 2 {
        let lo = &fits.first().unwrap();
        let hi = &fits.last().unwrap();
        let mut ordered = true;
        for (a, b) in lo.1.aggregates.iter().zip(&hi.1.aggregates) {
            let below = a.mean < b.mean;
            if a.n >= 100 && !below {
                ordered = false;
            }
        }
        summary.bound(
            "pointwise_ordering",
            ordered,
            format!(
                "gamma={} mean error below gamma={} for n >= 100",
                lo.0, hi.0
            ),
        );
    }

    write_log_log_svg(
        &out.join(format!("sweep_{}.svg", param.name())),
        &format!("Effect of {}", param.name()),
        "iterations n",
        "squared L2(p) error",
        &series,
    )?;
    summary.write(&out.join("summary.txt"))?;
    Ok(summary)
}

pub struct ThetaSeries {
    pub theta: f64,
    pub fit: RateFit,
}

/// Robustness to a mis-specified source exponent on the (s = 2, abs) cell.
///
/// The base configuration uses `λ₀ = 2`: with `λ₀ = 1` the θ = -1/2 series
/// sits inside the step-size instability band on this cell and its curve is
/// dominated by near-divergent runs, which defeats the point of the figure.
pub fn theta_series(thetas: &[f64], fast: bool, base_seed: u64) -> Result<Vec<ThetaSeries>> {
    thetas
        .iter()
        .map(|&theta| {
            let mut cfg = ExperimentConfig {
                kernel_s: 2,
                reward: "abs".into(),
                theta,
                lambda0: 2.0,
                ..ExperimentConfig::default()
            };
            if fast {
                cfg = cfg.fast();
            }
            let fit = run_experiment(&cfg.resolve()?, base_seed)?;
            Ok(ThetaSeries { theta, fit })
        })
        .collect()
}

pub fn fig_theta(out: &Path, thetas: &[f64], fast: bool, base_seed: u64) -> Result<Summary> {
    std::fs::create_dir_all(out)?;
    for &t in thetas {
        if !(-1.0..=1.0).contains(&t) {
            bail!("theta = {t} out of [-1, 1]");
        }
    }
    let runs = theta_series(thetas, fast, base_seed)?;

    let mut summary = Summary::default();
    summary.note("source-exponent robustness on the (s=2, abs) cell, lambda0 = 2".to_string());
    let mut csv = std::fs::File::create(out.join("theta_robustness.csv"))?;
    writeln!(csv, "series,n,mean_sq_l2_error,std_sq_l2_error")?;
    let mut series = Vec::new();
    for r in &runs {
        let label = format!("theta={}", r.theta);
        for a in &r.fit.aggregates {
            writeln!(csv, "{label},{},{},{}", a.n, a.mean, a.std)?;
        }
        series.push(band_series(&label, &r.fit.aggregates, false));
        summary.note(format!(
            "{label}: slope {:+.3}, non_convergent {}",
            r.fit.slope, r.fit.non_convergent
        ));
    }

    // the slope comparisons are defined for the full protocol; a fast run
    // is pre-asymptotic, so it reports them without gating
    let check = |summary: &mut Summary, name: &str, passed: bool, detail: String| {
        if fast {
            summary.note(format!("(fast, informational) {name}: {detail}"));
        } else {
            summary.bound(name, passed, detail);
        }
    };
    let slope_of = |theta: f64| {
        runs.iter()
            .find(|r| (r.theta - theta).abs() < 1e-12)
            .map(|r| r.fit.slope)
    };
    if let (Some(s0), Some(s_half)) = (slope_of(0.0), slope_of(-0.5)) {
        check(
            &mut summary,
            "matched_slopes",
            (s0 - s_half).abs() <= 0.1,
            format!(
                "|slope(0) - slope(-1/2)| = {:.3} <= 0.1",
                (s0 - s_half).abs()
            ),
        );
    }
    if let Some(r) = runs.iter().find(|r| (r.theta + 1.0).abs() < 1e-12) {
        check(
            &mut summary,
            "underestimated_diverges",
            r.fit.non_convergent,
            "theta = -1 series flagged non-convergent".into(),
        );
    }
    if let (Some(s0), Some(s1)) = (slope_of(0.0), slope_of(1.0)) {
        check(
            &mut summary,
            "overestimated_slower",
            s1 > s0,
            format!("slope(1) = {s1:+.3} strictly above slope(0) = {s0:+.3}"),
        );
        summary.note(format!(
            "theta = 1 slow-convergence window (-0.4, 0): measured {s1:+.3}",
        ));
    }

    write_log_log_svg(
        &out.join("theta_robustness.svg"),
        "Robustness to the source exponent",
        "iterations n",
        "squared L2(p) error",
        &series,
    )?;
    summary.write(&out.join("summary.txt"))?;
    Ok(summary)
}

pub struct SkipComparison {
    pub epsilon: f64,
    pub tau_by_n: Vec<(usize, usize)>,
    pub td: Vec<Aggregate>,
    pub skip: Vec<Aggregate>,
}

/// Plain trajectory TD versus thinned TD at matched raw-sample budgets.
///
/// For each raw budget `n` the schedule parameters are computed from `n`;
/// the thinned run then performs `⌊n/τ⌋` updates so both variants consume
/// the same number of chain transitions.
pub fn skip_comparison(
    epsilons: &[f64],
    n_grid: &[usize],
    seeds: u64,
    base_seed: u64,
) -> Result<Vec<SkipComparison>> {
    let kernel = KernelSpec::sobolev(1).unwrap();
    let theta = 0.5;
    epsilons
        .iter()
        .map(|&epsilon| {
            let model = MrpModel::new(epsilon, 0.5, Reward::Abs)?;
            let radius = spectral_oracle_radius(&model, kernel)?;
            let mu = 1.0 - epsilon;
            let mut td_records = Vec::new();
            let mut skip_records = Vec::new();
            let mut tau_by_n = Vec::new();
            for &n in n_grid {
                let schedule = TdSchedule::new(Setting::MarkovOracleRadius, 1.0, n, theta)?
                    .with_oracle_radius(radius);
                let rho = schedule.rho(1);
                let lambda = schedule.lambda();
                let tau = if mu > 0.0 { skip_tau(rho, mu) } else { 1 };
                tau_by_n.push((n, tau));
                let updates = (n / tau).max(2);
                for seed in 0..seeds {
                    let mut rng = derive_rng(base_seed, &[40, epsilon.to_bits(), n as u64, seed]);
                    let history = td_run(
                        &model,
                        kernel,
                        &schedule,
                        SamplingMode::Markov,
                        TdRunOptions {
                            projection: Some(radius),
                            gram: GramMode::Exact,
                        },
                        &mut rng,
                    )?;
                    let err = l2_error(&history.averaged(&schedule), &model, 512);
                    td_records.push(crate::experiment::RunRecord {
                        n,
                        seed,
                        sq_l2_error: err,
                        raw_pairs: n,
                    });

                    let mut rng = derive_rng(base_seed, &[41, epsilon.to_bits(), n as u64, seed]);
                    let data =
                        TdData::sample(&model, updates, SamplingMode::SkipMarkov { tau }, &mut rng);
                    let raw_pairs = data.raw_pairs;
                    let history = run_recursion(
                        kernel,
                        data,
                        model.gamma,
                        lambda,
                        |_| rho,
                        Some(radius),
                        GramMode::Exact,
                    )?;
                    let avg = history.exp_average(rho, lambda, WeightFactor::Two);
                    skip_records.push(crate::experiment::RunRecord {
                        n,
                        seed,
                        sq_l2_error: l2_error(&avg, &model, 512),
                        raw_pairs,
                    });
                }
            }
            Ok(SkipComparison {
                epsilon,
                tau_by_n,
                td: aggregate(&td_records),
                skip: aggregate(&skip_records),
            })
        })
        .collect()
}

pub fn fig_skip(out: &Path, epsilons: &[f64], fast: bool, base_seed: u64) -> Result<Summary> {
    std::fs::create_dir_all(out)?;
    for &e in epsilons {
        if !(e > 0.0 && e < 1.0) {
            bail!("epsilon = {e} out of (0, 1) for the mixing comparison");
        }
    }
    let base = ExperimentConfig::default();
    let base = if fast { base.fast() } else { base };
    let comparisons = skip_comparison(epsilons, &base.n_grid, base.seeds, base_seed)?;

    let mut summary = Summary::default();
    summary.note("plain vs thinned trajectory TD at matched raw-sample budgets (s=1, abs)");
    let mut csv = std::fs::File::create(out.join("skip_comparison.csv"))?;
    writeln!(
        csv,
        "series,epsilon,n_raw,mean_sq_l2_error,std_sq_l2_error,tau"
    )?;
    let mut series = Vec::new();
    for c in &comparisons {
        for (label, aggs) in [("td", &c.td), ("skip", &c.skip)] {
            for a in aggs.iter() {
                let tau = if label == "td" {
                    1
                } else {
                    c.tau_by_n
                        .iter()
                        .find(|&&(n, _)| n == a.n)
                        .map_or(1, |&(_, t)| t)
                };
                writeln!(
                    csv,
                    "{label},{},{},{},{},{tau}",
                    c.epsilon, a.raw_pairs, a.mean, a.std
                )?;
            }
            series.push(band_series(
                &format!("{label} eps={}", c.epsilon),
                aggs,
                true,
            ));
        }
        summary.note(format!(
            "eps = {}: tau per budget {:?}",
            c.epsilon, c.tau_by_n
        ));

        let td_final = c.td.last().unwrap().mean;
        let skip_final = c.skip.last().unwrap().mean;
        if c.epsilon >= 0.5 {
            let ratio = (td_final / skip_final).max(skip_final / td_final);
            summary.bound(
                format!("eps_{}/comparable", c.epsilon),
                ratio <= 2.0,
                format!(
                    "fast-mixing chain: final errors within factor 2 (td {td_final:.4}, \
                     skip {skip_final:.4})"
                ),
            );
        } else {
            summary.bound(
                format!("eps_{}/plain_td_faster", c.epsilon),
                td_final <= skip_final,
                format!(
                    "slow-mixing chain: plain TD final error {td_final:.4} <= thinned \
                     {skip_final:.4}"
                ),
            );
        }
    }

    write_log_log_svg(
        &out.join("skip_comparison.svg"),
        "Plain vs thinned trajectory TD",
        "raw chain transitions",
        "squared L2(p) error",
        &series,
    )?;
    summary.write(&out.join("summary.txt"))?;
    Ok(summary)
}
