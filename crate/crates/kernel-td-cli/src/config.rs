//! Experiment configuration: a TOML file plus CLI overrides.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use kernel_td::kernels::KernelSpec;
use kernel_td::mrp::{MrpModel, Reward};
use kernel_td::td::{GramMode, SamplingMode, Setting, TdSchedule};

pub const DEFAULT_N_GRID: [usize; 6] = [64, 128, 256, 512, 1024, 2000];

/// On-disk experiment description. Every field has a default, so a config
/// file only needs the values it wants to change.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// "abs" or "cos".
    pub reward: String,
    /// Spline kernel order: 1 or 2.
    pub kernel_s: u32,
    pub epsilon: f64,
    pub gamma: f64,
    /// Schedule family, e.g. "exp-averaged"; see `Setting::from_name`.
    pub setting: String,
    pub lambda0: f64,
    /// Source exponent driving the schedule.
    pub theta: f64,
    /// "iid", "markov" or "skip"; empty means the setting's default.
    pub sampling: String,
    pub n_grid: Vec<usize>,
    pub seeds: u64,
    /// Grid resolution of the squared-error quadrature.
    pub grid_size: usize,
    /// Projection radius for the oracle-radius settings; 0 means
    /// "estimate spectrally" (twice the Hilbert norm of the value function).
    pub oracle_radius: f64,
    /// Replace exact kernel entries with a rank-capped factorization.
    pub low_rank: bool,
    pub low_rank_max_rank: usize,
    pub low_rank_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            reward: "abs".into(),
            kernel_s: 1,
            epsilon: 0.8,
            gamma: 0.5,
            setting: "exp-averaged".into(),
            lambda0: 1.0,
            theta: 0.5,
            sampling: String::new(),
            n_grid: DEFAULT_N_GRID.to_vec(),
            seeds: 10,
            grid_size: 512,
            oracle_radius: 0.0,
            low_rank: false,
            low_rank_max_rank: 100,
            low_rank_tol: 1e-9,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.resolve()?; // surface validation errors at load time
        Ok(cfg)
    }

    /// Caps the grid at `n <= 512` and 5 seeds for quick runs.
    pub fn fast(mut self) -> Self {
        self.n_grid.retain(|&n| n <= 512);
        if self.n_grid.is_empty() {
            self.n_grid = vec![64, 128, 256, 512];
        }
        self.seeds = self.seeds.min(5);
        self
    }

    pub fn reward_fn(&self) -> Result<Reward> {
        match self.reward.as_str() {
            "abs" => Ok(Reward::Abs),
            "cos" => Ok(Reward::Cos),
            other => bail!("unknown reward '{other}' (expected 'abs' or 'cos')"),
        }
    }

    /// Validates and converts into the concrete run description.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let reward = self.reward_fn()?;
        let kernel = KernelSpec::sobolev(self.kernel_s)?;
        let model = MrpModel::new(self.epsilon, self.gamma, reward)?;
        let setting = Setting::from_name(&self.setting)?;
        if self.n_grid.is_empty() {
            bail!("n_grid must not be empty");
        }
        if self.seeds == 0 {
            bail!("seeds must be >= 1");
        }
        if self.grid_size < 64 {
            bail!("grid_size must be >= 64");
        }
        let min_n = match setting {
            Setting::ConstantUnregularized => 1,
            _ => 9,
        };
        if self.n_grid.iter().any(|&n| n < min_n) {
            bail!(
                "n_grid entries must be >= {min_n} for setting '{}'",
                self.setting
            );
        }
        let sampling = match self.sampling.as_str() {
            "" => None,
            "iid" => Some(SamplingModeName::Iid),
            "markov" => Some(SamplingModeName::Markov),
            "skip" => Some(SamplingModeName::Skip),
            other => bail!("unknown sampling '{other}' (expected 'iid', 'markov' or 'skip')"),
        };
        let gram = if self.low_rank {
            GramMode::LowRank {
                max_rank: self.low_rank_max_rank,
                tol: self.low_rank_tol,
            }
        } else {
            GramMode::Exact
        };
        Ok(ResolvedConfig {
            model,
            kernel,
            setting,
            lambda0: self.lambda0,
            theta: self.theta,
            sampling,
            n_grid: self.n_grid.clone(),
            seeds: self.seeds,
            grid_size: self.grid_size,
            oracle_radius: if self.oracle_radius > 0.0 {
                Some(self.oracle_radius)
            } else {
                None
            },
            gram,
        })
    }
}

/// Sampling in the config is a name; the concrete mode (with the thinning
/// period) is derived per run length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingModeName {
    Iid,
    Markov,
    Skip,
}

/// A validated configuration with concrete domain types.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub model: MrpModel,
    pub kernel: KernelSpec,
    pub setting: Setting,
    pub lambda0: f64,
    pub theta: f64,
    pub sampling: Option<SamplingModeName>,
    pub n_grid: Vec<usize>,
    pub seeds: u64,
    pub grid_size: usize,
    pub oracle_radius: Option<f64>,
    pub gram: GramMode,
}

impl ResolvedConfig {
    /// Schedule for one run length, with the oracle radius filled in
    /// (spectrally estimated when not supplied).
    pub fn schedule(&self, n: usize) -> Result<TdSchedule> {
        let mut schedule = TdSchedule::new(self.setting, self.lambda0, n, self.theta)?;
        if matches!(
            self.setting,
            Setting::MarkovOracleRadius | Setting::SkipOracleRadius
        ) {
            let radius = match self.oracle_radius {
                Some(r) => r,
                None => spectral_oracle_radius(&self.model, self.kernel)?,
            };
            schedule = schedule.with_oracle_radius(radius);
        }
        Ok(schedule)
    }

    /// Concrete sampling mode for one run length.
    pub fn sampling_mode(&self, schedule: &TdSchedule) -> SamplingMode {
        match self.sampling {
            None => schedule.sampling_mode(self.model.epsilon),
            Some(SamplingModeName::Iid) => SamplingMode::Iid,
            Some(SamplingModeName::Markov) => SamplingMode::Markov,
            Some(SamplingModeName::Skip) => match schedule.sampling_mode(self.model.epsilon) {
                m @ SamplingMode::SkipMarkov { .. } => m,
                _ => {
                    let mu = 1.0 - self.model.epsilon;
                    let tau = if mu <= 0.0 {
                        1
                    } else {
                        kernel_td::td::skip_tau(schedule.rho(1), mu)
                    };
                    SamplingMode::SkipMarkov { tau }
                }
            },
        }
    }
}

/// Default projection radius when no oracle value is supplied: twice the
/// Hilbert norm of the value function, read off the spectral model.
pub fn spectral_oracle_radius(model: &MrpModel, kernel: KernelSpec) -> Result<f64> {
    let s = match kernel {
        KernelSpec::SobolevSpline { s } => s,
        KernelSpec::Dirac { .. } => bail!("oracle radius estimation needs a spline kernel"),
    };
    let spec = kernel_td::spectral::SpectralModel::build(
        s,
        model.epsilon,
        model.gamma,
        model.reward,
        256,
    )?;
    let norm = spec.h_norm(&spec.v_star_hat);
    if !norm.is_finite() {
        bail!("value function has unbounded Hilbert norm; supply oracle_radius explicitly");
    }
    Ok(2.0 * norm)
}
