//! The circle restart chain: a Markov reward process on the torus `[0, 1)`
//! whose value function is known in closed form.
//!
//! With probability `ε` the chain restarts uniformly, otherwise it stays
//! put. The uniform distribution is invariant, the chain mixes at geometric
//! rate `(1 - ε)`, and for either built-in reward the value function is an
//! affine transform of the reward, which makes the chain a convenient ground
//! truth for policy-evaluation experiments.

use num_complex::Complex64;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Built-in reward functions, both bounded by `R = 1` and with mean `1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reward {
    /// `r(x) = 2 |x - 1/2|`; kink at `1/2`, Fourier tail `~ ω^{-2}`.
    Abs,
    /// `r(x) = (1 + cos(2πx)) / 2`; band-limited to `|ω| <= 1`.
    Cos,
}

impl Reward {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Reward::Abs => 2.0 * (x - 0.5).abs(),
            Reward::Cos => 0.5 * (1.0 + (2.0 * std::f64::consts::PI * x).cos()),
        }
    }

    /// Fourier coefficient `r̂_ω = ∫ r(x) e^{-2πiωx} dx`.
    pub fn fourier_coeff(&self, omega: i64) -> Complex64 {
        let re = match self {
            Reward::Abs => {
                if omega == 0 {
                    0.5
                } else if omega % 2 == 0 {
                    0.0
                } else {
                    let w = omega as f64;
                    2.0 / (std::f64::consts::PI.powi(2) * w * w)
                }
            }
            Reward::Cos => match omega {
                0 => 0.5,
                1 | -1 => 0.25,
                _ => 0.0,
            },
        };
        Complex64::new(re, 0.0)
    }

    /// Mean under the uniform distribution (`1/2` for both rewards).
    pub fn mean(&self) -> f64 {
        0.5
    }

    /// `||r||_{L²(p)}`: `√(1/3)` for the kink, `√(3/8)` for the cosine bump.
    pub fn l2_norm(&self) -> f64 {
        match self {
            Reward::Abs => (1.0f64 / 3.0).sqrt(),
            Reward::Cos => (3.0f64 / 8.0).sqrt(),
        }
    }
}

/// A sampled transition `(x, x')` with the reward collected at `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePair {
    pub x: f64,
    pub x_next: f64,
    pub reward: f64,
}

/// The circle restart chain with discounted rewards.
#[derive(Debug, Clone, Copy)]
pub struct MrpModel {
    pub epsilon: f64,
    pub gamma: f64,
    pub reward: Reward,
}

impl MrpModel {
    pub fn new(epsilon: f64, gamma: f64, reward: Reward) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "restart probability epsilon = {epsilon} must lie in (0, 1]"
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!(
                "discount gamma = {gamma} must lie in [0, 1)"
            )));
        }
        Ok(MrpModel {
            epsilon,
            gamma,
            reward,
        })
    }

    /// One chain transition: restart uniformly with probability `ε`.
    pub fn step(&self, x: f64, rng: &mut Rng) -> f64 {
        if rng.gen::<f64>() < self.epsilon {
            rng.gen::<f64>()
        } else {
            x
        }
    }

    /// A stationary pair `(x, x')` with `x ~ U[0, 1)`; successive calls are
    /// independent.
    pub fn sample_iid_pair(&self, rng: &mut Rng) -> SamplePair {
        let x = rng.gen::<f64>();
        let x_next = self.step(x, rng);
        SamplePair {
            x,
            x_next,
            reward: self.reward.eval(x),
        }
    }

    /// A chained trajectory of `n` pairs: pair `k` starts where pair `k - 1`
    /// landed, and the first state is drawn from the invariant distribution.
    pub fn sample_trajectory(&self, n: usize, rng: &mut Rng) -> Vec<SamplePair> {
        assert!(n >= 1);
        let mut pairs = Vec::with_capacity(n);
        let mut x = rng.gen::<f64>();
        for _ in 0..n {
            let x_next = self.step(x, rng);
            pairs.push(SamplePair {
                x,
                x_next,
                reward: self.reward.eval(x),
            });
            x = x_next;
        }
        pairs
    }

    /// Scale of the affine value function: `a = (1 - γ(1 - ε))^{-1}`.
    pub fn value_scale(&self) -> f64 {
        1.0 / (1.0 - self.gamma * (1.0 - self.epsilon))
    }

    /// Shift of the affine value function, fixed by Bellman consistency:
    /// `b = a γ ε r̄ / (1 - γ)` with `r̄ = ∫ r`.
    pub fn value_shift(&self) -> f64 {
        self.value_scale() * self.gamma * self.epsilon * self.reward.mean() / (1.0 - self.gamma)
    }

    /// Closed-form value function `V*(x) = a r(x) + b`.
    pub fn true_value(&self, x: f64) -> f64 {
        self.value_scale() * self.reward.eval(x) + self.value_shift()
    }

    /// Monte-Carlo estimate of the truncated discounted return from `x`;
    /// the independent oracle for [`MrpModel::true_value`].
    pub fn rollout_value(&self, x: f64, horizon: usize, num_rollouts: usize, rng: &mut Rng) -> f64 {
        let mut total = 0.0;
        for _ in 0..num_rollouts {
            let mut state = x;
            let mut discount = 1.0;
            let mut ret = 0.0;
            for _ in 0..horizon {
                ret += discount * self.reward.eval(state);
                discount *= self.gamma;
                state = self.step(state, rng);
            }
            total += ret;
        }
        total / num_rollouts as f64
    }

    /// Horizon at which the truncation bias `γ^h R / (1 - γ)` drops below
    /// `bias` (for `γ = 0` a single step suffices).
    pub fn rollout_horizon(&self, bias: f64) -> usize {
        if self.gamma == 0.0 {
            return 1;
        }
        ((bias * (1.0 - self.gamma)).ln() / self.gamma.ln()).ceil() as usize
    }

    /// Estimated total-variation distance between the binned law of `x_n`
    /// (started from the point mass at 0) and the uniform distribution.
    ///
    /// To be compared against the geometric bound `(1 - ε)^n` plus
    /// Monte-Carlo slack.
    pub fn mixing_diagnostic(
        &self,
        n: usize,
        num_chains: usize,
        bins: usize,
        rng: &mut Rng,
    ) -> f64 {
        assert!(n >= 1 && num_chains >= 1 && bins >= 1);
        let mut counts = vec![0u64; bins];
        for _ in 0..num_chains {
            let mut x = 0.0;
            for _ in 0..n {
                x = self.step(x, rng);
            }
            let b = ((x * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let uniform = 1.0 / bins as f64;
        0.5 * counts
            .iter()
            .map(|&c| (c as f64 / num_chains as f64 - uniform).abs())
            .sum::<f64>()
    }
}
