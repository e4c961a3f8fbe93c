//! Truncated Fourier ground truth for the circle restart chain.
//!
//! In the real trigonometric basis `{1, √2 cos(2πωx), √2 sin(2πωx)}` the
//! covariance operator of the spline kernel is diagonal with eigenvalues
//! `c_0 = 1`, `c_ω = |ω|^{-2s}`, and the lag-one covariance of the restart
//! chain couples only the constant mode:
//! `Σ₁ = (1 - ε) Σ + ε e₀ e₀ᵀ`. Regularized fixed points and the
//! population dynamics are therefore exact finite-dimensional linear
//! algebra, which makes this module an independent oracle for the sampled
//! TD runs.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::mrp::{MrpModel, Reward};
use crate::rng::Rng;

/// Coefficients of a function in the real trigonometric basis.
pub type SpectralVector = DVector<f64>;

/// Truncated spectral representation of the chain and kernel.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub omega_max: usize,
    pub s: u32,
    pub epsilon: f64,
    pub gamma: f64,
    pub reward: Reward,
    /// Kernel eigenvalues per basis index (length `2 omega_max + 1`).
    pub eigenvalues: DVector<f64>,
    /// Lag-one covariance matrix.
    pub sigma1: DMatrix<f64>,
    /// Reward coefficients.
    pub r_hat: SpectralVector,
    /// Value-function coefficients (affine in the reward).
    pub v_star_hat: SpectralVector,
}

/// Population-dynamics trajectory: states and running averages at
/// checkpoint times.
#[derive(Debug, Clone)]
pub struct OdeRun {
    pub times: Vec<f64>,
    pub states: Vec<SpectralVector>,
    /// `(1/t) ∫₀ᵗ V_s ds` at each checkpoint (zero vector at `t = 0`).
    pub averages: Vec<SpectralVector>,
}

/// One row of the regularization-bias table: measured squared distance
/// `||V_λ - V*||²` against the source-condition bound.
#[derive(Debug, Clone, Copy)]
pub struct BiasBoundRow {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// Source-norm stabilization diagnostic across a doubled truncation.
#[derive(Debug, Clone)]
pub struct MaxThetaEstimate {
    /// Largest grid exponent whose truncated norm is stable.
    pub theta: f64,
    /// `(theta, norm at Ω, norm at 2Ω)` for every grid point.
    pub rows: Vec<(f64, f64, f64)>,
}

impl SpectralModel {
    pub fn build(
        s: u32,
        epsilon: f64,
        gamma: f64,
        reward: Reward,
        omega_max: usize,
    ) -> Result<Self> {
        if omega_max < 8 {
            return Err(Error::InvalidParameter("omega_max must be >= 8".into()));
        }
        // reuse the chain/kernel validation
        let model = MrpModel::new(epsilon, gamma, reward)?;
        KernelSpec::sobolev(s)?;

        let d = 2 * omega_max + 1;
        let mut eigenvalues = DVector::zeros(d);
        eigenvalues[0] = 1.0;
        for omega in 1..=omega_max {
            let c = (omega as f64).powi(-2 * s as i32);
            eigenvalues[2 * omega - 1] = c;
            eigenvalues[2 * omega] = c;
        }

        let mut sigma1 = DMatrix::from_diagonal(&(&eigenvalues * (1.0 - epsilon)));
        sigma1[(0, 0)] += epsilon;

        let mut r_hat = DVector::zeros(d);
        r_hat[0] = reward.fourier_coeff(0).re;
        for omega in 1..=omega_max {
            let c = reward.fourier_coeff(omega as i64);
            r_hat[2 * omega - 1] = std::f64::consts::SQRT_2 * c.re;
            r_hat[2 * omega] = -std::f64::consts::SQRT_2 * c.im;
        }

        let mut v_star_hat = &r_hat * model.value_scale();
        v_star_hat[0] += model.value_shift();

        Ok(SpectralModel {
            omega_max,
            s,
            epsilon,
            gamma,
            reward,
            eigenvalues,
            sigma1,
            r_hat,
            v_star_hat,
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.omega_max + 1
    }

    /// `sup_x K(x, x)` of the untruncated kernel.
    pub fn sup_diagonal(&self) -> f64 {
        KernelSpec::sobolev(self.s)
            .expect("validated order")
            .sup_diagonal()
    }

    /// Basis function `i` at `x`.
    pub fn basis_eval(&self, i: usize, x: f64) -> f64 {
        if i == 0 {
            return 1.0;
        }
        let omega = i.div_ceil(2);
        let angle = 2.0 * std::f64::consts::PI * omega as f64 * x;
        if i % 2 == 1 {
            std::f64::consts::SQRT_2 * angle.cos()
        } else {
            std::f64::consts::SQRT_2 * angle.sin()
        }
    }

    /// Pointwise evaluation of a coefficient vector.
    pub fn eval(&self, v: &SpectralVector, x: f64) -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, &vi)| vi * self.basis_eval(i, x))
            .sum()
    }

    /// `L²(p)` norm: the basis is orthonormal, so this is Euclidean.
    pub fn l2_norm(&self, v: &SpectralVector) -> f64 {
        v.norm()
    }

    /// Hilbert norm `√(Σ v_i² / c_i)`.
    pub fn h_norm(&self, v: &SpectralVector) -> f64 {
        v.iter()
            .zip(self.eigenvalues.iter())
            .map(|(&vi, &ci)| vi * vi / ci)
            .sum::<f64>()
            .sqrt()
    }

    /// Interpolation norm `√(Σ v_i² / c_i^{1+θ})`; `θ = -1` is the `L²`
    /// norm, `θ = 0` the Hilbert norm.
    pub fn source_norm(&self, v: &SpectralVector, theta: f64) -> f64 {
        assert!(
            (-1.0..=1.0).contains(&theta),
            "theta = {theta} outside [-1, 1]"
        );
        v.iter()
            .zip(self.eigenvalues.iter())
            .map(|(&vi, &ci)| vi * vi / ci.powf(1.0 + theta))
            .sum::<f64>()
            .sqrt()
    }

    /// Source norms of a vector across an exponent grid.
    pub fn max_theta_diagnostic(&self, v: &SpectralVector, theta_grid: &[f64]) -> Vec<(f64, f64)> {
        theta_grid
            .iter()
            .map(|&theta| (theta, self.source_norm(v, theta)))
            .collect()
    }

    /// Estimates the largest exponent for which the value function satisfies
    /// the source condition: the truncated norm must move by less than 5%
    /// when the truncation doubles.
    pub fn estimate_max_theta(
        s: u32,
        epsilon: f64,
        gamma: f64,
        reward: Reward,
        theta_grid: &[f64],
        omega_max: usize,
    ) -> Result<MaxThetaEstimate> {
        let coarse = SpectralModel::build(s, epsilon, gamma, reward, omega_max)?;
        let fine = SpectralModel::build(s, epsilon, gamma, reward, 2 * omega_max)?;
        let mut rows = Vec::with_capacity(theta_grid.len());
        let mut best = None;
        for &theta in theta_grid {
            let n1 = coarse.source_norm(&coarse.v_star_hat, theta);
            let n2 = fine.source_norm(&fine.v_star_hat, theta);
            rows.push((theta, n1, n2));
            if n2 / n1 < 1.05 && best.is_none_or(|b| theta > b) {
                best = Some(theta);
            }
        }
        let theta = best.ok_or_else(|| {
            Error::InvalidParameter("no grid exponent satisfies the source condition".into())
        })?;
        Ok(MaxThetaEstimate { theta, rows })
    }

    /// Solves the regularized fixed-point equation
    /// `(Σ + λI - γΣ₁) V = Σ r` by a dense LU factorization.
    pub fn solve_v_lambda(&self, lambda: f64) -> Result<SpectralVector> {
        if lambda <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "regularization lambda = {lambda} must be positive"
            )));
        }
        let d = self.dim();
        let mut m = -&self.sigma1 * self.gamma;
        for i in 0..d {
            m[(i, i)] += self.eigenvalues[i] + lambda;
        }
        let rhs = self.eigenvalues.component_mul(&self.r_hat);
        nalgebra::LU::new(m)
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParameter("fixed-point system is singular".into()))
    }

    /// Spectral norm of the whitened lag-one covariance
    /// `Σ^{-1/2} Σ₁ Σ^{-1/2}`; at most 1 for a stationary chain.
    pub fn transfer_operator_norm(&self) -> f64 {
        let d = self.dim();
        let mut m = self.sigma1.clone();
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] /= (self.eigenvalues[i] * self.eigenvalues[j]).sqrt();
            }
        }
        m.symmetric_eigenvalues()
            .iter()
            .fold(0.0, |acc: f64, &e| acc.max(e.abs()))
    }

    /// Applies the transition operator `P = Σ^{-1} Σ₁` to a coefficient
    /// vector.
    pub fn apply_transition(&self, v: &SpectralVector) -> SpectralVector {
        let mut out = &self.sigma1 * v;
        for i in 0..self.dim() {
            out[i] /= self.eigenvalues[i];
        }
        out
    }

    /// Max of `||P V|| / ||V||` over random test vectors; the transition
    /// operator is an `L²(p)` contraction, so this must stay at or below 1.
    pub fn contraction_ratio(&self, trials: usize, rng: &mut Rng) -> f64 {
        assert!(trials >= 1);
        let mut max_ratio: f64 = 0.0;
        for _ in 0..trials {
            let v = SpectralVector::from_fn(self.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let ratio = self.l2_norm(&self.apply_transition(&v)) / self.l2_norm(&v);
            max_ratio = max_ratio.max(ratio);
        }
        max_ratio
    }

    /// Measured regularization bias `||V_λ - V*||²_{L²}` against the bound
    /// `λ^{1+θ} ||Σ^{-θ/2} V*||²_H / (1 - γ)²` across a `λ` grid.
    pub fn bias_bound_table(&self, lambda_grid: &[f64], theta: f64) -> Result<Vec<BiasBoundRow>> {
        let source = self.source_norm(&self.v_star_hat, theta);
        let mut rows = Vec::with_capacity(lambda_grid.len());
        for &lambda in lambda_grid {
            let v = self.solve_v_lambda(lambda)?;
            let lhs = self.l2_norm(&(&v - &self.v_star_hat)).powi(2);
            let rhs = lambda.powf(1.0 + theta) * source * source / (1.0 - self.gamma).powi(2);
            rows.push(BiasBoundRow { lambda, lhs, rhs });
        }
        Ok(rows)
    }

    /// Smallest eigenvalue of the joint covariance `[[Σ, Σ₁], [Σ₁ᵀ, Σ]]`.
    pub fn block_min_eigenvalue(&self) -> f64 {
        let d = self.dim();
        let mut block = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            block[(i, i)] = self.eigenvalues[i];
            block[(d + i, d + i)] = self.eigenvalues[i];
        }
        for i in 0..d {
            for j in 0..d {
                block[(i, d + j)] = self.sigma1[(i, j)];
                block[(d + i, j)] = self.sigma1[(j, i)];
            }
        }
        block
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, &e| acc.min(e))
    }

    /// The model's prediction for the pair expectations
    /// `E_q[φ_a(x) φ_b(x')] = ⟨φ_a, Σ₁ φ_b⟩_H`, which in coefficients is
    /// `Σ₁[a, b] / c_a`, on the sub-block of frequencies up to `sub_omega`.
    pub fn pair_expectation_matrix(&self, sub_omega: usize) -> DMatrix<f64> {
        let sub_d = 2 * sub_omega + 1;
        DMatrix::from_fn(sub_d, sub_d, |a, b| {
            self.sigma1[(a, b)] / self.eigenvalues[a]
        })
    }

    /// Monte-Carlo estimate of `E_q[φ_a(x) φ_b(x')]` on the sub-block of
    /// frequencies up to `sub_omega`; returns the estimate and its
    /// standard error, for validating the built `Σ₁` against
    /// [`SpectralModel::pair_expectation_matrix`].
    pub fn mc_pair_expectation(
        &self,
        sub_omega: usize,
        pairs: usize,
        rng: &mut Rng,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let sub_d = 2 * sub_omega + 1;
        let model = MrpModel::new(self.epsilon, self.gamma, self.reward).expect("validated");
        let mut sum: DMatrix<f64> = DMatrix::zeros(sub_d, sub_d);
        let mut sum_sq: DMatrix<f64> = DMatrix::zeros(sub_d, sub_d);
        let mut phi_x = vec![0.0; sub_d];
        let mut phi_next = vec![0.0; sub_d];
        for _ in 0..pairs {
            let p = model.sample_iid_pair(rng);
            for i in 0..sub_d {
                phi_x[i] = self.basis_eval(i, p.x);
                phi_next[i] = self.basis_eval(i, p.x_next);
            }
            for a in 0..sub_d {
                for b in 0..sub_d {
                    let v = phi_x[a] * phi_next[b];
                    sum[(a, b)] += v;
                    sum_sq[(a, b)] += v * v;
                }
            }
        }
        let n = pairs as f64;
        let mean = sum / n;
        let mut se = DMatrix::zeros(sub_d, sub_d);
        for a in 0..sub_d {
            for b in 0..sub_d {
                let var = (sum_sq[(a, b)] / n - mean[(a, b)] * mean[(a, b)]).max(0.0);
                se[(a, b)] = (var / n).sqrt();
            }
        }
        (mean, se)
    }

    /// Conservative step size for the population dynamics.
    pub fn default_ode_dt(&self, lambda: f64) -> f64 {
        0.05 / (self.sup_diagonal() + lambda)
    }

    /// Integrates the population dynamics `dV/dt = (A - λI) V + b` with
    /// `A = γΣ₁ - Σ`, `b = Σ r`, `V₀ = 0`, by the classical fourth-order
    /// one-step method; also carries the running average for the
    /// Polyak-averaged trajectory.
    pub fn ode_integrate(&self, lambda: f64, t_end: f64, dt: f64) -> Result<OdeRun> {
        if lambda < 0.0 || t_end <= 0.0 || dt <= 0.0 {
            return Err(Error::InvalidParameter(
                "need lambda >= 0, t_end > 0, dt > 0".into(),
            ));
        }
        let stability = 0.1 / (self.sup_diagonal() + lambda);
        if dt > stability {
            return Err(Error::InvalidParameter(format!(
                "dt = {dt} above the stability ceiling {stability:.6}"
            )));
        }
        let d = self.dim();
        let mut drift = &self.sigma1 * self.gamma;
        for i in 0..d {
            drift[(i, i)] -= self.eigenvalues[i] + lambda;
        }
        let b = self.eigenvalues.component_mul(&self.r_hat);
        let f = |v: &SpectralVector| &drift * v + &b;

        let steps = (t_end / dt).ceil() as usize;
        let stride = (steps / 256).max(1);
        let mut v: SpectralVector = DVector::zeros(d);
        let mut integral: SpectralVector = DVector::zeros(d);
        let mut run = OdeRun {
            times: vec![0.0],
            states: vec![v.clone()],
            averages: vec![DVector::zeros(d)],
        };
        for step in 1..=steps {
            let k1v = f(&v);
            let k1u = v.clone();
            let v2 = &v + &k1v * (dt / 2.0);
            let k2v = f(&v2);
            let k2u = v2;
            let v3 = &v + &k2v * (dt / 2.0);
            let k3v = f(&v3);
            let k3u = v3;
            let v4 = &v + &k3v * dt;
            let k4v = f(&v4);
            let k4u = v4;

            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
            integral += (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (dt / 6.0);

            let norm = self.h_norm(&v);
            if !norm.is_finite() || norm > 1e8 {
                return Err(Error::OdeUnstable {
                    t: step as f64 * dt,
                    norm,
                });
            }
            if step % stride == 0 || step == steps {
                let t = step as f64 * dt;
                run.times.push(t);
                run.states.push(v.clone());
                run.averages.push(&integral / t);
            }
        }
        Ok(run)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use approx::assert_abs_diff_eq;

    fn table_configs() -> Vec<(u32, Reward)> {
        vec![
            (1, Reward::Abs),
            (1, Reward::Cos),
            (2, Reward::Abs),
            (2, Reward::Cos),
        ]
    }

    #[test]
    fn build_shapes_and_limits() {
        let m = SpectralModel::build(1, 1.0, 0.5, Reward::Cos, 16).unwrap();
        assert_eq!(m.dim(), 33);
        // ε = 1: only the constant mode survives in Σ₁
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                let expect = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(m.sigma1[(i, j)], expect, epsilon = 1e-15);
            }
        }

        // ε → 0: Σ₁ → Σ
        let m = SpectralModel::build(2, 1e-12, 0.5, Reward::Cos, 16).unwrap();
        for i in 0..m.dim() {
            assert_abs_diff_eq!(m.sigma1[(i, i)], m.eigenvalues[i], epsilon = 1e-10);
        }

        assert!(SpectralModel::build(1, 0.5, 0.5, Reward::Cos, 4).is_err());
    }

    #[test]
    fn reward_coefficients_satisfy_parseval() {
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Abs, 256).unwrap();
        assert_abs_diff_eq!(m.r_hat.norm_squared(), 1.0 / 3.0, epsilon = 1e-6);
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 256).unwrap();
        assert_abs_diff_eq!(m.r_hat.norm_squared(), 3.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn coefficient_vectors_evaluate_pointwise() {
        // the basis-evaluated reward expansion reproduces the reward
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 16).unwrap();
        for i in 0..10 {
            let x = i as f64 / 10.0;
            assert_abs_diff_eq!(m.eval(&m.r_hat, x), Reward::Cos.eval(x), epsilon = 1e-12);
            assert_abs_diff_eq!(
                m.eval(&m.v_star_hat, x),
                MrpModel::new(0.8, 0.5, Reward::Cos).unwrap().true_value(x),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn quadrature_matches_coefficient_norm() {
        // Parseval on the grid: for band-limited functions the equal-weight
        // grid mean of f² is exactly the squared coefficient norm
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Abs, 16).unwrap();
        let mut rng = derive_rng(61, &[0]);
        let grid = 64;
        for _ in 0..20 {
            let v = SpectralVector::from_fn(m.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let quad: f64 = (0..grid)
                .map(|i| m.eval(&v, i as f64 / grid as f64).powi(2))
                .sum::<f64>()
                / grid as f64;
            assert_abs_diff_eq!(quad, v.norm_squared(), epsilon = 1e-10);
        }
    }

    #[test]
    fn sqrt_sigma_is_an_isometry() {
        let m = SpectralModel::build(2, 0.5, 0.9, Reward::Abs, 32).unwrap();
        let mut rng = derive_rng(62, &[0]);
        for _ in 0..10 {
            let v = SpectralVector::from_fn(m.dim(), |_, _| rng.gen_range(-1.0..1.0));
            let scaled = SpectralVector::from_fn(m.dim(), |i, _| v[i] * m.eigenvalues[i].sqrt());
            assert_abs_diff_eq!(m.h_norm(&scaled), m.l2_norm(&v), epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_point_closed_forms() {
        // γ = 0 is ridge regression: coordinatewise shrinkage
        let m = SpectralModel::build(1, 0.8, 0.0, Reward::Abs, 64).unwrap();
        let lambda = 0.3;
        let v = m.solve_v_lambda(lambda).unwrap();
        for i in 0..m.dim() {
            let c = m.eigenvalues[i];
            assert_abs_diff_eq!(v[i], c * m.r_hat[i] / (c + lambda), epsilon = 1e-12);
        }

        // ε = 1: rank-one coupling only in the constant mode
        let m = SpectralModel::build(1, 1.0, 0.5, Reward::Abs, 64).unwrap();
        let v = m.solve_v_lambda(lambda).unwrap();
        assert_abs_diff_eq!(v[0], m.r_hat[0] / (1.0 + lambda - 0.5), epsilon = 1e-12);
        for i in 1..m.dim() {
            let c = m.eigenvalues[i];
            assert_abs_diff_eq!(v[i], c * m.r_hat[i] / (c + lambda), epsilon = 1e-12);
        }

        assert!(m.solve_v_lambda(0.0).is_err());
    }

    #[test]
    fn fixed_point_norm_bound() {
        for (s, reward) in table_configs() {
            let m = SpectralModel::build(s, 0.8, 0.5, reward, 64).unwrap();
            for lambda in [0.01, 0.1, 1.0] {
                let v = m.solve_v_lambda(lambda).unwrap();
                let bound = m.sup_diagonal().sqrt() * m.r_hat.norm() / lambda;
                assert!(m.h_norm(&v) <= bound * (1.0 + 1e-10));
            }
        }
    }

    #[test]
    fn source_norm_special_cases() {
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 32).unwrap();
        let v = &m.v_star_hat;
        assert_abs_diff_eq!(m.source_norm(v, -1.0), m.l2_norm(v), epsilon = 1e-12);
        assert_abs_diff_eq!(m.source_norm(v, 0.0), m.h_norm(v), epsilon = 1e-12);

        // band-limited value function: finite for the largest exponent,
        // and computable by hand from the two surviving modes
        let direct = (v[0] * v[0] + v[1] * v[1] / m.eigenvalues[1].powi(2)).sqrt();
        assert_abs_diff_eq!(m.source_norm(v, 1.0), direct, epsilon = 1e-12);
    }

    #[test]
    fn max_theta_matches_expected_regularity() {
        let grid = [-0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];
        let expected = [
            (1, Reward::Abs, 0.5),
            (1, Reward::Cos, 1.0),
            (2, Reward::Abs, -0.25),
            (2, Reward::Cos, 1.0),
        ];
        for (s, reward, theta) in expected {
            let est = SpectralModel::estimate_max_theta(s, 0.8, 0.5, reward, &grid, 256).unwrap();
            assert_eq!(est.theta, theta, "cell s = {s}, reward {reward:?}");
        }
    }

    #[test]
    fn bias_bound_holds() {
        // ridge case with the trivial exponent
        let m = SpectralModel::build(1, 0.8, 0.0, Reward::Abs, 64).unwrap();
        for row in m.bias_bound_table(&[1e-3, 1e-2, 0.1, 1.0], -1.0).unwrap() {
            assert!(row.lhs <= row.rhs * (1.0 + 1e-6), "ridge: {row:?}");
        }

        // kink reward at its critical exponent
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Abs, 64).unwrap();
        for row in m.bias_bound_table(&[0.1], 0.5).unwrap() {
            assert!(row.lhs <= row.rhs * (1.0 + 1e-6), "{row:?}");
        }

        // smooth reward: bias vanishes as λ → 0
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 64).unwrap();
        let rows = m.bias_bound_table(&[1e-4], 1.0).unwrap();
        assert!(rows[0].lhs < 1e-6);
    }

    #[test]
    fn transfer_operator_norm_is_at_most_one() {
        for eps in [0.2, 0.5, 0.8, 1.0] {
            for s in [1, 2] {
                let m = SpectralModel::build(s, eps, 0.5, Reward::Abs, 64).unwrap();
                let norm = m.transfer_operator_norm();
                assert!(norm <= 1.0 + 1e-8, "eps = {eps}, s = {s}: {norm}");
                assert!(norm > 0.9, "constant mode keeps the norm near 1: {norm}");
            }
        }
    }

    #[test]
    fn transition_is_a_contraction() {
        let mut rng = derive_rng(63, &[0]);
        let m = SpectralModel::build(1, 0.5, 0.5, Reward::Abs, 32).unwrap();
        assert!(m.contraction_ratio(50, &mut rng) <= 1.0 + 1e-8);

        // constants are fixed by the transition operator
        let mut constant: SpectralVector = DVector::zeros(m.dim());
        constant[0] = 2.0;
        let out = m.apply_transition(&constant);
        assert_abs_diff_eq!(out[0], 2.0, epsilon = 1e-12);

        // full restart sends zero-mean functions to zero
        let m1 = SpectralModel::build(1, 1.0, 0.5, Reward::Abs, 32).unwrap();
        let mut zero_mean: SpectralVector = DVector::zeros(m1.dim());
        zero_mean[3] = 1.0;
        assert!(m1.l2_norm(&m1.apply_transition(&zero_mean)) <= 1e-12);
    }

    #[test]
    fn joint_covariance_is_psd() {
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Abs, 64).unwrap();
        assert!(m.block_min_eigenvalue() >= -1e-10);
    }

    #[test]
    fn sigma1_matches_monte_carlo() {
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Abs, 16).unwrap();
        let mut rng = derive_rng(64, &[0]);
        let (est, se) = m.mc_pair_expectation(2, 200_000, &mut rng);
        let predicted = m.pair_expectation_matrix(2);
        for a in 0..5 {
            for b in 0..5 {
                let dev = (est[(a, b)] - predicted[(a, b)]).abs();
                assert!(
                    dev <= 3.0 * se[(a, b)] + 1e-3,
                    "entry ({a}, {b}): dev {dev:.5}, se {:.5}",
                    se[(a, b)]
                );
            }
        }
        // the chain only couples the constant mode: pair expectations are
        // (1-eps) on the rest of the diagonal
        assert_abs_diff_eq!(predicted[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(predicted[(3, 3)], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(predicted[(1, 2)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ode_zero_reward_stays_at_zero() {
        let mut m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 16).unwrap();
        m.r_hat.fill(0.0);
        let run = m.ode_integrate(0.1, 1.0, m.default_ode_dt(0.1)).unwrap();
        for state in &run.states {
            assert_eq!(state.norm(), 0.0);
        }
    }

    #[test]
    fn ode_converges_to_fixed_point() {
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 32).unwrap();
        let lambda = 0.1;
        let v_lambda = m.solve_v_lambda(lambda).unwrap();
        let run = m
            .ode_integrate(lambda, 10.0, m.default_ode_dt(lambda))
            .unwrap();

        let norm_sq = m.h_norm(&v_lambda).powi(2);
        let mut last_w = f64::INFINITY;
        for (t, state) in run.times.iter().zip(&run.states) {
            let w = m.h_norm(&(state - &v_lambda)).powi(2);
            // exponential decay bound plus integrator slack
            assert!(w <= norm_sq * (-2.0 * lambda * t).exp() * (1.0 + 1e-6) + 1e-12);
            // descent along the whole trajectory
            assert!(w <= last_w + 1e-8);
            last_w = w;
        }
    }

    #[test]
    fn ode_polyak_average_rate() {
        // unregularized dynamics: averaged error controlled by ||V*||²_H / (2(1-γ)T)
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 32).unwrap();
        let run = m.ode_integrate(0.0, 50.0, m.default_ode_dt(0.0)).unwrap();
        let h_norm_sq = m.h_norm(&m.v_star_hat).powi(2);
        for (i, t) in run.times.iter().enumerate() {
            if *t < 1.0 {
                continue;
            }
            let err = m.l2_norm(&(&run.averages[i] - &m.v_star_hat)).powi(2);
            let bound = h_norm_sq / (2.0 * (1.0 - m.gamma) * t);
            assert!(err <= bound * (1.0 + 1e-6), "t = {t}: {err} > {bound}");
        }
    }

    #[test]
    fn ode_rejects_oversized_steps() {
        let m = SpectralModel::build(1, 0.8, 0.5, Reward::Cos, 16).unwrap();
        assert!(m.ode_integrate(0.1, 1.0, 1.0).is_err());
    }
}
