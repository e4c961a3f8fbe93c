//! Kernels on the torus and on finite state sets, plus dense and low-rank
//! (pivoted incomplete Cholesky) kernel-matrix assembly.
//!
//! The spline kernel of order `s` on `[0, 1)` is
//! `K_s(x, y) = 1 + (-1)^{s-1} (2π)^{2s}/(2s)! · B_{2s}({x - y})`
//! with `{t}` the fractional part and `B_j` the Bernoulli polynomial. Its
//! Fourier expansion has coefficients `c_0 = 1`, `c_ω = |ω|^{-2s}`, so the
//! associated Hilbert space is the periodic Sobolev space of order `s`.
//! The Dirac kernel on a finite set recovers tabular methods.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PI_SQ: f64 = std::f64::consts::PI * std::f64::consts::PI;
/// `ζ(2) = π²/6`, used for the closed form of `sup_x K(x, x)`.
const ZETA_2: f64 = PI_SQ / 6.0;
/// `ζ(4) = π⁴/90`.
const ZETA_4: f64 = PI_SQ * PI_SQ / 90.0;

/// Bernoulli polynomial of even order 2 or 4 on `[0, 1]`.
///
/// `B_2(t) = t² - t + 1/6`, `B_4(t) = t⁴ - 2t³ + t² - 1/30`. Only these two
/// orders are needed for the spline kernels of order `s ∈ {1, 2}`.
pub fn bernoulli_poly(order: u32, t: f64) -> Result<f64> {
    debug_assert!((0.0..=1.0).contains(&t), "t = {t} outside [0, 1]");
    match order {
        2 => Ok(t * t - t + 1.0 / 6.0),
        4 => Ok(t * t * t * t - 2.0 * t * t * t + t * t - 1.0 / 30.0),
        other => Err(Error::UnsupportedBernoulliOrder(other)),
    }
}

/// Fractional part mapped exactly into `[0, 1)`, also for negative inputs.
#[inline]
pub fn frac(t: f64) -> f64 {
    t - t.floor()
}

/// A positive-definite kernel descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSpec {
    /// Periodic Sobolev spline kernel of order `s` on the torus `[0, 1)`.
    SobolevSpline { s: u32 },
    /// Indicator kernel `K(i, j) = 1_{i=j}` on `{0, .., state_count - 1}`;
    /// states are carried as exactly-integral floats.
    Dirac { state_count: usize },
}

impl KernelSpec {
    /// Spline kernel of order `s`; only `s ∈ {1, 2}` have the closed
    /// Bernoulli-polynomial form implemented here.
    pub fn sobolev(s: u32) -> Result<Self> {
        if s == 1 || s == 2 {
            Ok(KernelSpec::SobolevSpline { s })
        } else {
            Err(Error::InvalidParameter(format!(
                "spline order s = {s} not supported (closed form only for s in {{1, 2}})"
            )))
        }
    }

    pub fn dirac(state_count: usize) -> Result<Self> {
        if state_count >= 1 {
            Ok(KernelSpec::Dirac { state_count })
        } else {
            Err(Error::InvalidParameter(
                "Dirac kernel needs state_count >= 1".into(),
            ))
        }
    }

    /// Evaluates `K(x, y)`.
    ///
    /// ```
    /// let k = kernel_td::kernels::KernelSpec::sobolev(1).unwrap();
    /// let on_diag = 1.0 + std::f64::consts::PI.powi(2) / 3.0;
    /// assert!((k.eval(0.25, 0.25) - on_diag).abs() < 1e-12);
    /// ```
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match *self {
            KernelSpec::SobolevSpline { s } => {
                let b = bernoulli_poly(2 * s, frac(x - y)).expect("validated order");
                match s {
                    // (2π)²/2! = 2π²
                    1 => 1.0 + 2.0 * std::f64::consts::PI.powi(2) * b,
                    // -(2π)⁴/4! = -2π⁴/3
                    2 => 1.0 - 2.0 / 3.0 * std::f64::consts::PI.powi(4) * b,
                    _ => unreachable!(),
                }
            }
            KernelSpec::Dirac { state_count } => {
                debug_assert!(
                    x.fract() == 0.0 && y.fract() == 0.0,
                    "Dirac kernel states must be integral ids"
                );
                debug_assert!((x as usize) < state_count && (y as usize) < state_count);
                if x == y {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `sup_x K(x, x)`: `1 + 2ζ(2s)` for the spline kernel, `1` for Dirac.
    pub fn sup_diagonal(&self) -> f64 {
        match *self {
            KernelSpec::SobolevSpline { s: 1 } => 1.0 + 2.0 * ZETA_2,
            KernelSpec::SobolevSpline { s: 2 } => 1.0 + 2.0 * ZETA_4,
            KernelSpec::SobolevSpline { .. } => unreachable!("validated order"),
            KernelSpec::Dirac { .. } => 1.0,
        }
    }

    /// Fourier coefficient `c_ω` of the spline kernel (`c_0 = 1`,
    /// `c_ω = |ω|^{-2s}`); panics for the Dirac kernel.
    pub fn fourier_coeff(&self, omega: i64) -> f64 {
        match *self {
            KernelSpec::SobolevSpline { s } => {
                if omega == 0 {
                    1.0
                } else {
                    (omega.unsigned_abs() as f64).powi(-2 * s as i32)
                }
            }
            KernelSpec::Dirac { .. } => panic!("Dirac kernel has no torus Fourier expansion"),
        }
    }

    /// Dense symmetric kernel matrix on a point set.
    pub fn matrix(&self, points: &[f64]) -> Result<KernelMatrix> {
        if points.is_empty() {
            return Err(Error::EmptyPoints);
        }
        let n = points.len();
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let k = self.eval(points[i], points[j]);
                entries[(i, j)] = k;
                entries[(j, i)] = k;
            }
        }
        Ok(KernelMatrix {
            points: points.to_vec(),
            entries,
        })
    }
}

/// Dense symmetric kernel matrix `K_{ij} = K(x_i, x_j)`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub points: Vec<f64>,
    pub entries: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().sum()
    }

    /// (min, max) eigenvalues, for PSD checks.
    pub fn eigen_range(&self) -> (f64, f64) {
        let eigs = self.entries.clone().symmetric_eigenvalues();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &e in eigs.iter() {
            min = min.min(e);
            max = max.max(e);
        }
        (min, max)
    }
}

/// Low-rank factor from pivoted incomplete Cholesky: `K ≈ L Lᵀ`.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    /// `n × m` factor, `m` = selected rank.
    pub columns: DMatrix<f64>,
    /// Point indices in pivot-selection order.
    pub pivot_order: Vec<usize>,
    /// `trace(K - L Lᵀ)` at termination.
    pub residual_trace: f64,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    /// Approximate kernel entry `(L Lᵀ)_{ij}`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.columns.row(i).dot(&self.columns.row(j))
    }

    /// Materializes `L Lᵀ`, for comparison against the dense matrix.
    pub fn approx_matrix(&self) -> DMatrix<f64> {
        &self.columns * self.columns.transpose()
    }
}

/// Greedy pivoted incomplete Cholesky of the (implicit) kernel matrix.
///
/// Columns are generated on demand, so the full matrix is never assembled.
/// The pivot is the largest remaining diagonal residual; the factorization
/// stops once the residual trace drops to `tol` or the rank cap is hit.
pub fn incomplete_cholesky(
    spec: &KernelSpec,
    points: &[f64],
    max_rank: usize,
    tol: f64,
) -> Result<LowRankFactor> {
    if points.is_empty() {
        return Err(Error::EmptyPoints);
    }
    if max_rank == 0 {
        return Err(Error::InvalidParameter("max_rank must be >= 1".into()));
    }
    let n = points.len();
    let mut diag: Vec<f64> = points.iter().map(|&x| spec.eval(x, x)).collect();
    let mut residual: f64 = diag.iter().sum();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivot_order = Vec::new();

    while cols.len() < max_rank.min(n) && residual > tol {
        let (pivot, &pivot_val) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty diagonal");
        if pivot_val < -1e-10 {
            return Err(Error::NotPsd {
                pivot: pivot_val,
                index: pivot,
            });
        }
        if pivot_val <= 0.0 {
            break; // exhausted up to rounding
        }
        let root = pivot_val.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            let mut v = spec.eval(points[i], points[pivot]);
            for prev in &cols {
                v -= prev[i] * prev[pivot];
            }
            col[i] = v / root;
        }
        for i in 0..n {
            diag[i] -= col[i] * col[i];
        }
        diag[pivot] = 0.0;
        residual = diag.iter().map(|&d| d.max(0.0)).sum();
        pivot_order.push(pivot);
        cols.push(col);
    }

    let m = cols.len();
    let mut columns = DMatrix::zeros(n, m);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            columns[(i, j)] = col[i];
        }
    }
    Ok(LowRankFactor {
        columns,
        pivot_order,
        residual_trace: residual,
    })
}
