//! Deterministic numerical primitives shared by the estimator and the mechanism.
//!
//! Everything here is a pure function of its inputs. Vectors are plain
//! `nalgebra` column vectors; symmetric matrices go through [`SymMatrix`],
//! which refuses to exist unless the stored matrix is exactly symmetric.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Largest 2-norm condition number accepted by [`solve_symmetric`].
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("parameter `{name}` must be {requirement}, got {value}")]
    InvalidParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
}

/// Dense symmetric matrix. `m[(i, j)] == m[(j, i)]` holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, NumericsError> {
        if m.nrows() != m.ncols() {
            return Err(NumericsError::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { what: "matrix" });
        }
        let d = m.nrows();
        for j in 0..d {
            for i in (j + 1)..d {
                if m[(i, j)] != m[(j, i)] {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds a matrix from its upper triangle (`i <= j`), mirroring below the diagonal.
    pub fn from_upper_fn(d: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        &self.0 * v
    }

    /// Entry-wise sum; symmetry is preserved because both operands are symmetric.
    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    /// Induced 1-norm: maximum absolute column sum.
    pub fn norm_l1(&self) -> f64 {
        self.0
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry.
    pub fn norm_max(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn row_l1_norms(&self) -> Vec<f64> {
        self.0
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum())
            .collect()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(f64::NAN)
    }

    pub fn count_nonzero(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }
}

fn check_finite(v: &Vector, what: &'static str) -> Result<(), NumericsError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { what })
    }
}

fn check_param(
    name: &'static str,
    value: f64,
    positive: bool,
) -> Result<(), NumericsError> {
    let ok = value.is_finite() && if positive { value > 0.0 } else { value >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(NumericsError::InvalidParameter {
            name,
            requirement: if positive { "finite and > 0" } else { "finite and >= 0" },
            value,
        })
    }
}

/// Scalar soft-thresholding `sgn(u) * max(|u| - lambda, 0)`.
#[inline]
pub fn soft_threshold_scalar(u: f64, lambda: f64) -> f64 {
    let shrunk = u.abs() - lambda;
    if shrunk > 0.0 {
        shrunk.copysign(u)
    } else {
        0.0
    }
}

/// Element-wise soft-thresholding operator.
///
/// This is the proximal map of `lambda * ||.||_1` under the objective
/// `0.5 * ||theta - u||^2 + lambda * ||theta||_1`.
pub fn soft_threshold(u: &Vector, lambda: f64) -> Result<Vector, NumericsError> {
    check_param("lambda", lambda, false)?;
    check_finite(u, "soft_threshold input")?;
    Ok(u.map(|v| soft_threshold_scalar(v, lambda)))
}

/// Scales `x` into the closed l2 ball of radius `r`.
pub fn clip_l2(x: &Vector, r: f64) -> Result<Vector, NumericsError> {
    check_param("r", r, true)?;
    check_finite(x, "clip_l2 input")?;
    let norm = x.norm();
    if norm <= r {
        Ok(x.clone())
    } else {
        Ok(x * (r / norm))
    }
}

/// Euclidean projection onto the ball of radius `tau_theta`; same map as [`clip_l2`].
pub fn project_l2_ball(v: &Vector, tau_theta: f64) -> Result<Vector, NumericsError> {
    check_param("tau_theta", tau_theta, true).and_then(|_| clip_l2(v, tau_theta))
}

#[inline]
pub fn clip_scalar(v: f64, tau: f64) -> f64 {
    v.clamp(-tau, tau)
}

/// Per-coordinate clamp `sgn(v_i) * min(|v_i|, tau)`.
pub fn clip_elementwise(v: &Vector, tau: f64) -> Result<Vector, NumericsError> {
    check_param("tau", tau, true)?;
    check_finite(v, "clip_elementwise input")?;
    Ok(v.map(|x| clip_scalar(x, tau)))
}

/// Zeroes every entry with `|m_ij| <= thres`. Ties at exactly `thres` are zeroed.
pub fn hard_threshold_matrix(m: &SymMatrix, thres: f64) -> Result<SymMatrix, NumericsError> {
    check_param("thres", thres, false)?;
    Ok(SymMatrix(m.0.map(|v| if v.abs() > thres { v } else { 0.0 })))
}

/// 2-norm condition number of a symmetric matrix, `max|ev| / min|ev|`.
/// Returns infinity for a singular matrix.
pub fn condition_number(m: &SymMatrix) -> f64 {
    let ev = m.eigenvalues();
    if ev.is_empty() {
        return f64::INFINITY;
    }
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `m x = b` and reports the condition estimate used to accept the system.
pub fn solve_symmetric_with_condition(
    m: &SymMatrix,
    b: &Vector,
) -> Result<(Vector, f64), NumericsError> {
    if m.dim() != b.len() {
        return Err(NumericsError::DimensionMismatch {
            expected: m.dim(),
            found: b.len(),
        });
    }
    check_finite(b, "right-hand side")?;
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(NumericsError::IllConditioned { condition });
    }
    let lu = m.0.clone().lu();
    let mut x = lu
        .solve(b)
        .ok_or(NumericsError::IllConditioned { condition })?;
    // one round of iterative refinement
    let residual = b - &m.0 * &x;
    if let Some(correction) = lu.solve(&residual) {
        x += correction;
    }
    check_finite(&x, "solution")?;
    Ok((x, condition))
}

/// Solves `m x = b` by LU factorization with partial pivoting.
///
/// Fails with [`NumericsError::IllConditioned`] when the condition number
/// exceeds [`MAX_CONDITION`].
pub fn solve_symmetric(m: &SymMatrix, b: &Vector) -> Result<Vector, NumericsError> {
    solve_symmetric_with_condition(m, b).map(|(x, _)| x)
}

/// Normwise relative residual `||m x - b|| / (||m||_2 ||x|| + ||b||)`.
pub fn relative_residual(m: &SymMatrix, x: &Vector, b: &Vector) -> f64 {
    let r = (&m.0 * x - b).norm();
    let scale = m.0.norm() * x.norm() + b.norm();
    if scale == 0.0 {
        r
    } else {
        r / scale
    }
}
