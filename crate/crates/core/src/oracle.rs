//! Slow, independent reference implementations for cross-checking the main path.
//!
//! Nothing here calls into `numerics` solvers or thresholding; the grid search,
//! the Gaussian elimination, and the sensitivity sweep are written from scratch.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::numerics::Vector;
use crate::rng::derived_rng;

/// Per-coordinate grid minimizer of `(t - v_i)^2 + 2 lambda |t|` on a grid of
/// spacing `grid_step` over `[-|v_i| - lambda, |v_i| + lambda]`.
///
/// The grid contains `0` exactly, so sparse minimizers are found without
/// rounding error.
pub fn solve_eq2_grid(v: &Vector, lambda: f64, grid_step: f64) -> Vector {
    assert!(grid_step > 0.0, "grid_step must be positive");
    assert!(lambda >= 0.0, "lambda must be non-negative");
    Vector::from_iterator(
        v.len(),
        v.iter().map(|&vi| {
            let half_width = vi.abs() + lambda;
            let steps = (half_width / grid_step).ceil() as i64;
            let objective = |t: f64| (t - vi) * (t - vi) + 2.0 * lambda * t.abs();
            let mut best = 0.0;
            let mut best_val = objective(0.0);
            for k in -steps..=steps {
                let t = k as f64 * grid_step;
                let val = objective(t);
                if val < best_val {
                    best = t;
                    best_val = val;
                }
            }
            best
        }),
    )
}

/// Largest violation of the first-order conditions of `(t - v)^2 + 2 lambda |t|`
/// at `theta`, coordinate-wise: `|theta - v + lambda sgn(theta)|` off zero and
/// `max(|v| - lambda, 0)` at zero.
pub fn kkt_violation(theta: &Vector, v: &Vector, lambda: f64) -> f64 {
    theta
        .iter()
        .zip(v.iter())
        .map(|(&t, &vi)| {
            if t == 0.0 {
                (vi.abs() - lambda).max(0.0)
            } else {
                (t - vi + lambda * t.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingularDesign;

impl std::fmt::Display for SingularDesign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("design matrix is rank deficient")
    }
}

impl std::error::Error for SingularDesign {}

/// Dense Gaussian elimination with partial pivoting on a row-major square system.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, SingularDesign> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            return Err(SingularDesign);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= factor * src;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Ordinary least squares through the normal equations `(X^T X / n) theta = X^T Y / n`.
pub fn ols(xs: &[Vector], ys: &[f64]) -> Result<Vector, SingularDesign> {
    assert_eq!(xs.len(), ys.len(), "one response per covariate");
    let n = xs.len();
    let d = xs.first().map_or(0, |x| x.len());
    if n < d || d == 0 {
        return Err(SingularDesign);
    }
    let nf = n as f64;
    let mut gram = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for (x, &y) in xs.iter().zip(ys) {
        for i in 0..d {
            rhs[i] += x[i] * y / nf;
            for j in 0..d {
                gram[i][j] += x[i] * x[j] / nf;
            }
        }
    }
    gauss_solve(gram, rhs).map(Vector::from_vec)
}

/// `max_j |sum_i x_ij (<x_i, theta> - y_i)|`, the normal-equation residual.
pub fn ols_gradient_inf(xs: &[Vector], ys: &[f64], theta: &Vector) -> f64 {
    let d = theta.len();
    let mut g = vec![0.0; d];
    for (x, &y) in xs.iter().zip(ys) {
        let r = x.dot(theta) - y;
        for j in 0..d {
            g[j] += x[j] * r;
        }
    }
    g.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Clipping parameters the sensitivity sweep applies to each record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    pub r: f64,
    pub tau_x: f64,
    pub tau_y: f64,
}

/// Largest normalized changes seen over the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityReport {
    /// `max ||delta Sigma_xx||_F * n / (2 r^2)`.
    pub cov_ratio: f64,
    /// `max ||delta Sigma_xy||_2 * n / (2 tau_y min(r, tau_x sqrt(d)))`.
    pub xy_ratio: f64,
    pub pairs: usize,
}

fn l2_clip(x: &[f64], r: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= r {
        x.to_vec()
    } else {
        x.iter().map(|v| v * r / norm).collect()
    }
}

fn cov_stat(data: &[(Vec<f64>, f64)], clip: ClipParams) -> Vec<f64> {
    let d = data[0].0.len();
    let n = data.len() as f64;
    let mut out = vec![0.0; d * d];
    for (x, _) in data {
        let xb = l2_clip(x, clip.r);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += xb[i] * xb[j] / n;
            }
        }
    }
    out
}

fn xy_stat(data: &[(Vec<f64>, f64)], clip: ClipParams) -> Vec<f64> {
    let d = data[0].0.len();
    let n = data.len() as f64;
    let mut out = vec![0.0; d];
    for (x, y) in data {
        let yt = y.clamp(-clip.tau_y, clip.tau_y);
        for j in 0..d {
            out[j] += x[j].clamp(-clip.tau_x, clip.tau_x) * yt / n;
        }
    }
    out
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Ratios of the observed change in each clipped statistic to its analytic
/// sensitivity, for one neighboring pair differing in record `index`.
pub fn neighbor_ratios(
    data: &[(Vec<f64>, f64)],
    index: usize,
    replacement: (Vec<f64>, f64),
    clip: ClipParams,
) -> (f64, f64) {
    let n = data.len() as f64;
    let d = data[0].0.len() as f64;
    let mut other = data.to_vec();
    other[index] = replacement;
    let cov = l2_dist(&cov_stat(data, clip), &cov_stat(&other, clip)) * n / (2.0 * clip.r * clip.r);
    let xy_sens = 2.0 * clip.tau_y * clip.r.min(clip.tau_x * d.sqrt());
    let xy = l2_dist(&xy_stat(data, clip), &xy_stat(&other, clip)) * n / xy_sens;
    (cov, xy)
}

/// A record pushed past every clip boundary in a random direction.
fn boundary_record(d: usize, clip: ClipParams, rng: &mut crate::rng::Rng) -> (Vec<f64>, f64) {
    let dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    // large enough to saturate the l2 clip and every coordinate clip
    let scale = 4.0 * (clip.r + clip.tau_x * d as f64);
    let x = dir.iter().map(|v| v / norm * scale).collect();
    let y = if rng.gen_bool(0.5) { 4.0 * clip.tau_y } else { -4.0 * clip.tau_y };
    (x, y)
}

/// Sweeps `trials` random neighboring pairs of size-`n` datasets in dimension `d`,
/// where the changed record is replaced by a boundary-saturating record, and
/// returns the largest normalized changes in both sufficient statistics.
pub fn exhaustive_sensitivity(n: usize, d: usize, trials: usize, clip: ClipParams, seed: u64) -> SensitivityReport {
    assert!(n >= 1 && d >= 1, "need at least one record and one dimension");
    let mut rng = derived_rng(seed, &[0]);
    let mut cov_ratio: f64 = 0.0;
    let mut xy_ratio: f64 = 0.0;
    for _ in 0..trials {
        let data: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    boundary_record(d, clip, &mut rng)
                } else {
                    let x = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * clip.r).collect();
                    (x, rng.sample::<f64, _>(StandardNormal) * clip.tau_y)
                }
            })
            .collect();
        let index = rng.gen_range(0..n);
        let replacement = boundary_record(d, clip, &mut rng);
        let (c, x) = neighbor_ratios(&data, index, replacement, clip);
        cov_ratio = cov_ratio.max(c);
        xy_ratio = xy_ratio.max(x);
    }
    SensitivityReport { cov_ratio, xy_ratio, pairs: trials }
}
