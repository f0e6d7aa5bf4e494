//! Penalized least-squares solvers used to estimate composition parameters.
//!
//! Both solvers fit a multi-output linear map `W` (one row per output
//! dimension) to minimize `||X W^T - T||^2` plus a penalty:
//!
//! * [`fit_ridge`] adds `lambda ||W||_F^2` and solves the normal equations
//!   `(X^T X + lambda I) W^T = X^T T` with a Cholesky factorization. The
//!   systems involved are small (the design width), so no external linear
//!   algebra backend is needed.
//! * [`fit_lasso`] adds `lambda ||W||_1` and runs cyclic coordinate descent
//!   per output dimension. Columns are internally rescaled to unit Euclidean
//!   norm (without centering, so the fitted map remains a plain linear map);
//!   the penalty applies to the rescaled coefficients and the result is
//!   mapped back to the original scale.
//!
//! [`cross_validate`] picks the penalty weight from a grid by k-fold
//! cross-validation with a seeded deterministic shuffle.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::fmt;
use std::str::FromStr;

use crate::training::TrainError;

/// Columns (and vector norms elsewhere) below this are treated as zero.
const NEAR_ZERO: f64 = 1e-12;

/// Relative pivot threshold below which the normal equations count as
/// singular.
const SINGULAR_PIVOT: f64 = 1e-13;

/// Which penalty a fit or cross-validation run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    L2,
    L1,
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Penalty::L2 => "l2",
            Penalty::L1 => "l1",
        })
    }
}

impl FromStr for Penalty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l2" => Ok(Penalty::L2),
            "l1" => Ok(Penalty::L1),
            other => Err(format!("unknown penalty {other:?} (expected l1 or l2)")),
        }
    }
}

/// Stopping parameters for the lasso coordinate descent.
#[derive(Debug, Clone)]
pub struct LassoOptions {
    /// Maximum number of full coordinate sweeps per output dimension.
    pub max_sweeps: usize,
    /// Convergence threshold on the largest coordinate change in a sweep
    /// (in the rescaled parameterization).
    pub tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            tol: 1e-9,
        }
    }
}

/// Per-output-dimension diagnostics from a lasso fit.
#[derive(Debug, Clone, Serialize)]
pub struct LassoDimStats {
    pub sweeps: usize,
    pub converged: bool,
    /// Penalized objective after each sweep
    /// (`0.5 ||X~ w~ - t||^2 + lambda ||w~||_1` in the rescaled
    /// parameterization); non-increasing by construction.
    pub objective_trace: Vec<f64>,
}

/// Result of [`fit_lasso`]: the coefficient map plus per-dimension stats.
#[derive(Debug, Clone)]
pub struct LassoFit {
    /// `n_outputs x design_width`, in the original (unscaled) column scale.
    pub coefficients: Array2<f64>,
    pub per_dim: Vec<LassoDimStats>,
}

/// Outcome of a k-fold cross-validation sweep over a penalty grid.
#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub penalty: Penalty,
    pub folds: usize,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// Mean validation MSE per grid point (mean over folds of the
    /// per-element squared error). Grid points whose fold fits were
    /// singular hold `inf`.
    pub mean_mse: Vec<f64>,
    /// Validation MSE per grid point and fold.
    pub fold_mse: Vec<Vec<f64>>,
    pub chosen_lambda: f64,
    pub chosen_index: usize,
}

/// Ridge fit: `W = argmin ||X W^T - T||^2 + lambda ||W||_F^2`.
///
/// Returns `W` with shape `n_outputs x design_width`.
pub fn fit_ridge(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<Array2<f64>, TrainError> {
    fit_ridge_impl(design, targets, None, lambda)
}

/// Ridge fit with a nonnegative weight per row: rows with weight `w` count
/// like `w` copies of themselves in the squared-error term.
pub fn fit_ridge_weighted(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<Array2<f64>, TrainError> {
    if weights.len() != design.nrows() {
        return Err(TrainError::WeightLength {
            found: weights.len(),
            rows: design.nrows(),
        });
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(TrainError::BadWeight { index });
    }
    fit_ridge_impl(design, targets, Some(weights), lambda)
}

fn fit_ridge_impl(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    weights: Option<ArrayView1<'_, f64>>,
    lambda: f64,
) -> Result<Array2<f64>, TrainError> {
    validate_problem(design, targets, lambda)?;
    let d = design.ncols();

    // Weighted rows are folded in by scaling both sides with sqrt(w).
    let (gram, rhs) = match weights {
        None => (design.t().dot(&design), design.t().dot(&targets)),
        Some(w) => {
            let mut xs = design.to_owned();
            let mut ts = targets.to_owned();
            for (r, &wr) in w.iter().enumerate() {
                let s = wr.sqrt();
                xs.row_mut(r).mapv_inplace(|v| v * s);
                ts.row_mut(r).mapv_inplace(|v| v * s);
            }
            (xs.t().dot(&xs), xs.t().dot(&ts))
        }
    };
    let mut gram = gram;
    for i in 0..d {
        gram[[i, i]] += lambda;
    }

    let factor = cholesky(&gram).ok_or(TrainError::SingularSystem)?;
    let solution = cholesky_solve(&factor, &rhs); // d x n_outputs
    Ok(solution.t().to_owned())
}

/// Smallest penalty for which the lasso solution is entirely zero, computed
/// in the rescaled parameterization: `max_{t,j} |x~_j . t|` over usable
/// (non-degenerate) columns.
pub fn lasso_lambda_max(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<f64, TrainError> {
    validate_problem(design, targets, 1.0)?;
    let mut best = 0.0f64;
    for j in 0..design.ncols() {
        let col = design.column(j);
        let norm = col.dot(&col).sqrt();
        if norm < NEAR_ZERO {
            continue;
        }
        for t in 0..targets.ncols() {
            best = best.max((col.dot(&targets.column(t)) / norm).abs());
        }
    }
    Ok(best)
}

/// Lasso fit by cyclic coordinate descent, one output dimension at a time.
pub fn fit_lasso(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit, TrainError> {
    validate_problem(design, targets, lambda)?;
    let (m, d) = design.dim();
    let n_out = targets.ncols();

    // Rescale columns to unit norm; store them as contiguous rows for the
    // repeated dot products in the descent loop. Degenerate columns are
    // pinned to zero coefficients.
    let mut norms = Array1::zeros(d);
    let mut cols = Array2::zeros((d, m));
    for j in 0..d {
        let col = design.column(j);
        let norm = col.dot(&col).sqrt();
        norms[j] = norm;
        if norm < NEAR_ZERO {
            continue;
        }
        for r in 0..m {
            cols[[j, r]] = design[[r, j]] / norm;
        }
    }

    let mut coefficients = Array2::zeros((n_out, d));
    let mut per_dim = Vec::with_capacity(n_out);
    for t in 0..n_out {
        let mut w = Array1::<f64>::zeros(d);
        let mut residual = targets.column(t).to_owned();
        let mut trace = Vec::new();
        let mut converged = false;
        let mut sweeps = 0;
        for _ in 0..opts.max_sweeps {
            sweeps += 1;
            let mut max_delta = 0.0f64;
            for j in 0..d {
                if norms[j] < NEAR_ZERO {
                    continue;
                }
                let xj = cols.row(j);
                // With unit-norm columns the exact coordinate minimizer is a
                // soft-thresholded correlation with the partial residual.
                let rho = xj.dot(&residual) + w[j];
                let updated = soft_threshold(rho, lambda);
                let delta = updated - w[j];
                if delta != 0.0 {
                    residual.scaled_add(-delta, &xj);
                    w[j] = updated;
                }
                max_delta = max_delta.max(delta.abs());
            }
            let objective =
                0.5 * residual.dot(&residual) + lambda * w.iter().map(|v| v.abs()).sum::<f64>();
            if !objective.is_finite() {
                return Err(TrainError::NonFiniteResult);
            }
            trace.push(objective);
            if max_delta <= opts.tol {
                converged = true;
                break;
            }
        }
        for j in 0..d {
            if norms[j] >= NEAR_ZERO {
                coefficients[[t, j]] = w[j] / norms[j];
            }
        }
        per_dim.push(LassoDimStats {
            sweeps,
            converged,
            objective_trace: trace,
        });
    }
    Ok(LassoFit {
        coefficients,
        per_dim,
    })
}

/// Picks a penalty weight from `grid` by k-fold cross-validation.
///
/// Rows are shuffled once with a ChaCha stream seeded from `seed`, then cut
/// into `folds` contiguous slices, so the split is deterministic for a given
/// seed. The score is the mean over folds of the per-element validation MSE;
/// exact ties are broken toward the larger penalty. Grid points whose fold
/// fits are singular are skipped (scored as `inf`); if every point is
/// skipped the whole sweep fails.
pub fn cross_validate(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    weights: Option<ArrayView1<'_, f64>>,
    grid: &[f64],
    folds: usize,
    penalty: Penalty,
    seed: u64,
    opts: &LassoOptions,
) -> Result<CvReport, TrainError> {
    let m = design.nrows();
    if grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    if folds < 2 {
        return Err(TrainError::BadFolds { folds });
    }
    if m < folds {
        return Err(TrainError::TooFewRows { rows: m, folds });
    }
    if let Some(w) = weights {
        if w.len() != m {
            return Err(TrainError::WeightLength {
                found: w.len(),
                rows: m,
            });
        }
    }

    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let bounds: Vec<usize> = (0..=folds).map(|f| f * m / folds).collect();

    let mut fold_mse = vec![Vec::with_capacity(folds); grid.len()];
    let mut mean_mse = vec![0.0f64; grid.len()];
    for f in 0..folds {
        let valid_idx = &order[bounds[f]..bounds[f + 1]];
        let train_idx: Vec<usize> = order[..bounds[f]]
            .iter()
            .chain(&order[bounds[f + 1]..])
            .copied()
            .collect();
        let train_x = design.select(Axis(0), &train_idx);
        let train_t = targets.select(Axis(0), &train_idx);
        let train_w = weights.map(|w| w.select(Axis(0), &train_idx));
        let valid_x = design.select(Axis(0), valid_idx);
        let valid_t = targets.select(Axis(0), valid_idx);

        for (g, &lambda) in grid.iter().enumerate() {
            let fit = match (penalty, &train_w) {
                (Penalty::L2, None) => fit_ridge(train_x.view(), train_t.view(), lambda),
                (Penalty::L2, Some(w)) => {
                    fit_ridge_weighted(train_x.view(), train_t.view(), w.view(), lambda)
                }
                // The lasso path ignores weights; weighted training is an
                // l2-only extension.
                (Penalty::L1, _) => fit_lasso(train_x.view(), train_t.view(), lambda, opts)
                    .map(|f| f.coefficients),
            };
            let mse = match fit {
                Ok(w) => {
                    let diff = &valid_x.dot(&w.t()) - &valid_t;
                    diff.iter().map(|v| v * v).sum::<f64>()
                        / (valid_t.nrows() * valid_t.ncols()) as f64
                }
                Err(TrainError::SingularSystem) => f64::INFINITY,
                Err(other) => return Err(other),
            };
            fold_mse[g].push(mse);
        }
    }
    for g in 0..grid.len() {
        mean_mse[g] = fold_mse[g].iter().sum::<f64>() / folds as f64;
    }

    let chosen_index = select_best(grid, &mean_mse);
    if mean_mse[chosen_index].is_infinite() {
        return Err(TrainError::SingularSystem);
    }
    Ok(CvReport {
        penalty,
        folds,
        seed,
        grid: grid.to_vec(),
        mean_mse,
        fold_mse,
        chosen_lambda: grid[chosen_index],
        chosen_index,
    })
}

/// Index of the best grid point: lowest mean MSE, exact ties broken toward
/// the larger penalty.
fn select_best(grid: &[f64], mean_mse: &[f64]) -> usize {
    let mut best = 0;
    for g in 1..grid.len() {
        let better = mean_mse[g] < mean_mse[best]
            || (mean_mse[g] == mean_mse[best] && grid[g] > grid[best]);
        if better {
            best = g;
        }
    }
    best
}

fn validate_problem(
    design: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    lambda: f64,
) -> Result<(), TrainError> {
    if design.nrows() == 0 || design.ncols() == 0 || targets.ncols() == 0 {
        return Err(TrainError::EmptyProblem);
    }
    if design.nrows() != targets.nrows() {
        return Err(TrainError::RowMismatch {
            design: design.nrows(),
            targets: targets.nrows(),
        });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(TrainError::BadLambda(lambda));
    }
    if design.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteData);
    }
    Ok(())
}

fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
/// or `None` when a pivot falls below the singularity threshold.
fn cholesky(gram: &Array2<f64>) -> Option<Array2<f64>> {
    let d = gram.nrows();
    let scale = gram
        .diag()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut factor = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut sum = gram[[i, j]];
            for k in 0..j {
                sum -= factor[[i, k]] * factor[[j, k]];
            }
            if i == j {
                if sum <= scale * SINGULAR_PIVOT {
                    return None;
                }
                factor[[i, i]] = sum.sqrt();
            } else {
                factor[[i, j]] = sum / factor[[j, j]];
            }
        }
    }
    Some(factor)
}

/// Solves `L L^T X = B` for `X` given the lower factor `L`.
fn cholesky_solve(factor: &Array2<f64>, rhs: &Array2<f64>) -> Array2<f64> {
    let d = factor.nrows();
    let n = rhs.ncols();
    let mut out = rhs.clone();
    for c in 0..n {
        // Forward substitution: L u = b.
        for i in 0..d {
            let mut sum = out[[i, c]];
            for k in 0..i {
                sum -= factor[[i, k]] * out[[k, c]];
            }
            out[[i, c]] = sum / factor[[i, i]];
        }
        // Back substitution: L^T x = u.
        for i in (0..d).rev() {
            let mut sum = out[[i, c]];
            for k in (i + 1)..d {
                sum -= factor[[k, i]] * out[[k, c]];
            }
            out[[i, c]] = sum / factor[[i, i]];
        }
    }
    out
}
