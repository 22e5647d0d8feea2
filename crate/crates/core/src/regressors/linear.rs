//! Ordinary least squares and ridge regression on polynomial features, both
//! solved through an SVD of the design matrix.

use nalgebra::DMatrix;

use super::poly::{check_degree, design_matrix};
use super::{check_training_data, mse, Family, FittedModel, ModelParams, Underdetermined};
use crate::error::{HpmError, Result};
use crate::linalg::thin_svd;

/// Least-squares solve of `a * x = b` via SVD.
pub(crate) fn solve_least_squares(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    policy: Underdetermined,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if policy == Underdetermined::Reject && rows < cols {
        return Err(HpmError::Underdetermined {
            rows,
            features: cols,
        });
    }
    let svd = thin_svd(a)?;
    let tol = svd.rank_tolerance(rows, cols);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if policy == Underdetermined::Reject && rank < cols {
        return Err(HpmError::RankDeficient {
            rank,
            features: cols,
        });
    }
    Ok(svd.solve(b, tol))
}

fn polynomial_model(
    family: Family,
    penalty: f64,
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
    weights: DMatrix<f64>,
) -> Result<FittedModel> {
    let fitted = design_matrix(inputs, degree)? * &weights;
    Ok(FittedModel {
        family,
        penalty,
        input_dim: inputs.ncols(),
        output_dim: outputs.ncols(),
        training_mse: mse(&fitted, outputs),
        params: ModelParams::Polynomial { degree, weights },
    })
}

/// Ordinary least squares on polynomial features of the given degree.
pub fn fit_ols(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
) -> Result<FittedModel> {
    check_training_data(inputs, outputs)?;
    fit_least_squares(inputs, outputs, degree, Underdetermined::Reject)
}

pub(crate) fn fit_least_squares(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
    policy: Underdetermined,
) -> Result<FittedModel> {
    check_degree(degree)?;
    let phi = design_matrix(inputs, degree)?;
    let weights = solve_least_squares(&phi, outputs, policy)?;
    polynomial_model(Family::LeastSquares, 0.0, inputs, outputs, degree, weights)
}

/// Ridge regression minimizing `|y - Φw|²/n + penalty·|w_{-0}|²`; the
/// intercept is not penalized.
pub fn fit_ridge(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
    penalty: f64,
) -> Result<FittedModel> {
    check_training_data(inputs, outputs)?;
    fit_ridge_with(inputs, outputs, degree, penalty, Underdetermined::Reject)
}

pub(crate) fn fit_ridge_with(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
    penalty: f64,
    policy: Underdetermined,
) -> Result<FittedModel> {
    check_degree(degree)?;
    if !(penalty >= 0.0) || !penalty.is_finite() {
        return Err(HpmError::InvalidArgument(format!(
            "ridge penalty must be finite and >= 0, got {penalty}"
        )));
    }
    let phi = design_matrix(inputs, degree)?;
    let n = phi.nrows();
    let p = phi.ncols() - 1;
    if policy == Underdetermined::Reject && penalty == 0.0 && n < phi.ncols() {
        return Err(HpmError::Underdetermined {
            rows: n,
            features: phi.ncols(),
        });
    }

    // Centering removes the intercept from the penalized system.
    let features = phi.columns(1, p);
    let feature_mean = features.row_mean();
    let target_mean = outputs.row_mean();
    let mut centered = features.into_owned();
    for mut row in centered.row_iter_mut() {
        row -= &feature_mean;
    }
    let mut centered_y = outputs.clone();
    for mut row in centered_y.row_iter_mut() {
        row -= &target_mean;
    }

    let slopes = if penalty > 0.0 {
        let shrink = (n as f64 * penalty).sqrt();
        let mut a = DMatrix::zeros(n + p, p);
        a.rows_mut(0, n).copy_from(&centered);
        a.rows_mut(n, p).fill_diagonal(shrink);
        let mut b = DMatrix::zeros(n + p, outputs.ncols());
        b.rows_mut(0, n).copy_from(&centered_y);
        solve_least_squares(&a, &b, Underdetermined::MinNorm)?
    } else {
        match solve_least_squares(&centered, &centered_y, policy) {
            Err(HpmError::RankDeficient { rank, .. }) => {
                return Err(HpmError::RankDeficient {
                    rank: rank + 1,
                    features: p + 1,
                })
            }
            other => other?,
        }
    };

    let mut weights = DMatrix::zeros(p + 1, outputs.ncols());
    weights.rows_mut(1, p).copy_from(&slopes);
    let intercept = &target_mean - &feature_mean * &slopes;
    weights.row_mut(0).copy_from(&intercept);
    polynomial_model(Family::Ridge, penalty, inputs, outputs, degree, weights)
}
