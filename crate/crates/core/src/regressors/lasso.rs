//! Lasso by cyclic coordinate descent on standardized polynomial features.
//!
//! Objective per output column, in the standardized feature space:
//! `|y - ȳ - Z w|² / (2n) + penalty · |w|₁`. Coefficients are mapped back to
//! the raw monomial scale and the intercept recovered from the means.

use nalgebra::{DMatrix, DVector};

use super::poly::{check_degree, design_matrix};
use super::{check_training_data, mse, Family, FittedModel, ModelParams};
use crate::error::{HpmError, Result};

pub const LASSO_TOLERANCE: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 10_000;

struct Standardized {
    z: DMatrix<f64>,
    mean: DVector<f64>,
    /// Population standard deviation; zero for constant columns.
    scale: DVector<f64>,
}

fn standardize(features: &DMatrix<f64>) -> Standardized {
    let (n, p) = features.shape();
    let mut z = features.clone();
    let mut mean = DVector::zeros(p);
    let mut scale = DVector::zeros(p);
    for j in 0..p {
        let col = features.column(j);
        let mu = col.mean();
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        mean[j] = mu;
        // Columns that are numerically constant carry no signal.
        if sd > 1e-12 * mu.abs().max(1.0) {
            scale[j] = sd;
            z.column_mut(j).iter_mut().for_each(|v| *v = (*v - mu) / sd);
        } else {
            z.column_mut(j).fill(0.0);
        }
    }
    Standardized { z, mean, scale }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn centered_targets(outputs: &DMatrix<f64>) -> (DMatrix<f64>, nalgebra::RowDVector<f64>) {
    let mean = outputs.row_mean();
    let mut centered = outputs.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    (centered, mean)
}

/// Smallest penalty at which every non-intercept coefficient is zero:
/// `max_j |z_jᵀ(y - ȳ)| / n` over standardized features and all outputs.
pub fn lasso_lambda_max(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
) -> Result<f64> {
    check_training_data(inputs, outputs)?;
    check_degree(degree)?;
    let phi = design_matrix(inputs, degree)?;
    let std = standardize(&phi.columns(1, phi.ncols() - 1).into_owned());
    let (yc, _) = centered_targets(outputs);
    let n = inputs.nrows() as f64;
    // Same reduction as the first coordinate-descent step.
    let mut lmax = 0.0f64;
    for out in 0..yc.ncols() {
        let residual = yc.column(out);
        for j in 0..std.z.ncols() {
            lmax = lmax.max((std.z.column(j).dot(&residual) / n).abs());
        }
    }
    Ok(lmax)
}

pub fn fit_lasso(
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    degree: usize,
    penalty: f64,
) -> Result<FittedModel> {
    check_training_data(inputs, outputs)?;
    check_degree(degree)?;
    if !(penalty > 0.0) || !penalty.is_finite() {
        return Err(HpmError::InvalidArgument(format!(
            "lasso penalty must be positive, got {penalty}"
        )));
    }
    let phi = design_matrix(inputs, degree)?;
    let n = phi.nrows();
    let p = phi.ncols() - 1;
    let std = standardize(&phi.columns(1, p).into_owned());
    let (yc, y_mean) = centered_targets(outputs);
    let nf = n as f64;

    let mut weights = DMatrix::zeros(p + 1, outputs.ncols());
    for out in 0..outputs.ncols() {
        let mut w = DVector::<f64>::zeros(p);
        let mut residual: DVector<f64> = yc.column(out).into_owned();
        // Sweeps stop at the tolerance or at the sweep cap, whichever comes first.
        for _ in 0..LASSO_MAX_SWEEPS {
            let mut max_delta = 0.0f64;
            for j in 0..p {
                if std.scale[j] == 0.0 {
                    continue;
                }
                let zj = std.z.column(j);
                // Standardized columns satisfy z_jᵀz_j / n = 1.
                let rho = zj.dot(&residual) / nf + w[j];
                let updated = soft_threshold(rho, penalty);
                let delta = updated - w[j];
                if delta != 0.0 {
                    residual.axpy(-delta, &zj, 1.0);
                    w[j] = updated;
                }
                max_delta = max_delta.max(delta.abs());
            }
            if max_delta < LASSO_TOLERANCE {
                break;
            }
        }
        let mut intercept = y_mean[out];
        for j in 0..p {
            let raw = if std.scale[j] == 0.0 {
                0.0
            } else {
                w[j] / std.scale[j]
            };
            weights[(j + 1, out)] = raw;
            intercept -= std.mean[j] * raw;
        }
        weights[(0, out)] = intercept;
    }

    let fitted = &phi * &weights;
    Ok(FittedModel {
        family: Family::Lasso,
        penalty,
        input_dim: inputs.ncols(),
        output_dim: outputs.ncols(),
        training_mse: mse(&fitted, outputs),
        params: ModelParams::Polynomial { degree, weights },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressors::fit_ols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, 1, |r, _| {
            1.0 + 2.0 * x[(r, 0)] - (0..d).map(|j| x[(r, j)]).sum::<f64>() * 0.5
                + 0.1 * rng.random_range(-1.0..1.0)
        });
        (x, y)
    }

    #[test]
    fn full_sparsity_above_lambda_max() {
        let (x, y) = data(30, 2, 1);
        for degree in 1..=3 {
            let lmax = lasso_lambda_max(&x, &y, degree).unwrap();
            for scale in [1.0, 1.5, 10.0] {
                let m = fit_lasso(&x, &y, degree, lmax * scale).unwrap();
                let w = m.weights().unwrap();
                assert!(w.rows(1, w.nrows() - 1).iter().all(|&v| v == 0.0));
                assert!((w[(0, 0)] - y.mean()).abs() < 1e-12);
            }
            let m = fit_lasso(&x, &y, degree, lmax * 0.9).unwrap();
            let w = m.weights().unwrap();
            assert!(w.rows(1, w.nrows() - 1).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn univariate_matches_soft_threshold_closed_form() {
        let (x, y) = data(25, 1, 2);
        let n = 25.0;
        // Hand route: standardize the single feature, soft-threshold the
        // correlation, map back.
        let xm = x.mean();
        let sd = (x.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / n).sqrt();
        let ym = y.mean();
        let corr: f64 = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - xm) / sd * (b - ym))
            .sum::<f64>()
            / n;
        for penalty in [0.01, 0.1, 0.3] {
            let w_std = soft_threshold(corr, penalty);
            let slope = w_std / sd;
            let intercept = ym - xm * slope;
            let m = fit_lasso(&x, &y, 1, penalty).unwrap();
            let w = m.weights().unwrap();
            assert!((w[(1, 0)] - slope).abs() < 1e-8);
            assert!((w[(0, 0)] - intercept).abs() < 1e-8);
        }
    }

    #[test]
    fn vanishing_penalty_approaches_ols() {
        let (x, y) = data(40, 2, 3);
        let ols = fit_ols(&x, &y, 1).unwrap();
        let lasso = fit_lasso(&x, &y, 1, 1e-8).unwrap();
        assert!((ols.weights().unwrap() - lasso.weights().unwrap()).amax() < 1e-4);
    }

    #[test]
    fn rejects_nonpositive_penalty() {
        let (x, y) = data(10, 1, 4);
        assert!(fit_lasso(&x, &y, 1, 0.0).is_err());
    }

    #[test]
    fn constant_feature_gets_zero_weight() {
        let (mut x, y) = data(20, 2, 5);
        x.column_mut(1).fill(3.0);
        let m = fit_lasso(&x, &y, 1, 1e-3).unwrap();
        assert_eq!(m.weights().unwrap()[(2, 0)], 0.0);
    }

    #[test]
    fn handles_more_features_than_rows() {
        let (x, y) = data(5, 3, 6);
        let m = fit_lasso(&x, &y, 3, 1e-2).unwrap();
        assert!(m.training_mse.is_finite());
    }

    #[test]
    fn row_permutation_keeps_solution() {
        let (x, y) = data(20, 2, 7);
        let perm: Vec<usize> = (0..20).rev().collect();
        let a = fit_lasso(&x, &y, 2, 1e-2).unwrap();
        let b = fit_lasso(&x.select_rows(&perm), &y.select_rows(&perm), 2, 1e-2).unwrap();
        assert!((a.weights().unwrap() - b.weights().unwrap()).amax() < 1e-6);
    }
}
