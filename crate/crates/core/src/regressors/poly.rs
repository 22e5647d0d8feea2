use nalgebra::DMatrix;

use crate::error::{HpmError, Result};

/// Monomials of total degree <= `degree` over `dim` variables, each given as
/// a non-decreasing list of variable indices. Graded, then lexicographic:
/// `1, x0, x1, x0², x0·x1, x1², ...`.
pub(crate) fn monomials(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..degree {
        let mut next = Vec::new();
        for m in &frontier {
            let start = m.last().copied().unwrap_or(0);
            for v in start..dim {
                let mut grown = m.clone();
                grown.push(v);
                next.push(grown);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub(crate) fn check_degree(degree: usize) -> Result<()> {
    if (1..=3).contains(&degree) {
        Ok(())
    } else {
        Err(HpmError::InvalidArgument(format!(
            "unsupported polynomial degree {degree} (expected 1, 2 or 3)"
        )))
    }
}

/// Number of polynomial features (intercept included).
pub fn n_poly_features(dim: usize, degree: usize) -> usize {
    // C(dim + degree, degree)
    (1..=degree).fold(1, |acc, k| acc * (dim + k) / k)
}

/// All monomials of `x` with total degree <= `degree`, leading constant 1.
pub fn poly_features(x: &[f64], degree: usize) -> Result<Vec<f64>> {
    check_degree(degree)?;
    Ok(monomials(x.len(), degree)
        .iter()
        .map(|m| m.iter().map(|&i| x[i]).product())
        .collect())
}

/// Row-wise polynomial expansion.
pub fn design_matrix(inputs: &DMatrix<f64>, degree: usize) -> Result<DMatrix<f64>> {
    check_degree(degree)?;
    let terms = monomials(inputs.ncols(), degree);
    Ok(DMatrix::from_fn(inputs.nrows(), terms.len(), |r, c| {
        terms[c].iter().map(|&i| inputs[(r, i)]).product()
    }))
}
