//! Thin SVD backed by faer. nalgebra's own SVD occasionally converges to
//! wrong singular values on rank-deficient inputs, which centered shape
//! stacks always are.

use nalgebra::DMatrix;

use crate::error::{HpmError, Result};

pub(crate) struct ThinSvd {
    /// `m x r`
    pub u: DMatrix<f64>,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// `n x r`
    pub v: DMatrix<f64>,
}

pub(crate) fn thin_svd(a: &DMatrix<f64>) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    let f = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = f
        .thin_svd()
        .map_err(|e| HpmError::InvalidArgument(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let r = s.nrows();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
    Ok(ThinSvd {
        u: DMatrix::from_fn(m, r, |i, k| u[(i, order[k])]),
        singular_values: order.iter().map(|&k| s[k]).collect(),
        v: DMatrix::from_fn(n, r, |j, k| v[(j, order[k])]),
    })
}

impl ThinSvd {
    /// Numerical rank under the usual `sigma_max * max(m, n) * eps` cutoff.
    pub fn rank_tolerance(&self, m: usize, n: usize) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0) * m.max(n) as f64 * f64::EPSILON
    }

    /// Minimum-norm least-squares solution of `a x = b` from this factorization.
    pub fn solve(&self, b: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
        let keep = self
            .singular_values
            .iter()
            .take_while(|&&s| s > tol)
            .count();
        let mut utb = self.u.columns(0, keep).tr_mul(b);
        for (k, mut row) in utb.row_iter_mut().enumerate() {
            row /= self.singular_values[k];
        }
        self.v.columns(0, keep) * utb
    }
}
