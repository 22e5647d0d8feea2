//! Statistical shape model over process-model output shapes.
//!
//! A shape is the flattened response of one model on the shared grid,
//! landmark-major: every landmark of output feature 0, then feature 1, and so
//! on. The deformable model is the mean shape plus the leading principal
//! directions of the centered shape stack.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Grid;
use crate::error::{HpmError, Result};
use crate::linalg::thin_svd;
use crate::regressors::{predict, FittedModel};
use crate::serde_matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    #[serde(with = "serde_matrix::vector")]
    pub values: DVector<f64>,
    pub n_landmarks: usize,
    pub n_features: usize,
    pub source_id: Option<u32>,
    pub grid_fingerprint: u64,
}

impl Shape {
    pub fn new(
        values: DVector<f64>,
        n_landmarks: usize,
        n_features: usize,
        source_id: Option<u32>,
        grid_fingerprint: u64,
    ) -> Result<Self> {
        if values.len() != n_landmarks * n_features {
            return Err(HpmError::IncompatibleShapes(format!(
                "{} values for {n_landmarks} landmarks x {n_features} features",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HpmError::IncompatibleShapes(
                "shape has non-finite values".into(),
            ));
        }
        Ok(Shape {
            values,
            n_landmarks,
            n_features,
            source_id,
            grid_fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reshape into `n_landmarks x n_features` (one row per grid point).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_landmarks, self.n_features, self.values.as_slice())
    }

    pub fn check_comparable(&self, other: &Shape) -> Result<()> {
        if self.n_landmarks != other.n_landmarks
            || self.n_features != other.n_features
            || self.grid_fingerprint != other.grid_fingerprint
        {
            return Err(HpmError::IncompatibleShapes(format!(
                "{}x{} (grid {:016x}) vs {}x{} (grid {:016x})",
                self.n_landmarks,
                self.n_features,
                self.grid_fingerprint,
                other.n_landmarks,
                other.n_features,
                other.grid_fingerprint
            )));
        }
        Ok(())
    }
}

/// Coordinates of a shape in the deformable basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableCoordinates {
    #[serde(with = "serde_matrix::vector")]
    pub b: DVector<f64>,
    pub source_id: Option<u32>,
}

impl DeformableCoordinates {
    pub fn new(b: DVector<f64>) -> Self {
        DeformableCoordinates { b, source_id: None }
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentRule {
    Fixed(usize),
    /// Smallest count whose cumulative explained variance ratio reaches the threshold.
    VarianceThreshold(f64),
}

impl Default for ComponentRule {
    fn default() -> Self {
        ComponentRule::VarianceThreshold(0.95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformableModel {
    #[serde(with = "serde_matrix::vector")]
    pub mean: DVector<f64>,
    /// Orthonormal columns, `(k·n) x n_components`.
    #[serde(with = "serde_matrix::matrix")]
    pub basis: DMatrix<f64>,
    /// Variances (divisor m-1) of every non-null principal direction, descending.
    pub variances: Vec<f64>,
    pub total_variance: f64,
    pub n_landmarks: usize,
    pub n_features: usize,
    pub n_shapes: usize,
    pub grid_fingerprint: u64,
}

impl DeformableModel {
    pub fn n_components(&self) -> usize {
        self.basis.ncols()
    }

    /// Number of non-null principal directions in the training stack.
    pub fn rank(&self) -> usize {
        self.variances.len()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 1.0;
        }
        self.variances[..self.n_components()].iter().sum::<f64>() / self.total_variance
    }

    pub fn mean_shape(&self) -> Shape {
        Shape {
            values: self.mean.clone(),
            n_landmarks: self.n_landmarks,
            n_features: self.n_features,
            source_id: None,
            grid_fingerprint: self.grid_fingerprint,
        }
    }

    /// Same model restricted to its leading `c` components.
    pub fn truncated(&self, c: usize) -> DeformableModel {
        let c = c.min(self.n_components());
        DeformableModel {
            basis: self.basis.columns(0, c).into_owned(),
            ..self.clone()
        }
    }

    fn check_shape(&self, shape: &Shape) -> Result<()> {
        if shape.n_landmarks != self.n_landmarks
            || shape.n_features != self.n_features
            || shape.grid_fingerprint != self.grid_fingerprint
        {
            return Err(HpmError::IncompatibleShapes(format!(
                "shape {}x{} (grid {:016x}) does not match model {}x{} (grid {:016x})",
                shape.n_landmarks,
                shape.n_features,
                shape.grid_fingerprint,
                self.n_landmarks,
                self.n_features,
                self.grid_fingerprint
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluate a model on every grid point and flatten landmark-major.
pub fn sample_shape(model: &FittedModel, grid: &Grid) -> Result<Shape> {
    let pred = predict(model, &grid.points)?;
    // Column-major storage is exactly landmark-major order.
    Shape::new(
        DVector::from_column_slice(pred.as_slice()),
        grid.n_points(),
        model.output_dim,
        None,
        grid.fingerprint(),
    )
}

fn check_stack(shapes: &[Shape]) -> Result<()> {
    if shapes.len() < 2 {
        return Err(HpmError::InvalidArgument(format!(
            "a deformable model needs at least 2 shapes, got {}",
            shapes.len()
        )));
    }
    shapes
        .iter()
        .skip(1)
        .try_for_each(|s| shapes[0].check_comparable(s))
}

fn mean_shape(shapes: &[Shape]) -> DVector<f64> {
    let mut mean = DVector::zeros(shapes[0].len());
    for s in shapes {
        mean += &s.values;
    }
    mean / shapes.len() as f64
}

/// Build the point distribution model from the SVD of the centered stack.
pub fn fit_deformable_model(shapes: &[Shape], rule: ComponentRule) -> Result<DeformableModel> {
    check_stack(shapes)?;
    let m = shapes.len();
    let p = shapes[0].len();
    let mean = mean_shape(shapes);
    let mut centered = DMatrix::zeros(m, p);
    for (i, s) in shapes.iter().enumerate() {
        centered
            .row_mut(i)
            .copy_from(&(&s.values - &mean).transpose());
    }
    // Spread at rounding level of the mean is treated as no variation at all.
    let noise_floor = 4.0 * f64::EPSILON * mean.amax();
    let total_variance = if centered.amax() <= noise_floor {
        0.0
    } else {
        centered.norm_squared() / (m - 1) as f64
    };

    let mut basis_cols: Vec<DVector<f64>> = Vec::new();
    let mut variances = Vec::new();
    if total_variance > 0.0 {
        let svd = thin_svd(&centered)?;
        let tol = svd.rank_tolerance(m, p);
        for (i, &sigma) in svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > tol)
        {
            let mut col: DVector<f64> = svd.v.column(i).into_owned();
            // Largest-magnitude entry nonnegative; first index wins ties.
            let pivot = col.iamax();
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
            basis_cols.push(col);
            variances.push(sigma * sigma / (m - 1) as f64);
        }
    }

    let rank = variances.len();
    let keep = match rule {
        ComponentRule::Fixed(c) => c.min(rank),
        ComponentRule::VarianceThreshold(tau) => {
            if !(0.0..=1.0).contains(&tau) {
                return Err(HpmError::InvalidArgument(format!(
                    "variance threshold must lie in [0, 1], got {tau}"
                )));
            }
            let mut cum = 0.0;
            let mut c = 0;
            while c < rank && cum < tau * total_variance * (1.0 - 1e-12) {
                cum += variances[c];
                c += 1;
            }
            c
        }
    };
    let basis = if keep == 0 {
        DMatrix::zeros(p, 0)
    } else {
        DMatrix::from_columns(&basis_cols[..keep])
    };
    Ok(DeformableModel {
        mean,
        basis,
        variances,
        total_variance,
        n_landmarks: shapes[0].n_landmarks,
        n_features: shapes[0].n_features,
        n_shapes: m,
        grid_fingerprint: shapes[0].grid_fingerprint,
    })
}

/// `b = basisᵀ (s - mean)`.
pub fn project(model: &DeformableModel, shape: &Shape) -> Result<DeformableCoordinates> {
    model.check_shape(shape)?;
    Ok(DeformableCoordinates {
        b: model.basis.tr_mul(&(&shape.values - &model.mean)),
        source_id: shape.source_id,
    })
}

/// `s = mean + basis · b`.
pub fn reconstruct(model: &DeformableModel, coords: &DeformableCoordinates) -> Result<Shape> {
    if coords.len() != model.n_components() {
        return Err(HpmError::DimensionMismatch {
            expected: model.n_components(),
            found: coords.len(),
            context: "deformable coordinates",
        });
    }
    Ok(Shape {
        values: &model.mean + &model.basis * &coords.b,
        n_landmarks: model.n_landmarks,
        n_features: model.n_features,
        source_id: coords.source_id,
        grid_fingerprint: model.grid_fingerprint,
    })
}

/// Mean reconstruction MSE of the training shapes for 1..=min(c_max, rank) components.
pub fn component_sweep(shapes: &[Shape], c_max: usize) -> Result<Vec<(usize, f64)>> {
    if c_max == 0 {
        return Err(HpmError::InvalidArgument("c_max must be >= 1".into()));
    }
    let full = fit_deformable_model(shapes, ComponentRule::Fixed(c_max))?;
    let p = shapes[0].len() as f64;
    (1..=full.n_components())
        .map(|c| {
            let dm = full.truncated(c);
            let mut total = 0.0;
            for s in shapes {
                let r = reconstruct(&dm, &project(&dm, s)?)?;
                total += (&s.values - &r.values).norm_squared() / p;
            }
            Ok((c, total / shapes.len() as f64))
        })
        .collect()
}

/// Average per-entry sample variance (divisor m-1) of a shape set.
pub fn mean_centered_variance(shapes: &[Shape]) -> Result<f64> {
    check_stack(shapes)?;
    let mean = mean_shape(shapes);
    let ss: f64 = shapes
        .iter()
        .map(|s| (&s.values - &mean).norm_squared())
        .sum();
    Ok(ss / ((shapes.len() - 1) * shapes[0].len()) as f64)
}
