//! Supervised regressors used for source models, hyper-models and generated
//! target models.
//!
//! Polynomial techniques share one parameter block: a weight matrix with one
//! row per monomial (intercept first) and one column per output. The MLP keeps
//! its own layer tensors together with the min-max scaling it was trained in.

mod lasso;
mod linear;
pub mod mlp;
mod poly;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HpmError, Result};
use crate::serde_matrix;

pub use lasso::{fit_lasso, lasso_lambda_max, LASSO_MAX_SWEEPS, LASSO_TOLERANCE};
pub use linear::{fit_ols, fit_ridge};
pub use mlp::{fit_mlp, Activation, MlpConfig, MlpParams};
pub use poly::{design_matrix, n_poly_features, poly_features};

/// The named modelling techniques.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Technique {
    Lin,
    Pol2,
    Pol3,
    Lasso2,
    Lasso3,
    Ridge2,
    Ridge3,
    Mlp,
}

impl Technique {
    /// The seven hyper-model techniques, in reporting order.
    pub const HYPER_SET: [Technique; 7] = [
        Technique::Lin,
        Technique::Pol2,
        Technique::Pol3,
        Technique::Lasso2,
        Technique::Lasso3,
        Technique::Ridge2,
        Technique::Ridge3,
    ];

    pub fn family(self) -> Family {
        match self {
            Technique::Lin | Technique::Pol2 | Technique::Pol3 => Family::LeastSquares,
            Technique::Lasso2 | Technique::Lasso3 => Family::Lasso,
            Technique::Ridge2 | Technique::Ridge3 => Family::Ridge,
            Technique::Mlp => Family::Mlp,
        }
    }

    /// Polynomial degree; `None` for the MLP.
    pub fn degree(self) -> Option<usize> {
        match self {
            Technique::Lin => Some(1),
            Technique::Pol2 | Technique::Lasso2 | Technique::Ridge2 => Some(2),
            Technique::Pol3 | Technique::Lasso3 | Technique::Ridge3 => Some(3),
            Technique::Mlp => None,
        }
    }

    pub fn is_penalized(self) -> bool {
        matches!(self.family(), Family::Lasso | Family::Ridge)
    }

    pub fn name(self) -> &'static str {
        match self {
            Technique::Lin => "LIN",
            Technique::Pol2 => "POL2",
            Technique::Pol3 => "POL3",
            Technique::Lasso2 => "LASSO2",
            Technique::Lasso3 => "LASSO3",
            Technique::Ridge2 => "RIDGE2",
            Technique::Ridge3 => "RIDGE3",
            Technique::Mlp => "MLP",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = HpmError;

    fn from_str(s: &str) -> Result<Self> {
        Technique::HYPER_SET
            .iter()
            .chain(std::iter::once(&Technique::Mlp))
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| HpmError::InvalidArgument(format!("unknown technique '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LeastSquares,
    Ridge,
    Lasso,
    Mlp,
}

/// What to do when a least-squares system has fewer independent rows than
/// features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Underdetermined {
    /// Fail with [`HpmError::Underdetermined`] or [`HpmError::RankDeficient`].
    #[default]
    Reject,
    /// Return the minimum-norm least-squares solution.
    MinNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub technique: Technique,
    /// Regularization strength; ignored for LIN/POL/MLP.
    #[serde(default)]
    pub penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpConfig>,
    #[serde(default)]
    pub underdetermined: Underdetermined,
}

impl RegressorSpec {
    pub fn new(technique: Technique) -> Self {
        RegressorSpec {
            technique,
            penalty: 0.0,
            mlp: None,
            underdetermined: Underdetermined::Reject,
        }
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_mlp(mut self, config: MlpConfig) -> Self {
        self.mlp = Some(config);
        self
    }

    pub fn with_underdetermined(mut self, policy: Underdetermined) -> Self {
        self.underdetermined = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.technique.is_penalized() && !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(HpmError::InvalidArgument(format!(
                "{} needs a positive penalty, got {}",
                self.technique, self.penalty
            )));
        }
        Ok(())
    }
}

/// Parameters of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Polynomial {
        degree: usize,
        /// `n_features x output_dim`, intercept row first.
        #[serde(with = "serde_matrix::matrix")]
        weights: DMatrix<f64>,
    },
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: Family,
    pub penalty: f64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub params: ModelParams,
    /// Mean squared training residual in original output units.
    pub training_mse: f64,
}

impl FittedModel {
    /// Named technique this model corresponds to, if any.
    pub fn technique(&self) -> Option<Technique> {
        let degree = match &self.params {
            ModelParams::Polynomial { degree, .. } => *degree,
            ModelParams::Mlp(_) => return Some(Technique::Mlp),
        };
        Technique::HYPER_SET
            .into_iter()
            .find(|t| t.family() == self.family && t.degree() == Some(degree))
    }

    /// Polynomial weight matrix, when the model is polynomial.
    pub fn weights(&self) -> Option<&DMatrix<f64>> {
        match &self.params {
            ModelParams::Polynomial { weights, .. } => Some(weights),
            ModelParams::Mlp(_) => None,
        }
    }

    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        predict(self, inputs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Row-wise evaluation of a fitted model.
pub fn predict(model: &FittedModel, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if inputs.ncols() != model.input_dim {
        return Err(HpmError::DimensionMismatch {
            expected: model.input_dim,
            found: inputs.ncols(),
            context: "model input columns",
        });
    }
    match &model.params {
        ModelParams::Polynomial { degree, weights } => {
            Ok(design_matrix(inputs, *degree)? * weights)
        }
        ModelParams::Mlp(p) => Ok(p.predict(inputs)),
    }
}

/// Fit any technique described by `spec`.
pub fn fit(
    spec: &RegressorSpec,
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
) -> Result<FittedModel> {
    spec.validate()?;
    check_training_data(inputs, outputs)?;
    let degree = spec.technique.degree();
    match (spec.technique.family(), degree) {
        (Family::LeastSquares, Some(d)) => {
            linear::fit_least_squares(inputs, outputs, d, spec.underdetermined)
        }
        (Family::Ridge, Some(d)) => {
            linear::fit_ridge_with(inputs, outputs, d, spec.penalty, spec.underdetermined)
        }
        (Family::Lasso, Some(d)) => fit_lasso(inputs, outputs, d, spec.penalty),
        (Family::Mlp, _) => fit_mlp(inputs, outputs, &spec.mlp.clone().unwrap_or_default()),
        _ => unreachable!("polynomial techniques always carry a degree"),
    }
}

pub(crate) fn check_training_data(inputs: &DMatrix<f64>, outputs: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() == 0 {
        return Err(HpmError::NoSamples);
    }
    if inputs.nrows() != outputs.nrows() {
        return Err(HpmError::DimensionMismatch {
            expected: inputs.nrows(),
            found: outputs.nrows(),
            context: "training output rows",
        });
    }
    if inputs.ncols() == 0 || outputs.ncols() == 0 {
        return Err(HpmError::InvalidArgument(
            "training data needs columns".into(),
        ));
    }
    if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
        return Err(HpmError::InvalidArgument(
            "training data has non-finite values".into(),
        ));
    }
    Ok(())
}

pub(crate) fn mse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    (a - b).iter().map(|d| d * d).sum::<f64>() / n
}
