//! Zero-shot regression with hyper-process models.
//!
//! Given regressors trained for a set of source process conditions, the
//! pipeline samples every model on a shared input grid, builds a statistical
//! shape model over the resulting output shapes, links the deformable
//! coordinates to the task descriptors with a hyper-model, and synthesizes a
//! complete regressor for an unseen descriptor without any target data.
//!
//! Module map:
//!
//! * [`dataset`]: descriptors, datasets, full factorial grids, normalization, CSV I/O
//! * [`surrogate`]: analytic deep-drawing stand-in used to produce source data
//! * [`regressors`]: polynomial OLS / ridge / lasso and a small Adagrad MLP
//! * [`ssm`]: shapes, PCA point-distribution model, projection and reconstruction
//! * [`hypermodel`]: descriptor/coordinate mapping, inversion, target model synthesis
//! * [`selection`]: EUC / NORMEUC source ranking
//! * [`harness`]: scenario configuration, sweeps and reports

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod harness;
pub mod hypermodel;
pub mod regressors;
pub mod selection;
pub mod ssm;
pub mod surrogate;

mod linalg;
mod serde_matrix;

pub use dataset::{generate_ffd_grid, normalize_descriptors, Grid, ProcessDataset, TaskDescriptor};
pub use error::{HpmError, Result};
pub use harness::{
    deep_drawing_descriptors, emit_report, run_sweep, run_sweep_with_bank, shape_mse,
    ExperimentReport, ReportFormat, ScenarioConfig, SourceBank, SweepRow, TechniqueSetting,
};
pub use hypermodel::{
    fit_hypermodel, generate_target_model, predict_coords, CoordPrediction, GeneratedModel,
    GridSpec, HpmOptions, HyperDirection, HyperModel, InversionConfig, Provenance,
};
pub use regressors::{
    fit, fit_lasso, fit_mlp, fit_ols, fit_ridge, poly_features, predict, FittedModel, MlpConfig,
    RegressorSpec, Technique,
};
pub use selection::{rank_sources, RankedSource, RankingStrategy};
pub use ssm::{
    component_sweep, fit_deformable_model, project, reconstruct, sample_shape, ComponentRule,
    DeformableCoordinates, DeformableModel, Shape,
};
pub use surrogate::{sample_dataset, SurrogateConfig};
