//! Hyper-models linking deformable coordinates to task descriptors, and the
//! end-to-end synthesis of a process model for an unseen descriptor.
//!
//! Two arrangements are supported:
//!
//! * [`HyperDirection::Direct`] fits `descriptor -> b` and evaluates it at the
//!   target descriptor.
//! * [`HyperDirection::Inverse`] fits `b -> descriptor` and recovers `b` for the
//!   target by bounded derivative-free minimization of the descriptor misfit.
//!
//! Descriptors are min-max scaled over the training set before fitting, so
//! penalties act on comparable monomials. A dimension that is constant across
//! the training descriptors is only shifted; its monomials are then identically
//! zero during training and carry no weight.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_ffd_grid, Grid, TaskDescriptor};
use crate::error::{HpmError, Result};
use crate::regressors::{fit, predict, FittedModel, RegressorSpec, Technique};
use crate::ssm::{
    fit_deformable_model, project, reconstruct, sample_shape, ComponentRule, DeformableCoordinates,
    Shape,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperDirection {
    /// `descriptor -> b`
    #[default]
    Direct,
    /// `b -> descriptor`, inverted numerically.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    /// Fraction of the training coordinate range added on each side of the search box.
    pub bounds_margin: f64,
    pub restarts: usize,
    /// Maximum number of polling passes per start.
    pub max_iters: usize,
    /// Search stops once every step is below this.
    pub tol: f64,
    pub seed: u64,
    /// Residuals above this flag the result as poorly invertible.
    pub warn_residual: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            bounds_margin: 0.25,
            restarts: 16,
            max_iters: 2000,
            tol: 1e-10,
            seed: 0,
            warn_residual: 1e-3,
        }
    }
}

/// Affine descriptor map applied before the hyper-model sees descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorScaling {
    pub offset: Vec<f64>,
    pub range: Vec<f64>,
}

impl DescriptorScaling {
    pub fn identity(dim: usize) -> Self {
        DescriptorScaling {
            offset: vec![0.0; dim],
            range: vec![1.0; dim],
        }
    }

    pub fn min_max(descriptors: &[TaskDescriptor]) -> Self {
        let dim = descriptors[0].dim();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for d in descriptors {
            for (j, &v) in d.values().iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let range = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| if h > l { h - l } else { 1.0 })
            .collect();
        DescriptorScaling { offset: lo, range }
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.offset.iter().zip(&self.range))
            .map(|(v, (o, r))| (v - o) / r)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperModel {
    pub direction: HyperDirection,
    pub fitted: FittedModel,
    pub descriptor_dim: usize,
    pub coord_dim: usize,
    pub scaling: DescriptorScaling,
    /// Per-coordinate training range, used to bound inversion.
    pub coord_min: Vec<f64>,
    pub coord_max: Vec<f64>,
    /// Training coordinates, used as inversion starting points.
    pub training_coords: Vec<Vec<f64>>,
}

impl HyperModel {
    /// Fit with descriptor scaling enabled or disabled.
    pub fn fit(
        coords: &[DeformableCoordinates],
        descriptors: &[TaskDescriptor],
        spec: &RegressorSpec,
        direction: HyperDirection,
        scale_descriptors: bool,
    ) -> Result<Self> {
        if coords.is_empty() || coords.len() != descriptors.len() {
            return Err(HpmError::InvalidArgument(format!(
                "hyper-model needs aligned non-empty lists ({} coordinates, {} descriptors)",
                coords.len(),
                descriptors.len()
            )));
        }
        let descriptor_dim = descriptors[0].dim();
        let coord_dim = coords[0].len();
        if coord_dim == 0 {
            return Err(HpmError::InvalidArgument(
                "hyper-model needs at least one deformable coordinate".into(),
            ));
        }
        if let Some(d) = descriptors.iter().find(|d| d.dim() != descriptor_dim) {
            return Err(HpmError::DimensionMismatch {
                expected: descriptor_dim,
                found: d.dim(),
                context: "hyper-model descriptor",
            });
        }
        if let Some(c) = coords.iter().find(|c| c.len() != coord_dim) {
            return Err(HpmError::DimensionMismatch {
                expected: coord_dim,
                found: c.len(),
                context: "hyper-model coordinates",
            });
        }
        let scaling = if scale_descriptors {
            DescriptorScaling::min_max(descriptors)
        } else {
            DescriptorScaling::identity(descriptor_dim)
        };
        let m = coords.len();
        let desc = DMatrix::from_fn(m, descriptor_dim, |r, c| {
            (descriptors[r].values()[c] - scaling.offset[c]) / scaling.range[c]
        });
        let b = DMatrix::from_fn(m, coord_dim, |r, c| coords[r].b[c]);
        let fitted = match direction {
            HyperDirection::Direct => fit(spec, &desc, &b)?,
            HyperDirection::Inverse => fit(spec, &b, &desc)?,
        };
        let coord_min = (0..coord_dim).map(|c| b.column(c).min()).collect();
        let coord_max = (0..coord_dim).map(|c| b.column(c).max()).collect();
        Ok(HyperModel {
            direction,
            fitted,
            descriptor_dim,
            coord_dim,
            scaling,
            coord_min,
            coord_max,
            training_coords: coords
                .iter()
                .map(|c| c.b.iter().copied().collect())
                .collect(),
        })
    }

    pub fn training_mse(&self) -> f64 {
        self.fitted.training_mse
    }

    /// Descriptor predicted for coordinates `b` (scaled space); inverse models only.
    pub fn descriptor_for(&self, b: &[f64]) -> Result<Vec<f64>> {
        if self.direction != HyperDirection::Inverse {
            return Err(HpmError::InvalidArgument(
                "descriptor_for needs an inverse hyper-model".into(),
            ));
        }
        let out = predict(&self.fitted, &DMatrix::from_row_slice(1, b.len(), b))?;
        Ok(out.iter().copied().collect())
    }

    /// Euclidean misfit between `h(b)` and the target, in the scaled descriptor space.
    pub fn descriptor_residual(&self, b: &[f64], target: &TaskDescriptor) -> Result<f64> {
        let predicted = self.descriptor_for(b)?;
        let goal = self.scaling.apply(target.values());
        Ok(predicted
            .iter()
            .zip(&goal)
            .map(|(p, g)| (p - g) * (p - g))
            .sum::<f64>()
            .sqrt())
    }
}

/// Fit a hyper-model with descriptor scaling enabled.
pub fn fit_hypermodel(
    coords: &[DeformableCoordinates],
    descriptors: &[TaskDescriptor],
    spec: &RegressorSpec,
    direction: HyperDirection,
) -> Result<HyperModel> {
    HyperModel::fit(coords, descriptors, spec, direction, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordPrediction {
    pub coords: DeformableCoordinates,
    /// Descriptor misfit of the inversion; `None` for direct models.
    pub residual: Option<f64>,
    pub poorly_invertible: bool,
}

/// Coordinates for an unseen descriptor.
pub fn predict_coords(
    hm: &HyperModel,
    target: &TaskDescriptor,
    config: &InversionConfig,
) -> Result<CoordPrediction> {
    if target.dim() != hm.descriptor_dim {
        return Err(HpmError::DimensionMismatch {
            expected: hm.descriptor_dim,
            found: target.dim(),
            context: "target descriptor",
        });
    }
    match hm.direction {
        HyperDirection::Direct => {
            let x = hm.scaling.apply(target.values());
            let b = predict(&hm.fitted, &DMatrix::from_row_slice(1, x.len(), &x))?;
            Ok(CoordPrediction {
                coords: DeformableCoordinates::new(DVector::from_iterator(
                    b.len(),
                    b.iter().copied(),
                )),
                residual: None,
                poorly_invertible: false,
            })
        }
        HyperDirection::Inverse => invert(hm, target, config),
    }
}

fn invert(
    hm: &HyperModel,
    target: &TaskDescriptor,
    config: &InversionConfig,
) -> Result<CoordPrediction> {
    if config.restarts == 0 {
        return Err(HpmError::InvalidArgument(
            "inversion needs at least one restart".into(),
        ));
    }
    let c = hm.coord_dim;
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..c)
        .map(|j| {
            let span = hm.coord_max[j] - hm.coord_min[j];
            let pad = if span > 0.0 {
                config.bounds_margin * span
            } else {
                config.bounds_margin.max(1e-3)
            };
            (hm.coord_min[j] - pad, hm.coord_max[j] + pad)
        })
        .unzip();
    let goal = hm.scaling.apply(target.values());
    let objective = |b: &[f64]| -> Result<f64> {
        let out = predict(&hm.fitted, &DMatrix::from_row_slice(1, c, b))?;
        Ok(out.iter().zip(&goal).map(|(p, g)| (p - g) * (p - g)).sum())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts: Vec<Vec<f64>> = hm
        .training_coords
        .iter()
        .take(config.restarts)
        .cloned()
        .collect();
    while starts.len() < config.restarts {
        starts.push((0..c).map(|j| rng.random_range(lo[j]..=hi[j])).collect());
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (x, fx) = pattern_search(&objective, start, &lo, &hi, config)?;
        if best.as_ref().is_none_or(|(_, bf)| fx < *bf) {
            best = Some((x, fx));
        }
    }
    let (b, fx) = best.expect("at least one start");
    let residual = fx.sqrt();
    Ok(CoordPrediction {
        coords: DeformableCoordinates::new(DVector::from_vec(b)),
        residual: Some(residual),
        poorly_invertible: residual > config.warn_residual,
    })
}

/// Compass search with per-pass step halving, clamped to the box.
fn pattern_search<F>(
    f: &F,
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    config: &InversionConfig,
) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut x: Vec<f64> = start
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect();
    let mut fx = f(&x)?;
    let mut step: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l) / 8.0).collect();
    let mut iters = 0;
    while iters < config.max_iters && step.iter().cloned().fold(0.0, f64::max) >= config.tol {
        let mut improved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let moved = (x[j] + dir * step[j]).clamp(lo[j], hi[j]);
                if moved == x[j] {
                    continue;
                }
                let mut cand = x.clone();
                cand[j] = moved;
                let fc = f(&cand)?;
                if fc < fx {
                    x = cand;
                    fx = fc;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        iters += 1;
    }
    Ok((x, fx))
}

/// Input box and resolution of the shared sampling grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub levels: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        generate_ffd_grid(&self.min, &self.max, self.levels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpmOptions {
    pub ssm_rule: ComponentRule,
    pub hyper_spec: RegressorSpec,
    pub direction: HyperDirection,
    pub target_spec: RegressorSpec,
    pub inversion: InversionConfig,
    pub scale_descriptors: bool,
}

impl Default for HpmOptions {
    fn default() -> Self {
        HpmOptions {
            ssm_rule: ComponentRule::default(),
            hyper_spec: RegressorSpec::new(Technique::Lin),
            direction: HyperDirection::Direct,
            target_spec: RegressorSpec::new(Technique::Pol3),
            inversion: InversionConfig::default(),
            scale_descriptors: true,
        }
    }
}

/// What happened while generating a target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub target_id: u32,
    pub source_ids: Vec<u32>,
    pub n_components: usize,
    pub explained_variance_ratio: f64,
    pub hyper_training_mse: Option<f64>,
    pub inversion_residual: Option<f64>,
    pub poorly_invertible: bool,
    pub coords: Vec<f64>,
    pub target_training_mse: f64,
    /// Wall time per algorithm stage in milliseconds.
    pub stage_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedModel {
    pub model: FittedModel,
    pub shape: Shape,
    pub provenance: Provenance,
}

struct StageClock(BTreeMap<String, f64>, Instant);

impl StageClock {
    fn new() -> Self {
        StageClock(BTreeMap::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0
            .insert(stage.to_string(), (now - self.1).as_secs_f64() * 1e3);
        self.1 = now;
    }
}

/// Synthesize a process model for `target` from trained source models.
pub fn generate_target_model(
    sources: &[FittedModel],
    descriptors: &[TaskDescriptor],
    target: &TaskDescriptor,
    grid: &GridSpec,
    options: &HpmOptions,
) -> Result<GeneratedModel> {
    if sources.len() < 2 {
        return Err(HpmError::InvalidArgument(format!(
            "need at least 2 source models, got {}",
            sources.len()
        )));
    }
    if sources.len() != descriptors.len() {
        return Err(HpmError::DimensionMismatch {
            expected: sources.len(),
            found: descriptors.len(),
            context: "descriptors per source model",
        });
    }
    let (r, k) = (sources[0].input_dim, sources[0].output_dim);
    if let Some(s) = sources
        .iter()
        .find(|s| s.input_dim != r || s.output_dim != k)
    {
        return Err(HpmError::InvalidArgument(format!(
            "source models disagree on dimensions: {r}->{k} vs {}->{}",
            s.input_dim, s.output_dim
        )));
    }
    let grid = grid.build().map_err(|e| e.at_line(1, "generate input"))?;
    let shapes = sources
        .iter()
        .zip(descriptors)
        .map(|(model, d)| {
            let mut s = sample_shape(model, &grid)?;
            s.source_id = Some(d.id());
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_line(3, "sample shapes"))?;
    generate_from_shapes(&shapes, descriptors, target, &grid, options)
}

/// Algorithm lines 4-10 on shapes that were already sampled on `grid`.
pub fn generate_from_shapes(
    shapes: &[Shape],
    descriptors: &[TaskDescriptor],
    target: &TaskDescriptor,
    grid: &Grid,
    options: &HpmOptions,
) -> Result<GeneratedModel> {
    if shapes.len() != descriptors.len() {
        return Err(HpmError::DimensionMismatch {
            expected: shapes.len(),
            found: descriptors.len(),
            context: "descriptors per shape",
        });
    }
    if let Some(s) = shapes
        .iter()
        .find(|s| s.grid_fingerprint != grid.fingerprint())
    {
        return Err(HpmError::IncompatibleShapes(format!(
            "shape from source {:?} was not sampled on this grid",
            s.source_id
        )));
    }
    let mut clock = StageClock::new();
    let dm = fit_deformable_model(shapes, options.ssm_rule)
        .map_err(|e| e.at_line(5, "fit deformable model"))?;
    clock.lap("ssm");
    let coords = shapes
        .iter()
        .map(|s| project(&dm, s))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_line(6, "project shapes"))?;

    let (b, hyper_mse, residual, poorly) = if dm.n_components() == 0 {
        // No variation among sources: every target collapses onto the mean.
        (
            DeformableCoordinates::new(DVector::zeros(0)),
            None,
            None,
            false,
        )
    } else {
        let hm = HyperModel::fit(
            &coords,
            descriptors,
            &options.hyper_spec,
            options.direction,
            options.scale_descriptors,
        )
        .map_err(|e| e.at_line(7, "train hyper-model"))?;
        clock.lap("hyper_model");
        let pred = predict_coords(&hm, target, &options.inversion)
            .map_err(|e| e.at_line(8, "predict coordinates"))?;
        clock.lap("inversion");
        (
            pred.coords,
            Some(hm.training_mse()),
            pred.residual,
            pred.poorly_invertible,
        )
    };

    let mut shape = reconstruct(&dm, &b).map_err(|e| e.at_line(9, "reconstruct shape"))?;
    shape.source_id = Some(target.id());
    if shape.values.iter().any(|v| !v.is_finite()) {
        return Err(
            HpmError::InvalidArgument("generated shape is not finite".into())
                .at_line(9, "reconstruct shape"),
        );
    }
    let model = fit(&options.target_spec, &grid.points, &shape.to_matrix())
        .map_err(|e| e.at_line(10, "train target model"))?;
    clock.lap("target_model");

    Ok(GeneratedModel {
        provenance: Provenance {
            target_id: target.id(),
            source_ids: descriptors.iter().map(|d| d.id()).collect(),
            n_components: dm.n_components(),
            explained_variance_ratio: dm.explained_variance_ratio(),
            hyper_training_mse: hyper_mse,
            inversion_residual: residual,
            poorly_invertible: poorly,
            coords: b.b.iter().copied().collect(),
            target_training_mse: model.training_mse,
            stage_ms: clock.0,
        },
        model,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(id: u32, v: &[f64]) -> TaskDescriptor {
        TaskDescriptor::new(
            id,
            (0..v.len()).map(|i| format!("c{i}")).collect(),
            v.to_vec(),
        )
        .unwrap()
    }

    fn coords(v: &[f64]) -> DeformableCoordinates {
        DeformableCoordinates::new(DVector::from_column_slice(v))
    }

    #[test]
    fn direct_linear_map_is_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-2.0..2.0));
        let c = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let ds: Vec<_> = (0..8)
            .map(|i| {
                desc(
                    i + 1,
                    &[
                        rng.random_range(1.0..2.0),
                        rng.random_range(100.0..250.0),
                        rng.random_range(130.0..500.0),
                    ],
                )
            })
            .collect();
        let bs: Vec<_> = ds
            .iter()
            .map(|d| {
                DeformableCoordinates::new(&a * DVector::from_column_slice(d.values()) * 0.01 + &c)
            })
            .collect();
        let hm = fit_hypermodel(
            &bs,
            &ds,
            &RegressorSpec::new(Technique::Lin),
            HyperDirection::Direct,
        )
        .unwrap();
        for (d, b) in ds.iter().zip(&bs) {
            let p = predict_coords(&hm, d, &InversionConfig::default()).unwrap();
            assert!((&p.coords.b - &b.b).amax() < 1e-8);
            assert!(p.residual.is_none());
        }
    }

    #[test]
    fn single_pair_is_underdetermined() {
        let err = fit_hypermodel(
            &[coords(&[1.0])],
            &[desc(1, &[1.0, 2.0])],
            &RegressorSpec::new(Technique::Lin),
            HyperDirection::Direct,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            HpmError::Underdetermined {
                rows: 1,
                features: 3
            }
        ));
        assert!(err.to_string().contains("need at least 3"));
    }

    #[test]
    fn inverse_linear_bijection_matches_algebraic_solve() {
        // Descriptors are an invertible affine image of the coordinates.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8]);
        let off = DVector::from_column_slice(&[0.5, -0.1]);
        let bs: Vec<DVector<f64>> = [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [1.0, 1.0],
            [0.5, 0.2],
            [-0.4, 0.7],
        ]
        .iter()
        .map(|v| DVector::from_column_slice(v))
        .collect();
        let ds: Vec<_> = bs
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let v = &a * b + &off;
                desc(i as u32 + 1, v.as_slice())
            })
            .collect();
        let cs: Vec<_> = bs
            .iter()
            .map(|b| DeformableCoordinates::new(b.clone()))
            .collect();
        let hm = HyperModel::fit(
            &cs,
            &ds,
            &RegressorSpec::new(Technique::Lin),
            HyperDirection::Inverse,
            false,
        )
        .unwrap();

        let target_b = DVector::from_column_slice(&[0.3, 0.45]);
        let target = desc(99, (&a * &target_b + &off).as_slice());
        let expected = a
            .clone()
            .lu()
            .solve(&(DVector::from_column_slice(target.values()) - &off))
            .unwrap();
        let p = predict_coords(&hm, &target, &InversionConfig::default()).unwrap();
        assert!(
            (&p.coords.b - &expected).amax() < 1e-5,
            "{} vs {}",
            p.coords.b,
            expected
        );
        let res = p.residual.unwrap();
        assert!(!p.poorly_invertible);
        assert!(
            (hm.descriptor_residual(p.coords.b.as_slice(), &target)
                .unwrap()
                - res)
                .abs()
                < 1e-12
        );

        let one = InversionConfig {
            restarts: 1,
            ..Default::default()
        };
        let p1 = predict_coords(&hm, &target, &one).unwrap();
        assert!((&p1.coords.b - &p.coords.b).amax() < 1e-6);
    }

    #[test]
    fn unreachable_target_is_flagged() {
        // h collapses both coordinates onto their sum; a target far outside
        // the box cannot be matched.
        let bs: Vec<_> = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
            .iter()
            .map(|v| coords(v))
            .collect();
        let ds: Vec<_> = bs
            .iter()
            .enumerate()
            .map(|(i, b)| desc(i as u32 + 1, &[b.b.sum()]))
            .collect();
        let hm = HyperModel::fit(
            &bs,
            &ds,
            &RegressorSpec::new(Technique::Lin),
            HyperDirection::Inverse,
            false,
        )
        .unwrap();
        let p = predict_coords(&hm, &desc(9, &[50.0]), &InversionConfig::default()).unwrap();
        assert!(p.poorly_invertible);
        assert!(p.residual.unwrap() > 1.0);
    }

    #[test]
    fn target_dimension_is_checked() {
        let bs = vec![coords(&[0.0]), coords(&[1.0]), coords(&[2.0])];
        let ds = vec![desc(1, &[0.0]), desc(2, &[1.0]), desc(3, &[2.0])];
        let hm = fit_hypermodel(
            &bs,
            &ds,
            &RegressorSpec::new(Technique::Lin),
            HyperDirection::Direct,
        )
        .unwrap();
        assert!(predict_coords(&hm, &desc(4, &[1.0, 2.0]), &InversionConfig::default()).is_err());
    }
}
