//! Experiment orchestration: scenario configuration, the trained source bank,
//! source-count sweeps and their reports.

mod report;

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_ffd_grid, Grid, ProcessDataset, TaskDescriptor};
use crate::error::{HpmError, Result};
use crate::hypermodel::{
    generate_from_shapes, HpmOptions, HyperDirection, InversionConfig, Provenance,
};
use crate::regressors::{fit, FittedModel, RegressorSpec, Technique, Underdetermined};
use crate::selection::{rank_sources, RankingStrategy};
use crate::ssm::{fit_deformable_model, project, sample_shape, ComponentRule, Shape};
use crate::surrogate::{
    sample_dataset, SurrogateConfig, DEFAULT_BHF_VALUES, DEFAULT_FRICTION_VALUES,
};

pub use report::{emit_report, rank_table_csv, write_atomic, ReportFormat};

/// The eighteen deep-drawing process conditions, ids 1..=18.
pub fn deep_drawing_descriptors() -> Vec<TaskDescriptor> {
    const PAIRS: [(f64, f64); 9] = [
        (100.0, 130.0),
        (100.0, 165.0),
        (100.0, 200.0),
        (175.0, 227.5),
        (175.0, 288.75),
        (175.0, 355.0),
        (250.0, 325.0),
        (250.0, 412.5),
        (250.0, 500.0),
    ];
    [1.5, 2.0]
        .iter()
        .flat_map(|&t| PAIRS.iter().map(move |&(is, s)| (t, is, s)))
        .enumerate()
        .map(|(i, (t, is, s))| TaskDescriptor::deep_drawing(i as u32 + 1, t, is, s))
        .collect()
}

/// Hyper-model technique with its penalty under each ranking strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueSetting {
    pub technique: Technique,
    #[serde(default)]
    pub euc_penalty: f64,
    #[serde(default)]
    pub normeuc_penalty: f64,
}

impl TechniqueSetting {
    pub fn unpenalized(technique: Technique) -> Self {
        TechniqueSetting {
            technique,
            euc_penalty: 0.0,
            normeuc_penalty: 0.0,
        }
    }

    pub fn penalty(&self, strategy: RankingStrategy) -> f64 {
        match strategy {
            RankingStrategy::Euc => self.euc_penalty,
            RankingStrategy::NormEuc => self.normeuc_penalty,
        }
    }

    pub fn spec(&self, strategy: RankingStrategy) -> RegressorSpec {
        let spec = RegressorSpec::new(self.technique);
        if self.technique.is_penalized() {
            spec.with_penalty(self.penalty(strategy))
        } else {
            spec
        }
    }

    /// The seven hyper-model techniques with their tuned penalties.
    pub fn defaults() -> Vec<TechniqueSetting> {
        Technique::HYPER_SET
            .iter()
            .map(|&t| match t {
                Technique::Lasso2 | Technique::Lasso3 => TechniqueSetting {
                    technique: t,
                    euc_penalty: 0.001,
                    normeuc_penalty: 0.01,
                },
                Technique::Ridge2 | Technique::Ridge3 => TechniqueSetting {
                    technique: t,
                    euc_penalty: 0.0001,
                    normeuc_penalty: 0.0001,
                },
                _ => TechniqueSetting::unpenalized(t),
            })
            .collect()
    }
}

/// What a generated shape is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    /// The target's own trained source model, sampled on the shared grid.
    #[default]
    SourceModel,
    /// The generated model evaluated at the target's raw samples.
    RawSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub descriptors: Vec<TaskDescriptor>,
    pub bhf_values: Vec<f64>,
    pub friction_values: Vec<f64>,
    pub surrogate: SurrogateConfig,
    pub grid_levels: usize,
    pub excluded_ids: Vec<u32>,
    /// Targets to sweep; empty means every retained process.
    pub targets: Vec<u32>,
    pub techniques: Vec<TechniqueSetting>,
    pub count_min: usize,
    pub count_max: usize,
    pub strategies: Vec<RankingStrategy>,
    pub source_spec: RegressorSpec,
    /// Technique for the generated model; defaults to the source technique.
    pub target_spec: Option<RegressorSpec>,
    pub ssm_rule: ComponentRule,
    pub direction: HyperDirection,
    pub inversion: InversionConfig,
    pub hyper_underdetermined: Underdetermined,
    pub scale_descriptors: bool,
    pub ground_truth: GroundTruth,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
    /// When false, all timing fields are written as zero so reports are reproducible.
    pub record_timings: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            descriptors: deep_drawing_descriptors(),
            bhf_values: DEFAULT_BHF_VALUES.to_vec(),
            friction_values: DEFAULT_FRICTION_VALUES.to_vec(),
            surrogate: SurrogateConfig::default(),
            grid_levels: 15,
            excluded_ids: vec![10],
            targets: Vec::new(),
            techniques: TechniqueSetting::defaults(),
            count_min: 4,
            count_max: 16,
            strategies: RankingStrategy::ALL.to_vec(),
            source_spec: RegressorSpec::new(Technique::Pol3),
            target_spec: None,
            ssm_rule: ComponentRule::default(),
            direction: HyperDirection::Direct,
            inversion: InversionConfig::default(),
            hyper_underdetermined: Underdetermined::MinNorm,
            scale_descriptors: true,
            ground_truth: GroundTruth::SourceModel,
            workers: 0,
            record_timings: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// `"default"` yields the built-in scenario; anything else is a JSON file path.
    pub fn load(path: &str) -> Result<Self> {
        if path == "default" {
            return Ok(ScenarioConfig::default());
        }
        let text = fs::read_to_string(path).map_err(|e| HpmError::io(path, e))?;
        let config: ScenarioConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Seed applied to every stochastic component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.surrogate.rng_seed = seed;
        self.inversion.seed = seed;
        if let Some(mlp) = self.source_spec.mlp.as_mut() {
            mlp.weight_init_seed = seed;
        }
        self
    }

    pub fn retained(&self) -> Vec<&TaskDescriptor> {
        self.descriptors
            .iter()
            .filter(|d| !self.excluded_ids.contains(&d.id()))
            .collect()
    }

    pub fn target_ids(&self) -> Vec<u32> {
        let retained = self.retained().into_iter().map(|d| d.id());
        if self.targets.is_empty() {
            retained.collect()
        } else {
            retained.filter(|id| self.targets.contains(id)).collect()
        }
    }

    pub fn counts(&self) -> std::ops::RangeInclusive<usize> {
        self.count_min..=self.count_max
    }

    pub fn descriptor(&self, id: u32) -> Result<&TaskDescriptor> {
        self.descriptors
            .iter()
            .find(|d| d.id() == id)
            .ok_or(HpmError::UnknownProcess(id))
    }

    pub fn grid(&self) -> Result<Grid> {
        let bounds = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        };
        let (b0, b1) = bounds(&self.bhf_values);
        let (f0, f1) = bounds(&self.friction_values);
        generate_ffd_grid(&[b0, f0], &[b1, f1], self.grid_levels)
    }

    pub fn hpm_options(&self, setting: &TechniqueSetting, strategy: RankingStrategy) -> HpmOptions {
        HpmOptions {
            ssm_rule: self.ssm_rule,
            hyper_spec: setting
                .spec(strategy)
                .with_underdetermined(self.hyper_underdetermined),
            direction: self.direction,
            target_spec: self
                .target_spec
                .clone()
                .unwrap_or_else(|| self.source_spec.clone()),
            inversion: self.inversion.clone(),
            scale_descriptors: self.scale_descriptors,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HpmError::InvalidArgument(m));
        if self.descriptors.is_empty() {
            return invalid("config has no descriptors".into());
        }
        for d in &self.descriptors {
            TaskDescriptor::new(d.id(), d.names().to_vec(), d.values().to_vec())?;
        }
        let mut ids: Vec<u32> = self.descriptors.iter().map(|d| d.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return invalid("descriptor ids must be unique".into());
        }
        for &id in self.excluded_ids.iter().chain(&self.targets) {
            self.descriptor(id)?;
        }
        if self.techniques.is_empty() || self.strategies.is_empty() {
            return invalid("config needs at least one technique and one strategy".into());
        }
        for setting in &self.techniques {
            for &s in &self.strategies {
                setting.spec(s).validate()?;
            }
        }
        self.source_spec.validate()?;
        let retained = self.retained().len();
        if self.count_min < 2 || self.count_min > self.count_max {
            return invalid(format!(
                "count range {}..{} must satisfy 2 <= min <= max",
                self.count_min, self.count_max
            ));
        }
        if self.count_max + 1 > retained {
            return invalid(format!(
                "count_max {} exceeds the {} candidates left per target",
                self.count_max,
                retained.saturating_sub(1)
            ));
        }
        Ok(())
    }
}

/// Datasets, trained models and grid shapes for every configured process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBank {
    pub grid: Grid,
    pub datasets: Vec<ProcessDataset>,
    pub models: Vec<FittedModel>,
    pub shapes: Vec<Shape>,
}

impl SourceBank {
    /// Sample the surrogate and train one model per descriptor.
    pub fn build(config: &ScenarioConfig) -> Result<Self> {
        let datasets = config
            .descriptors
            .iter()
            .map(|d| {
                sample_dataset(
                    d,
                    &config.bhf_values,
                    &config.friction_values,
                    &config.surrogate,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_datasets(config, datasets)
    }

    pub fn from_datasets(config: &ScenarioConfig, datasets: Vec<ProcessDataset>) -> Result<Self> {
        let grid = config.grid()?;
        let models = datasets
            .par_iter()
            .map(|ds| fit(&config.source_spec, &ds.inputs, &ds.outputs))
            .collect::<Result<Vec<_>>>()?;
        let shapes = models
            .iter()
            .zip(&datasets)
            .map(|(m, ds)| {
                let mut s = sample_shape(m, &grid)?;
                s.source_id = Some(ds.descriptor.id());
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SourceBank {
            grid,
            datasets,
            models,
            shapes,
        })
    }

    fn index_of(&self, id: u32) -> Result<usize> {
        self.datasets
            .iter()
            .position(|d| d.descriptor.id() == id)
            .ok_or(HpmError::UnknownProcess(id))
    }

    pub fn descriptor(&self, id: u32) -> Result<&TaskDescriptor> {
        Ok(&self.datasets[self.index_of(id)?].descriptor)
    }

    pub fn model(&self, id: u32) -> Result<&FittedModel> {
        Ok(&self.models[self.index_of(id)?])
    }

    pub fn shape(&self, id: u32) -> Result<&Shape> {
        Ok(&self.shapes[self.index_of(id)?])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HpmError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Mean squared element-wise difference over all landmarks and features.
pub fn shape_mse(a: &Shape, b: &Shape) -> Result<f64> {
    a.check_comparable(b)?;
    Ok((&a.values - &b.values).norm_squared() / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target_id: u32,
    pub strategy: RankingStrategy,
    pub technique: Technique,
    pub n_sources: usize,
    pub selected_ids: Vec<u32>,
    pub shape_mse: Option<f64>,
    pub hyper_mse: Option<f64>,
    pub inversion_residual: Option<f64>,
    pub wall_ms: f64,
    pub error: Option<String>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub strategy: RankingStrategy,
    pub technique: Technique,
    pub n_sources: usize,
    /// Mean over the rows that succeeded; `None` if all failed.
    pub mean_shape_mse: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Norm of each process's deformable coordinates in a model fitted on all shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceNorm {
    pub id: u32,
    pub b_norm: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ScenarioConfig,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
    pub source_norms: Vec<SourceNorm>,
}

impl ExperimentReport {
    pub fn aggregate(
        &self,
        strategy: RankingStrategy,
        technique: Technique,
        n_sources: usize,
    ) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| {
            a.strategy == strategy && a.technique == technique && a.n_sources == n_sources
        })
    }

    pub fn mean_mse(
        &self,
        strategy: RankingStrategy,
        technique: Technique,
        n_sources: usize,
    ) -> Option<f64> {
        self.aggregate(strategy, technique, n_sources)?
            .mean_shape_mse
    }
}

/// Run every (strategy, technique, target, count) cell of the sweep.
pub fn run_sweep(config: &ScenarioConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let bank = SourceBank::build(config)?;
    run_sweep_with_bank(config, &bank)
}

struct Cell<'a> {
    target: u32,
    strategy: RankingStrategy,
    setting: &'a TechniqueSetting,
    ranking: &'a [u32],
    n: usize,
}

/// Sweep over an existing bank, e.g. one loaded from disk.
pub fn run_sweep_with_bank(config: &ScenarioConfig, bank: &SourceBank) -> Result<ExperimentReport> {
    config.validate()?;
    if bank.grid.fingerprint() != config.grid()?.fingerprint() {
        return Err(HpmError::IncompatibleShapes(
            "source bank was sampled on a different grid than the config describes".into(),
        ));
    }
    let retained: Vec<&TaskDescriptor> = config.retained();
    let targets = config.target_ids();

    // Rankings depend only on (target, strategy).
    let mut rankings = Vec::new();
    for &strategy in &config.strategies {
        for &t in &targets {
            let target = config.descriptor(t)?;
            let candidates: Vec<TaskDescriptor> = retained
                .iter()
                .filter(|d| d.id() != t)
                .map(|d| (*d).clone())
                .collect();
            let ids: Vec<u32> = rank_sources(&candidates, target, strategy)?
                .into_iter()
                .map(|r| r.id)
                .collect();
            rankings.push(((strategy, t), ids));
        }
    }
    let ranking = |s: RankingStrategy, t: u32| -> &[u32] {
        &rankings
            .iter()
            .find(|(k, _)| *k == (s, t))
            .expect("ranking computed")
            .1
    };

    let mut cells = Vec::new();
    for &strategy in &config.strategies {
        for setting in &config.techniques {
            for &target in &targets {
                for n in config.counts() {
                    cells.push(Cell {
                        target,
                        strategy,
                        setting,
                        ranking: ranking(strategy, target),
                        n,
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| HpmError::InvalidArgument(format!("worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(config, bank, c))
            .collect()
    });

    let aggregates = aggregate_rows(config, &rows);
    let source_norms = source_norms(config, bank)?;
    Ok(ExperimentReport {
        config: config.clone(),
        rows,
        aggregates,
        source_norms,
    })
}

fn run_cell(config: &ScenarioConfig, bank: &SourceBank, cell: &Cell) -> SweepRow {
    let start = Instant::now();
    // Source order is canonical so identical source sets give identical fits.
    let mut selected: Vec<u32> = cell.ranking[..cell.n].to_vec();
    selected.sort_unstable();
    let outcome = score_cell(config, bank, cell, &selected);
    let wall_ms = if config.record_timings {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let mut row = SweepRow {
        target_id: cell.target,
        strategy: cell.strategy,
        technique: cell.setting.technique,
        n_sources: cell.n,
        selected_ids: selected,
        shape_mse: None,
        hyper_mse: None,
        inversion_residual: None,
        wall_ms,
        error: None,
        provenance: None,
    };
    match outcome {
        Ok((mse, mut provenance)) => {
            if !config.record_timings {
                provenance.stage_ms.values_mut().for_each(|v| *v = 0.0);
            }
            row.shape_mse = Some(mse);
            row.hyper_mse = provenance.hyper_training_mse;
            row.inversion_residual = provenance.inversion_residual;
            row.provenance = Some(provenance);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn score_cell(
    config: &ScenarioConfig,
    bank: &SourceBank,
    cell: &Cell,
    selected: &[u32],
) -> Result<(f64, Provenance)> {
    let shapes = selected
        .iter()
        .map(|&id| bank.shape(id).cloned())
        .collect::<Result<Vec<_>>>()?;
    let descriptors = selected
        .iter()
        .map(|&id| bank.descriptor(id).cloned())
        .collect::<Result<Vec<_>>>()?;
    let target = bank.descriptor(cell.target)?;
    let options = config.hpm_options(cell.setting, cell.strategy);
    let generated = generate_from_shapes(&shapes, &descriptors, target, &bank.grid, &options)?;
    let mse = match config.ground_truth {
        GroundTruth::SourceModel => shape_mse(&generated.shape, bank.shape(cell.target)?)?,
        GroundTruth::RawSamples => {
            let ds = &bank.datasets[bank.index_of(cell.target)?];
            let pred: DMatrix<f64> = generated.model.predict(&ds.inputs)?;
            (pred - &ds.outputs).norm_squared() / ds.outputs.len() as f64
        }
    };
    if !mse.is_finite() {
        return Err(HpmError::InvalidArgument(format!(
            "shape MSE is not finite ({mse})"
        )));
    }
    Ok((mse, generated.provenance))
}

fn aggregate_rows(config: &ScenarioConfig, rows: &[SweepRow]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &strategy in &config.strategies {
        for setting in &config.techniques {
            for n in config.counts() {
                let cell: Vec<&SweepRow> = rows
                    .iter()
                    .filter(|r| {
                        r.strategy == strategy
                            && r.technique == setting.technique
                            && r.n_sources == n
                    })
                    .collect();
                let ok: Vec<f64> = cell.iter().filter_map(|r| r.shape_mse).collect();
                out.push(Aggregate {
                    strategy,
                    technique: setting.technique,
                    n_sources: n,
                    mean_shape_mse: (!ok.is_empty())
                        .then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                    n_ok: ok.len(),
                    n_failed: cell.len() - ok.len(),
                });
            }
        }
    }
    out
}

fn source_norms(config: &ScenarioConfig, bank: &SourceBank) -> Result<Vec<SourceNorm>> {
    let dm = fit_deformable_model(&bank.shapes, config.ssm_rule)?;
    bank.shapes
        .iter()
        .zip(&bank.datasets)
        .map(|(s, ds)| {
            let id = ds.descriptor.id();
            Ok(SourceNorm {
                id,
                b_norm: project(&dm, s)?.b.norm(),
                excluded: config.excluded_ids.contains(&id),
            })
        })
        .collect()
}
