//! Fixtures shared by the pipeline benchmarks.

use hpm_core::{
    Grid, ScenarioConfig, Shape, SourceBank, TaskDescriptor, Technique, TechniqueSetting,
};
use nalgebra::DVector;

/// Default scenario with timings off so every iteration does identical work.
pub fn scenario() -> ScenarioConfig {
    ScenarioConfig {
        record_timings: false,
        ..Default::default()
    }
}

/// One target, one strategy, one technique: 13 cells.
pub fn small_scenario(technique: Technique) -> ScenarioConfig {
    ScenarioConfig {
        targets: vec![1],
        strategies: vec![hpm_core::RankingStrategy::Euc],
        techniques: vec![TechniqueSetting::defaults()
            .into_iter()
            .find(|s| s.technique == technique)
            .unwrap_or_else(|| TechniqueSetting::unpenalized(technique))],
        ..scenario()
    }
}

pub fn bank() -> SourceBank {
    SourceBank::build(&scenario()).expect("default scenario trains")
}

/// Shapes and descriptors for `ids`, in the order given.
pub fn sources(bank: &SourceBank, ids: &[u32]) -> (Vec<Shape>, Vec<TaskDescriptor>) {
    ids.iter()
        .map(|&i| {
            (
                bank.shape(i).unwrap().clone(),
                bank.descriptor(i).unwrap().clone(),
            )
        })
        .unzip()
}

/// `m` smooth pseudo-random shapes of `p` values each, no RNG needed.
pub fn synthetic_shapes(m: usize, grid: &Grid, k: usize) -> Vec<Shape> {
    let p = grid.n_points() * k;
    (0..m)
        .map(|s| {
            let v = DVector::from_fn(p, |j, _| {
                ((s * 31 + j * 7) as f64 * 0.013).sin() + (j as f64 * 0.002) * s as f64
            });
            Shape::new(
                v,
                grid.n_points(),
                k,
                Some(s as u32 + 1),
                grid.fingerprint(),
            )
            .unwrap()
        })
        .collect()
}
