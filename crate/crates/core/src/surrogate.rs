//! Analytic deep-drawing stand-in.
//!
//! Maps process parameters (blank-holder force, friction) under conditions
//! (thickness T, initial stress IS, saturation S) to (max stress, distance):
//!
//! ```text
//! strain     = bhf * (0.5 + friction) / T
//! max_stress = (S - (S - IS) * exp(-4 * strain)) / stress_scale
//! distance   = distance_base * (1 - 0.4 * friction) * (1 + 0.2 * (T - 1.5)) - 0.5 * bhf
//! ```
//!
//! The stress term follows a Hockett-Sherby style saturation from IS towards S.
//! Optional additive Gaussian noise uses a ChaCha8 stream seeded per row from
//! `(rng_seed, process id, row index)`; normals come from `rand_distr`'s
//! ziggurat sampler.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ProcessDataset, TaskDescriptor};
use crate::error::{HpmError, Result};

/// Blank-holder force levels, verbatim (including the out-of-sequence 0.66).
pub const DEFAULT_BHF_VALUES: [f64; 6] = [0.66, 0.1, 0.133, 0.167, 0.2, 0.23];
pub const DEFAULT_FRICTION_VALUES: [f64; 9] = [0.12, 0.23, 0.34, 0.45, 0.56, 0.67, 0.78, 0.89, 1.0];

pub const INPUT_NAMES: [&str; 2] = ["bhf", "friction"];
pub const OUTPUT_NAMES: [&str; 2] = ["max_stress", "distance"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub noise_sigma: f64,
    pub rng_seed: u64,
    pub stress_scale: f64,
    pub distance_base: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            noise_sigma: 0.0,
            rng_seed: 0,
            stress_scale: 100.0,
            distance_base: 5.0,
        }
    }
}

impl SurrogateConfig {
    /// Noise-free response `(max_stress, distance)`.
    pub fn evaluate(
        &self,
        bhf: f64,
        friction: f64,
        descriptor: &TaskDescriptor,
    ) -> Result<(f64, f64)> {
        let (t, is, s) = conditions(descriptor)?;
        if !(self.stress_scale > 0.0) || !(self.distance_base > 0.0) {
            return Err(HpmError::InvalidArgument(
                "stress_scale and distance_base must be positive".into(),
            ));
        }
        let strain = bhf * (0.5 + friction) / t;
        let max_stress = (s - (s - is) * (-4.0 * strain).exp()) / self.stress_scale;
        let distance =
            self.distance_base * (1.0 - 0.4 * friction) * (1.0 + 0.2 * (t - 1.5)) - 0.5 * bhf;
        Ok((max_stress, distance))
    }

    fn row_rng(&self, process_id: u32, row: usize) -> ChaCha8Rng {
        let seed = self
            .rng_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((process_id as u64) << 32)
            .wrapping_add(row as u64);
        ChaCha8Rng::seed_from_u64(seed)
    }
}

fn conditions(descriptor: &TaskDescriptor) -> Result<(f64, f64, f64)> {
    let v = descriptor.values();
    if v.len() != 3 {
        return Err(HpmError::DimensionMismatch {
            expected: 3,
            found: v.len(),
            context: "surrogate descriptor (thickness, initial_stress, saturation)",
        });
    }
    let (t, is, s) = (v[0], v[1], v[2]);
    if !(t > 0.0) {
        return Err(HpmError::InvalidArgument(format!(
            "thickness must be positive, got {t}"
        )));
    }
    if !(is > 0.0) || is > s {
        return Err(HpmError::InvalidArgument(format!(
            "need 0 < initial stress <= saturation, got IS={is}, S={s}"
        )));
    }
    Ok((t, is, s))
}

/// Full cross product of the parameter lists (BHF outer, friction inner).
pub fn sample_dataset(
    descriptor: &TaskDescriptor,
    bhf_values: &[f64],
    friction_values: &[f64],
    config: &SurrogateConfig,
) -> Result<ProcessDataset> {
    if bhf_values.is_empty() || friction_values.is_empty() {
        return Err(HpmError::InvalidArgument(
            "bhf and friction lists must be non-empty".into(),
        ));
    }
    if !(config.noise_sigma >= 0.0) {
        return Err(HpmError::InvalidArgument("noise_sigma must be >= 0".into()));
    }
    let n = bhf_values.len() * friction_values.len();
    let mut inputs = DMatrix::zeros(n, 2);
    let mut outputs = DMatrix::zeros(n, 2);
    let mut row = 0;
    for &bhf in bhf_values {
        for &friction in friction_values {
            let (mut stress, mut distance) = config.evaluate(bhf, friction, descriptor)?;
            if config.noise_sigma > 0.0 {
                let mut rng = config.row_rng(descriptor.id(), row);
                let e1: f64 = StandardNormal.sample(&mut rng);
                let e2: f64 = StandardNormal.sample(&mut rng);
                stress += config.noise_sigma * e1;
                distance += config.noise_sigma * e2;
            }
            inputs[(row, 0)] = bhf;
            inputs[(row, 1)] = friction;
            outputs[(row, 0)] = stress;
            outputs[(row, 1)] = distance;
            row += 1;
        }
    }
    ProcessDataset::new(
        descriptor.clone(),
        inputs,
        outputs,
        INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
        OUTPUT_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}
