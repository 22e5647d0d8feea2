//! Source ranking by descriptor distance to the target.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{normalize_descriptors, TaskDescriptor};
use crate::error::{HpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RankingStrategy {
    /// Euclidean distance in raw descriptor units.
    Euc,
    /// Euclidean distance after min-max normalizing candidates and target together.
    NormEuc,
}

impl RankingStrategy {
    pub const ALL: [RankingStrategy; 2] = [RankingStrategy::Euc, RankingStrategy::NormEuc];

    pub fn name(self) -> &'static str {
        match self {
            RankingStrategy::Euc => "EUC",
            RankingStrategy::NormEuc => "NORMEUC",
        }
    }
}

impl fmt::Display for RankingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RankingStrategy {
    type Err = HpmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EUC" => Ok(RankingStrategy::Euc),
            "NORMEUC" => Ok(RankingStrategy::NormEuc),
            _ => Err(HpmError::InvalidArgument(format!(
                "unknown ranking strategy '{s}' (expected euc or normeuc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSource {
    pub id: u32,
    pub distance: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Candidates ordered by ascending distance to `target`, ties by ascending id.
pub fn rank_sources(
    candidates: &[TaskDescriptor],
    target: &TaskDescriptor,
    strategy: RankingStrategy,
) -> Result<Vec<RankedSource>> {
    if candidates.is_empty() {
        return Err(HpmError::InvalidArgument(
            "no candidate sources to rank".into(),
        ));
    }
    if let Some(c) = candidates.iter().find(|c| c.dim() != target.dim()) {
        return Err(HpmError::DimensionMismatch {
            expected: target.dim(),
            found: c.dim(),
            context: "candidate descriptor",
        });
    }
    let distances: Vec<f64> = match strategy {
        RankingStrategy::Euc => candidates
            .iter()
            .map(|c| euclidean(c.values(), target.values()))
            .collect(),
        RankingStrategy::NormEuc => {
            let mut all = candidates.to_vec();
            all.push(target.clone());
            let normalized = normalize_descriptors(&all)?;
            let (t, cs) = normalized.split_last().expect("target appended");
            cs.iter()
                .map(|c| euclidean(c.values(), t.values()))
                .collect()
        }
    };
    let mut ranked: Vec<RankedSource> = candidates
        .iter()
        .zip(distances)
        .map(|(c, distance)| RankedSource {
            id: c.id(),
            distance,
        })
        .collect();
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    Ok(ranked)
}
