//! Ground truth, observation sampling and metrics for the localization and
//! mapping experiments, plus small grid problems used by the proposition suites.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod localization;
pub mod mapping;
pub mod synthetic;

pub use localization::{LocalizationConfig, LocalizationRun, LocalizationScenario};
pub use mapping::{MappingConfig, MappingRun, MappingScenario};


/// Stream reserved for scenario geometry, disjoint from every observation stream.
const GEOMETRY_STREAM: u64 = 1 << 63;

pub(crate) fn geometry_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GEOMETRY_STREAM);
    rng
}

/// Estimator names accepted on the command line and in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Centralized,
    Distributed,
    Marginal,
    Bp,
    CircularBp,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Centralized,
        EstimatorKind::Distributed,
        EstimatorKind::Marginal,
        EstimatorKind::Bp,
        EstimatorKind::CircularBp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Centralized => "centralized",
            EstimatorKind::Distributed => "distributed",
            EstimatorKind::Marginal => "marginal",
            EstimatorKind::Bp => "bp",
            EstimatorKind::CircularBp => "circular-bp",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("estimator.kind", format!("unknown estimator `{s}`")))
    }
}
