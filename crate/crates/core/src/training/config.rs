use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Contrastive hinge on positives and negatives plus the hardest-negative term.
    Hinge,
    /// Temperature-scaled InfoNCE over each positive and its negatives.
    Infonce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub positives_per_pair: usize,
    pub negatives_per_positive: usize,
    pub hardest_count: usize,
    pub distinctiveness_exponent: f64,
    pub nce_temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    /// Chebyshev radius (pixels) around the true match excluded from negatives.
    pub exclusion_radius: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            positives_per_pair: 512,
            negatives_per_positive: 512,
            hardest_count: 3,
            distinctiveness_exponent: 0.25,
            nce_temperature: 20.0,
            learning_rate: 1e-4,
            batch_size: 16,
            loss_kind: LossKind::Hinge,
            exclusion_radius: 3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Batch of 2 for CPU-sized runs; everything else at the defaults.
    pub fn desk() -> Self {
        Self {
            batch_size: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 8] = [
            (self.margin > 0.0, "margin must be > 0"),
            (self.positives_per_pair >= 1, "positives_per_pair must be >= 1"),
            (self.negatives_per_positive >= 1, "negatives_per_positive must be >= 1"),
            (
                self.hardest_count <= self.negatives_per_positive,
                "hardest_count must be <= negatives_per_positive",
            ),
            (
                self.distinctiveness_exponent > 0.0,
                "distinctiveness_exponent must be > 0",
            ),
            (self.nce_temperature > 0.0, "nce_temperature must be > 0"),
            (self.learning_rate >= 0.0, "learning_rate must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}
