//! Dataset generation, contrastive pre-training and evaluation protocols.

pub mod dataset;
pub mod eval;
pub mod head;
pub mod pretrain;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::render::RenderConfig;

pub use dataset::{generate_dataset, generate_toy_dataset, DatasetSpec, Sample, ToyDataset, SHAPE_FAMILIES};
pub use eval::{build_anchors, eval_zero_shot, path_features, ClassMetrics, EvalReport, PathFeatures};
pub use head::{fit_head, train_head, HeadConfig, HeadOutcome, KShot};
pub use pretrain::{history_csv, init_pretrain_store, pretrain, LossSchedule, PretrainOutcome, StepRecord, TrainConfig};

/// Encoder shape plus the two render settings: sparse maps for the depth
/// encoder and dense maps for the image proxy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Modalities {
    pub encoder: EncoderSpec,
    pub sparse: RenderConfig,
    pub dense: RenderConfig,
}

impl Default for Modalities {
    fn default() -> Self {
        Modalities {
            encoder: EncoderSpec::default(),
            sparse: RenderConfig::sparse(),
            dense: RenderConfig::dense(),
        }
    }
}

impl Modalities {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.sparse.validate()?;
        self.dense.validate()?;
        for cfg in [&self.sparse, &self.dense] {
            if cfg.resolution != self.encoder.resolution {
                return Err(Error::InvalidInput(format!(
                    "render resolution {} does not match encoder resolution {}",
                    cfg.resolution, self.encoder.resolution
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::pipeline::dataset::generate_dataset;

    /// A three-class set with small maps for fast protocol tests.
    pub(crate) fn tiny() -> (ToyDataset, Modalities) {
        let data = generate_dataset(
            1,
            &DatasetSpec {
                classes: 3,
                per_class: 8,
                test_per_class: 2,
                raw_points: 600,
                points: 300,
                ..DatasetSpec::default()
            },
        )
        .unwrap();
        let modalities = Modalities {
            encoder: EncoderSpec {
                resolution: 64,
                grid: 8,
                hidden: 16,
                out_dim: 8,
            },
            sparse: RenderConfig {
                resolution: 64,
                focal: 28.0,
                ..RenderConfig::sparse()
            },
            dense: RenderConfig {
                resolution: 64,
                focal: 28.0,
                ..RenderConfig::dense()
            },
        };
        (data, modalities)
    }

    #[test]
    fn modalities_check_resolution() {
        assert!(Modalities::default().validate().is_ok());
        let mut m = Modalities::default();
        m.dense.resolution = 128;
        assert!(m.validate().is_err());
    }
}
