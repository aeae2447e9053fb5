//! TOML run configuration. Every section is optional; missing keys keep
//! their defaults and unknown keys are rejected.

use std::path::Path;

use depthclip::pipeline::Modalities;
use depthclip::views::{orthogonal_views, spherical_views_with, DEFAULT_CORNER_ELEVATION};
use depthclip::{DatasetSpec, DepthRule, EncoderSpec, HeadConfig, RenderConfig, TrainConfig, ViewKind, ViewSet};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Partial render settings layered over the sparse or dense defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderOverrides {
    pub resolution: Option<usize>,
    pub dilation: Option<usize>,
    pub rule: Option<DepthRule>,
    pub focal: Option<f64>,
    pub epsilon: Option<f64>,
}

impl RenderOverrides {
    pub fn apply(&self, base: RenderConfig) -> RenderConfig {
        RenderConfig {
            resolution: self.resolution.unwrap_or(base.resolution),
            dilation: self.dilation.unwrap_or(base.dilation),
            rule: self.rule.unwrap_or(base.rule),
            focal: self.focal.unwrap_or(base.focal),
            epsilon: self.epsilon.unwrap_or(base.epsilon),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewOptions {
    /// Elevation of the four corner cameras of the spherical set.
    pub corner_elevation: f64,
    pub pretrain: ViewKind,
    pub zeroshot: ViewKind,
    pub head: ViewKind,
    pub anchors: ViewKind,
}

impl Default for ViewOptions {
    fn default() -> Self {
        ViewOptions {
            corner_elevation: DEFAULT_CORNER_ELEVATION,
            pretrain: ViewKind::Spherical10,
            zeroshot: ViewKind::Orthogonal6,
            head: ViewKind::Spherical10,
            anchors: ViewKind::Orthogonal6,
        }
    }
}

impl ViewOptions {
    pub fn set(&self, kind: ViewKind) -> ViewSet {
        match kind {
            ViewKind::Orthogonal6 => orthogonal_views(),
            ViewKind::Spherical10 => spherical_views_with(self.corner_elevation),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Seeds dataset generation and encoder initialization.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub encoder: EncoderSpec,
    pub sparse: RenderOverrides,
    pub dense: RenderOverrides,
    pub views: ViewOptions,
    pub train: TrainConfig,
    pub head: HeadConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// `--seed` reseeds everything: data, initialization, batch order and
    /// head initialization.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.head.seed = seed;
    }

    pub fn modalities(&self) -> Modalities {
        Modalities {
            encoder: self.encoder,
            sparse: self.sparse.apply(RenderConfig::sparse()),
            dense: self.dense.apply(RenderConfig::dense()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset.validate()?;
        self.modalities().validate()?;
        self.train.validate()?;
        self.head.validate()?;
        if !self.views.corner_elevation.is_finite() {
            return Err(CliError::config("views.corner_elevation must be finite"));
        }
        Ok(())
    }

    /// The configuration with render overrides resolved against their
    /// defaults.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let m = self.modalities();
        v["sparse"] = serde_json::to_value(m.sparse).expect("render config serializes");
        v["dense"] = serde_json::to_value(m.dense).expect("render config serializes");
        v
    }
}
