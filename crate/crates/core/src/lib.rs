//! Point clouds rendered to multi-view depth maps, a small depth encoder
//! pre-trained contrastively against a frozen image-proxy encoder, zero-shot
//! classification against class anchors and lightweight adapter heads.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod encoders;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod numerics;
pub mod pipeline;
pub mod render;
pub mod views;

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;

pub use adapters::{HeadKind, HeadSpec};
pub use encoders::{AnchorBank, EncoderSpec, FeatureVec};
pub use error::{Error, Result};
pub use geometry::{farthest_point_sample, normalize, PointCloud};
pub use numerics::{Graph, ParamStore, Tensor, Var};
pub use pipeline::{DatasetSpec, HeadConfig, KShot, LossSchedule, Modalities, ToyDataset, TrainConfig};
pub use render::{render, render_views, DepthMap, DepthRule, RenderConfig};
pub use views::{CameraView, ViewKind, ViewSet};
