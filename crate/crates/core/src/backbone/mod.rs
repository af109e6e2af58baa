//! Transformer backbones adapted to patch-token forecasting, the selective
//! freeze policy and pretrained-weight loading.

mod config;
mod freeze;
pub mod layers;
mod model;
mod weights;

pub use config::{BackboneConfig, FfnActivation, Variant};
pub use freeze::{apply_freeze_policy, is_trainable, FreezeMode};
pub use model::{build_backbone, forward_forecast, ForecastModel};
pub use weights::{
    convert_gpt2_checkpoint, load_pretrained_weights, loaded_set, reconcile_with_archive,
    LoadReport,
};
