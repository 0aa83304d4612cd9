//! Forward-only attention backbone, similarity neck and center head.

pub mod config;
pub mod forward;
pub mod head;
pub mod neck;
pub mod ops;
pub mod weights;

pub use config::{BackboneConfig, HEAD_CHANNELS, STAGES};
pub use forward::{MultiScaleFeatures, backbone_forward, backbone_forward_observed, image_to_tokens};
pub use head::{HeadMap, Prediction, decode_head, head_decode, head_forward};
pub use neck::{cross_attention, similarity_neck_forward, similarity_neck_forward_observed};
pub use ops::{AttentionProbe, FeatureMap};
pub use weights::{Tensor, WeightStore, init_weights, load_weights, save_weights};
