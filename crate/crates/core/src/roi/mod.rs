//! Adaptive ROI feature extraction against a frozen deterministic toy
//! vision encoder: mask downsampling, dual full/crop pathways, quality
//! metrics, and the threshold/margin grid search.

pub mod encoder;
pub mod extract;
pub mod mask_ops;
pub mod metrics;
pub mod resample;

pub use encoder::{FrozenEncoder, PatchFeatureMap, Pathway, PixelRegion};
pub use extract::{extract_roi, RoiConfig, RoiExtraction, RoiFeatureRecord};
pub use mask_ops::{downsample_mask, tight_crop, DownsampledMask, TightCrop};
pub use metrics::{compute_metrics, grid_search, GridSearchReport, RoiMetrics};
