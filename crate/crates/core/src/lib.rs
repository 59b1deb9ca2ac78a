//! Anatomy-aware radiograph classification pipeline.
//!
//! Synthetic pelvic phantoms feed a two-branch pipeline: a U-Net
//! segments pelvis and sacrum, the sacrum is dilated and intersected
//! with the pelvis to localize the sacroiliac joints, and two otherwise
//! identical classifiers are trained on full radiographs (standard) and
//! SIJ crops (anatomy-aware). Grad-CAM and a full clinical-statistics
//! stack (DeLong, bootstrap, McNemar, cut-off calibration, progression
//! ratios) make the comparison quantitative.

pub mod anatomy;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gray;
pub mod imgproc;
pub mod labels;
pub mod manifest;
pub mod nets;
pub mod nn;
pub mod phantom;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use gray::{GrayImage, LabelMask, Rect};
pub use manifest::{FollowUpManifest, Manifest, ManifestEntry};
