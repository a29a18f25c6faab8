//! Colour-sequence and connector-orientation inspection for wire harnesses.
//!
//! The pipeline crops a view, finds each wire's box against a known background
//! (falling back to gradient line templates when wires touch), compares each
//! wire's canonical patch to a trained reference in RGB and HSV, and checks
//! the connector's orientation. [`synth`] renders labelled test frames.

pub mod color;
pub mod error;
pub mod gradient;
pub mod imaging;
pub mod orientation;
pub mod pipeline;
pub mod segmentation;
pub mod synth;

pub use color::{ColorPatch, ColorScore, ReferencePatch, Thresholds, WireVerdict};
pub use error::{Error, Result};
pub use gradient::{CombineMode, GradientConfig};
pub use imaging::{BinaryMask, GrayImage, HsvPixel, HsvRange, RgbImage, Roi};
pub use orientation::{EmbeddingExtractor, EmbeddingVector, GridDescriptor, OrientationSpec, OrientationVerdict};
pub use pipeline::{
    inspect, load_profile, save_profile, train, InspectionResult, Overall, TrainedProfile, TrainingConfig,
    TrainingSample, ViewResult, ViewSpec, WireResult,
};
pub use segmentation::{ScanLineConfig, Segmentation, SegmentationPath, WireBox};
pub use synth::{generate, permute_defect, Defect, GroundTruth, HarnessSpec};
