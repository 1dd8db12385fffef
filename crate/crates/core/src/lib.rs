//! Part-aware panoptic segmentation: label formats, evaluation metrics,
//! merging of scene and part predictions, and a synthetic test harness.

pub mod codec;
pub mod dataset;
pub mod harness;
pub mod label;
pub mod merge;
pub mod metrics;
pub mod report;
pub mod segments;
pub mod spec;

pub use label::{LabelMap, LabelTriple};
pub use spec::DatasetSpec;
