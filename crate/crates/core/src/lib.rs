//! Analysis toolkit for whole-body CT segmentations.
//!
//! Covers the non-learning half of a segmentation study: NIfTI-1 volume I/O,
//! isotropic resampling, the 104-structure registry, label algebra (part
//! merging, connected components, rib instance splitting), Dice and normalized
//! surface distance with bootstrap aggregation, nonparametric statistics, and
//! cohort morphometry (volume and attenuation against age).
//!
//! Data-parallel loops run on rayon when the default `parallel` feature is on;
//! results never depend on the execution mode or thread count.

pub mod edt;
pub mod error;
pub mod labelops;
pub mod metrics;
pub mod morphometry;
pub mod par;
pub mod phantom;
pub mod report;
pub mod resample;
pub mod stats;
pub mod taxonomy;
pub mod volio;
pub mod volume;

pub use error::{Error, Result};
pub use par::Execution;
pub use taxonomy::{Group, Structure, StructureRegistry};
pub use volume::{BinaryMask, Grid, LabelMap, Volume3D};
