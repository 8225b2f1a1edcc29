//! Simulation and analysis toolkit for a fibre-integrated quantum-memory node.

pub mod analytic;
pub mod analyzer;
pub mod correlate;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod linalg;
pub mod memory;
pub mod pipeline;
pub mod povm;
pub mod scenario;
pub mod source;
pub mod state;
pub mod tags;
pub mod tomography;

pub use analyzer::{DetectorParams, MzParams};
pub use correlate::{CoincidenceHistogram, Estimate, SlotGrid};
pub use error::{Error, Result};
pub use experiment::{DecayScanReport, RunReport, Tier, TomographyReport};
pub use fit::FitResult;
pub use linalg::ComplexMatrix;
pub use memory::{AfcParams, MemoryMode};
pub use pipeline::{CountSummary, PipelineOutput, RunStats};
pub use povm::{PovmElement, PovmSet, Slot};
pub use scenario::{Layout, Scenario};
pub use source::SourceParams;
pub use state::{Bloch, DensityMatrix};
pub use tags::{Channel, Tag, TimeTagStream};
pub use tomography::{TomographyCounts, TomographySetting};
