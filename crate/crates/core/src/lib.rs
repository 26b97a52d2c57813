//! Algorithmic core of a source-free segmentation adaptation pipeline:
//! Beta-prior refinement of predicted masks, prompt canonicalization,
//! prompt corruption benchmarks, histogram equalization, adaptation-set
//! assembly and segmentation metrics.

pub mod chaos;
pub mod components;
pub mod events;
pub mod imgproc;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod plausibility;
pub mod prompts;
pub mod rng;
pub mod tensor_io;

pub use components::{extract_components, Component, ComponentSet, Connectivity};
pub use model::{Grid, GridImage, LabelMask, ProbabilityMap, SampleFormat};
pub use plausibility::{load_priors, refine_mask, PriorsTable, RefinementReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
