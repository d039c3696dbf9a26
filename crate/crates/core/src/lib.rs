//! Growth-based evolutionary neural architecture search with a weight-sharing
//! supernet.
//!
//! Candidate networks grow block by block: at each growth stage an
//! evolutionary loop searches only the newest block, fitness comes from a
//! supernet whose weights are shared across all candidates, and between
//! stages the supernet is pruned down to the structures present in the elite
//! population. The [`engine`] module drives the whole loop; [`harness`]
//! provides configuration, Kendall-tau utilities and the ranking-fidelity
//! study.

pub mod data;
pub mod digest;
pub mod engine;
pub mod evaluators;
pub mod genome;
pub mod harness;
pub mod numkernel;
pub mod selection;
pub mod space;
pub mod supernet;
pub mod variation;

pub use genome::{BlockGenome, GenomeError, NetworkGenome, SkeletonSpec};
pub use selection::{Individual, Population, PotentialEstimate};
pub use space::{InputShape, ModelShape, OpSet, SpaceStats};
pub use supernet::SuperNet;
