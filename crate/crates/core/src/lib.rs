//! Mechanical search over heaps of extruded objects, driven by exact target
//! occupancy distributions.
//!
//! - [`scene`]: footprints, poses, rasterization and the flat-stack settle rule.
//! - [`sensor`]: overhead depth, modal and amodal masks, observations.
//! - [`occupancy`]: candidate-pose enumeration, occupancy distributions,
//!   support, surrogate reward and distribution metrics.
//! - [`heapgen`]: seeded heap generation.
//! - [`search`]: grasp model, X-Ray / Largest / Random policies, rollouts.
//! - [`bench`]: paired policy comparison.
//! - [`datasetio`]: binary dataset shards and manifests.

pub mod bench;
pub mod datasetio;
pub mod error;
pub mod heapgen;
pub mod occupancy;
pub mod raster;
pub mod scene;
pub mod search;
pub mod sensor;

pub use error::{Error, Result};
pub use occupancy::{CandidateGrid, OccupancyDistribution};
pub use raster::{DepthImage, Dims, HeightField, Mask};
pub use scene::{Footprint, ObjectId, ObjectInstance, Pose, Scene};
pub use search::{PolicyKind, RolloutRecord, SearchConfig};
