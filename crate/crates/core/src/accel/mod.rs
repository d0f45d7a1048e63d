//! Occupancy caching and octree-based empty-space skipping.

mod occupancy;
mod octree;

pub use occupancy::{OccupancyConfig, OccupancyGrid};
pub use octree::{LeafSpan, Octree, RaySamples};
