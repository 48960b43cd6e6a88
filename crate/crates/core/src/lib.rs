//! Action-conditioned scene graph exploration in a simulated voxel world.

pub mod acsg;
pub mod catalog;
pub mod explorer;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod percept;
pub mod policy;
pub mod worldsim;
