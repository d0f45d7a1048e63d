//! Text-to-3D synthesis by score distillation: a hash-grid neural field
//! rendered volumetrically, refined into a textured triangle mesh.

pub mod accel;
pub mod error;
pub mod field;
pub mod frame;
pub mod geometry;
pub mod guidance;
pub mod math;
pub mod params;
pub mod pipeline;
pub mod render_mesh;
pub mod render_vol;
pub mod rng;

pub use error::{Error, Result};
pub use math::Vec3;
