//! Optimization stages, checkpoints and export.

pub mod adam;
pub mod checkpoint;
pub mod coarse;
pub mod config;
pub mod edit;
pub mod export;
pub mod fine;
pub mod scene;
pub mod stage;

pub use adam::{Adam, AdamGroup};
pub use checkpoint::{Checkpoint, StageTag, TetState};
pub use coarse::{run_coarse, CoarseModel, CoarseSession};
pub use config::*;
pub use edit::{edit_from_coarse, edit_from_coarse_with, EditResult};
pub use export::{bake_texture, export_mesh, parse_obj, read_obj, ExportOptions, ExportedFiles, ObjMesh, TextureAtlas};
pub use fine::{init_fine_from_coarse, run_fine, FineSession, TetScene};
pub use scene::{coarse_oracle, fine_oracle, ring_azimuth, ring_camera, ring_targets, Palette, SyntheticScene, TARGET_SUPERSAMPLE};
pub use stage::{draw_view, IterRecord, LossTerms, ViewDraw};
