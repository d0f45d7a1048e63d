//! Diffusion schedule, score distillation, classifier-free guidance,
//! encoders and oracle priors.

mod cfg;
mod encoder;
pub mod external;
mod model;
mod oracle;
mod schedule;
mod sds;

pub use cfg::{cfg_combine, cfg_combine_extended, guided_eps, Guidance};
pub use encoder::{AvgPoolEncoder, Encoder, IdentityEncoder};
pub use model::{ConditionSet, GuidanceModel, ViewHint};
pub use oracle::{oracle_denoise, GaussianOraclePrior, MultiviewPrior};
pub use schedule::{DiffusionSchedule, SCHEDULE_CLIP};
pub use sds::{sds_gradient, sds_gradient_latent, sds_residual, SdsConfig, SdsStep, Weighting};
