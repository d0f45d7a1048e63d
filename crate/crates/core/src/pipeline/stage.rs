use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::StageTag;
use super::config::{CameraMode, RunConfig, ShadingMode};
use super::scene::{ring_azimuth, ring_camera};
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::guidance::{sds_residual, ConditionSet, Encoder, GuidanceModel, SdsConfig, SdsStep, ViewHint};
use crate::render_vol::{sample_camera, sample_shading, Camera, ShadingSample, Stage};
use crate::rng::{stream, Purpose};

/// One training view: camera, lighting and the hint handed to the prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewDraw {
    pub camera: Camera,
    pub shading: ShadingSample,
    pub azimuth: f64,
    pub index: Option<usize>,
}

impl ViewDraw {
    pub fn hint(&self) -> ViewHint {
        ViewHint {
            azimuth: self.azimuth,
            index: self.index,
        }
    }
}

/// Draw view `view` of iteration `iteration` from its own random streams.
pub fn draw_view(config: &RunConfig, stage: Stage, resolution: usize, iteration: u64, view: u64) -> ViewDraw {
    let seed = config.seed;
    let (camera, azimuth, index) = match &config.camera {
        CameraMode::Augmented => {
            let cam = sample_camera(stage, resolution, resolution, &mut stream(seed, iteration, view, Purpose::Camera));
            let az = cam.position.z.atan2(cam.position.x);
            (cam, az, None)
        }
        CameraMode::Orbit(ring) => {
            let k = stream(seed, iteration, view, Purpose::ViewIndex).random_range(0..ring.views);
            (ring_camera(ring, k, stage, resolution), ring_azimuth(ring, k), Some(k))
        }
    };
    let shading = match config.shading {
        ShadingMode::Augmented => sample_shading(&camera, &mut stream(seed, iteration, view, Purpose::Shading)),
        ShadingMode::Albedo => ShadingSample::albedo_only(),
    };
    ViewDraw {
        camera,
        shading,
        azimuth,
        index,
    }
}

/// Score-distillation residual for a rendered image, pulled back to pixels
/// through `encoder` when one is given. Returns the pixel gradient, scaled.
pub fn sds_pixel_grad(
    color: &Image,
    encoder: Option<&dyn Encoder>,
    model: &dyn GuidanceModel,
    cond: &ConditionSet,
    cfg: &SdsConfig,
    scale: f64,
    rng: &mut impl Rng,
) -> Result<(Image, SdsStep)> {
    let (mut g, step) = match encoder {
        Some(enc) => {
            let z = enc.encode(color)?;
            let step = sds_residual(&z, model, cond, cfg, rng)?;
            (enc.vjp(color, &step.grad)?, step)
        }
        None => {
            let step = sds_residual(color, model, cond, cfg, rng)?;
            (step.grad.clone(), step)
        }
    };
    for v in &mut g.data {
        *v *= scale;
    }
    Ok((g, step))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// Implied clean-image error of the score-distillation residual.
    pub sds: f64,
    pub opacity: f64,
    pub smoothness: f64,
    pub total: f64,
}

/// Per-iteration log record, written as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub stage: StageTag,
    pub iter: usize,
    pub loss: LossTerms,
    pub t: Vec<f64>,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

impl IterRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Serialize)]
pub(crate) struct ViewDiagnostic {
    pub draw: ViewDraw,
    pub t: f64,
    pub residual_rms: f64,
    pub x0_error: f64,
}

#[derive(Serialize)]
struct Dump<'a> {
    stage: StageTag,
    iteration: usize,
    detail: &'a str,
    views: &'a [ViewDiagnostic],
}

/// Build the non-finite error, writing the last batch to `dir` first when
/// a dump directory is configured.
pub(crate) fn non_finite(
    dir: Option<&Path>,
    stage: StageTag,
    iteration: usize,
    detail: &str,
    views: &[ViewDiagnostic],
) -> Error {
    if let Some(dir) = dir {
        let path = dir.join(format!("nonfinite-{iteration}.json"));
        let body = serde_json::to_string_pretty(&Dump {
            stage,
            iteration,
            detail,
            views,
        })
        .unwrap_or_default();
        match std::fs::write(&path, body) {
            Ok(()) => log::error!("non-finite state at iteration {iteration}; batch written to {}", path.display()),
            Err(e) => log::error!("could not write {}: {e}", path.display()),
        }
    }
    Error::NonFinite {
        iteration,
        detail: detail.to_string(),
    }
}
