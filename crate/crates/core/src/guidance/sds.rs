use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cfg::{guided_eps, Guidance};
use super::encoder::Encoder;
use super::model::{ConditionSet, GuidanceModel};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::render_vol::{RenderOutput, Tape};

/// Per-timestep weight on the residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w(t) = 1`.
    Unit,
    /// `w(t) = sigma(t)^2`.
    NoiseVariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdsConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub weighting: Weighting,
    pub guidance: Guidance,
}

impl SdsConfig {
    pub fn coarse() -> Self {
        Self {
            t_min: 0.0,
            t_max: 1.0,
            weighting: Weighting::Unit,
            guidance: Guidance::default(),
        }
    }

    pub fn fine() -> Self {
        Self {
            t_min: 0.02,
            t_max: 0.5,
            weighting: Weighting::NoiseVariance,
            guidance: Guidance::default(),
        }
    }

    pub fn with_guidance(mut self, guidance: Guidance) -> Self {
        self.guidance = guidance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_min && self.t_min < self.t_max && self.t_max <= 1.0) {
            return Err(Error::config(format!(
                "timestep range [{}, {}] must satisfy 0 <= t_min < t_max <= 1",
                self.t_min, self.t_max
            )));
        }
        self.guidance.validate()
    }

    pub fn weight(&self, t: f64) -> f64 {
        match self.weighting {
            Weighting::Unit => 1.0,
            Weighting::NoiseVariance => {
                let s = DiffusionSchedule.sigma(t);
                s * s
            }
        }
    }
}

/// One score-distillation draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SdsStep {
    pub t: f64,
    pub weight: f64,
    /// `w(t) (eps_guided - eps)`, the gradient on the denoiser input.
    pub grad: Image,
    /// Root mean square of `eps_guided - eps`.
    pub residual_rms: f64,
    /// Implied clean-image error `(sigma^2 / alpha_bar) mean (eps_guided - eps)^2`.
    pub x0_error: f64,
}

/// Draw `t` then `eps` (in that order) and form the weighted residual for
/// image `x`. The denoiser output is a constant here.
pub fn sds_residual(
    x: &Image,
    model: &dyn GuidanceModel,
    cond: &ConditionSet,
    cfg: &SdsConfig,
    rng: &mut impl Rng,
) -> Result<SdsStep> {
    cfg.validate()?;
    if model.native_resolution() != (x.width, x.height) {
        let (w, h) = model.native_resolution();
        return Err(Error::config(format!(
            "model expects {w}x{h} input, got {}x{}",
            x.width, x.height
        )));
    }
    let schedule = DiffusionSchedule;
    let t = cfg.t_min + (cfg.t_max - cfg.t_min) * rng.random::<f64>();
    let eps = Image {
        data: (0..x.data.len()).map(|_| rng.sample(StandardNormal)).collect(),
        ..x.clone()
    };
    let x_t = schedule.add_noise(x, &eps, t);
    let guided = guided_eps(model, &x_t, cond, t, &cfg.guidance)?;
    let weight = cfg.weight(t);
    let mut sq = 0.0;
    let grad = Image {
        data: guided
            .data
            .iter()
            .zip(&eps.data)
            .map(|(g, e)| {
                let r = g - e;
                sq += r * r;
                weight * r
            })
            .collect(),
        ..x.clone()
    };
    let n = x.data.len().max(1) as f64;
    let a = schedule.alpha_bar(t);
    let s = schedule.sigma(t);
    Ok(SdsStep {
        t,
        weight,
        grad,
        residual_rms: (sq / n).sqrt(),
        x0_error: s * s / a * sq / n,
    })
}

/// Pixel-space score distillation through a render's tape.
pub fn sds_gradient<T: Tape>(
    render: &RenderOutput<T>,
    model: &dyn GuidanceModel,
    cond: &ConditionSet,
    cfg: &SdsConfig,
    rng: &mut impl Rng,
) -> Result<(T::Grad, SdsStep)> {
    let tape = render.tape()?;
    let step = sds_residual(&render.color, model, cond, cfg, rng)?;
    let grad = tape.backward(&step.grad, None)?;
    Ok((grad, step))
}

/// Latent score distillation: the residual is formed on `encode(x)` and
/// pulled back through the encoder's Jacobian before the render's tape.
pub fn sds_gradient_latent<T: Tape>(
    render: &RenderOutput<T>,
    encoder: &dyn Encoder,
    model: &dyn GuidanceModel,
    cond: &ConditionSet,
    cfg: &SdsConfig,
    rng: &mut impl Rng,
) -> Result<(T::Grad, SdsStep)> {
    let tape = render.tape()?;
    let z = encoder.encode(&render.color)?;
    let step = sds_residual(&z, model, cond, cfg, rng)?;
    let g_x = encoder.vjp(&render.color, &step.grad)?;
    let grad = tape.backward(&g_x, None)?;
    Ok((grad, step))
}
