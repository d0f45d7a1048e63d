use std::f64::consts::TAU;

use super::model::{ConditionSet, GuidanceModel};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::frame::Image;

/// Noise predictor that is exactly optimal for data distributed as
/// `N(mean, std^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOraclePrior {
    pub mean: Image,
    pub std: f64,
    pub schedule: DiffusionSchedule,
}

impl GaussianOraclePrior {
    pub fn new(mean: Image, std: f64) -> Self {
        Self {
            mean,
            std,
            schedule: DiffusionSchedule,
        }
    }
}

/// Posterior-mean noise prediction for Gaussian data, elementwise:
/// `E[x | x_t] = (a s^2 x_t / sqrt(a) + sigma^2 m) / (a s^2 + sigma^2)` and
/// `eps = (x_t - sqrt(a) E[x | x_t]) / sigma`, which simplifies to
/// `sigma (x_t - sqrt(a) m) / (a s^2 + sigma^2)`.
pub fn oracle_denoise(prior: &GaussianOraclePrior, x_t: &Image, t: f64) -> Image {
    gaussian_eps(&prior.mean, prior.std, &prior.schedule, x_t, t)
}

fn gaussian_eps(mean: &Image, std: f64, schedule: &DiffusionSchedule, x_t: &Image, t: f64) -> Image {
    let a = schedule.alpha_bar(t);
    let sa = a.sqrt();
    let sigma = schedule.sigma(t);
    let k = sigma / (a * std * std + sigma * sigma);
    Image {
        data: x_t
            .data
            .iter()
            .zip(&mean.data)
            .map(|(x, m)| k * (x - sa * m))
            .collect(),
        ..x_t.clone()
    }
}

fn check_shape(x: &Image, mean: &Image) -> Result<()> {
    if x.same_shape(mean) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "denoiser input {:?} does not match prior resolution {:?}",
            x.shape(),
            mean.shape()
        )))
    }
}

impl GuidanceModel for GaussianOraclePrior {
    fn denoise(&self, x_t: &Image, _cond: &ConditionSet, t: f64) -> Result<Image> {
        check_shape(x_t, &self.mean)?;
        Ok(oracle_denoise(self, x_t, t))
    }

    fn native_resolution(&self) -> (usize, usize) {
        (self.mean.width, self.mean.height)
    }
}

/// Gaussian oracle whose mean is the target image of the view bin the
/// camera falls in. The null condition sees a broad gray prior instead, so
/// guidance weights above one extrapolate away from gray.
#[derive(Clone, Debug)]
pub struct MultiviewPrior {
    targets: Vec<Option<Image>>,
    pub std: f64,
    pub null_mean: f64,
    pub null_std: f64,
    pub latent: bool,
    schedule: DiffusionSchedule,
    resolution: (usize, usize),
}

impl MultiviewPrior {
    /// `targets[k]` covers azimuths around `k * 2 pi / targets.len()`.
    pub fn new(targets: Vec<Option<Image>>, std: f64) -> Result<Self> {
        let first = targets
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| Error::config("multiview prior needs at least one target"))?;
        let resolution = (first.width, first.height);
        if targets.iter().flatten().any(|t| !t.same_shape(first)) {
            return Err(Error::config("multiview targets must share one shape"));
        }
        Ok(Self {
            targets,
            std,
            null_mean: 0.5,
            null_std: 0.5,
            latent: false,
            schedule: DiffusionSchedule,
            resolution,
        })
    }

    pub fn from_views(targets: Vec<Image>, std: f64) -> Result<Self> {
        Self::new(targets.into_iter().map(Some).collect(), std)
    }

    /// Mark the prior as acting on encoder latents.
    pub fn latent(mut self) -> Self {
        self.latent = true;
        self
    }

    pub fn bins(&self) -> usize {
        self.targets.len()
    }

    pub fn target(&self, bin: usize) -> Option<&Image> {
        self.targets.get(bin).and_then(|t| t.as_ref())
    }

    fn bin_of(&self, azimuth: f64) -> usize {
        let n = self.targets.len();
        let u = azimuth.rem_euclid(TAU) / TAU * n as f64;
        (u.round() as usize) % n
    }

    /// The target used for a call: the indexed view when given, otherwise
    /// the azimuth bin; empty bins fall back to the nearest filled one.
    pub fn select(&self, cond: &ConditionSet) -> &Image {
        let n = self.targets.len();
        let bin = match cond.view {
            Some(v) => v.index.filter(|k| *k < n).unwrap_or_else(|| self.bin_of(v.azimuth)),
            None => 0,
        };
        if let Some(t) = &self.targets[bin] {
            return t;
        }
        log::warn!("no target in view bin {bin}; using nearest bin");
        (1..=n / 2 + 1)
            .flat_map(|d| [(bin + d) % n, (bin + n - d % n) % n])
            .find_map(|k| self.targets[k].as_ref())
            .expect("at least one target exists")
    }
}

impl GuidanceModel for MultiviewPrior {
    fn denoise(&self, x_t: &Image, cond: &ConditionSet, t: f64) -> Result<Image> {
        if cond.is_null() {
            let mean = Image {
                data: vec![self.null_mean; x_t.data.len()],
                ..x_t.clone()
            };
            return Ok(gaussian_eps(&mean, self.null_std, &self.schedule, x_t, t));
        }
        let target = self.select(cond);
        check_shape(x_t, target)?;
        Ok(gaussian_eps(target, self.std, &self.schedule, x_t, t))
    }

    fn native_resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn is_latent(&self) -> bool {
        self.latent
    }
}
