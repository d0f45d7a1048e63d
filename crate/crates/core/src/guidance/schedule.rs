use std::f64::consts::FRAC_PI_2;

use crate::frame::Image;

/// Distance of the signal fraction from 0 and 1 at the ends of the schedule.
pub const SCHEDULE_CLIP: f64 = 1e-4;

/// Cosine variance-preserving schedule over continuous time `t` in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiffusionSchedule;

impl DiffusionSchedule {
    /// Signal variance fraction, squeezed affinely into
    /// `[clip, 1 - clip]` so it stays strictly decreasing.
    pub fn alpha_bar(&self, t: f64) -> f64 {
        let c = (FRAC_PI_2 * t).cos();
        SCHEDULE_CLIP + (1.0 - 2.0 * SCHEDULE_CLIP) * c * c
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// `sqrt(alpha_bar) x + sigma eps`.
    pub fn add_noise(&self, x: &Image, eps: &Image, t: f64) -> Image {
        let a = self.alpha_bar(t).sqrt();
        let s = self.sigma(t);
        Image {
            data: x.data.iter().zip(&eps.data).map(|(x, e)| a * x + s * e).collect(),
            ..x.clone()
        }
    }
}
