//! Cameras, shading augmentations and differentiable volume rendering.

mod camera;
mod shading;
mod volume;

pub use camera::{
    light_from_angles, sample_camera, sample_light, Camera, CameraBasis, Stage, COARSE_FOCAL_RANGE,
    DISTANCE_RANGE, ELEVATION_RANGE_DEG, FINE_FOCAL_RANGE, LIGHT_ANGLE_MAX, LIGHT_RADIUS_RANGE,
};
pub use shading::{sample_shading, ShadeGrad, ShadingSample};
pub use volume::{
    opacity_regularizer, render_volume, RenderSettings, VolumeGrad, VolumeTape, OPACITY_EPS,
};

use crate::error::{Error, Result};
use crate::frame::Image;
use crate::math::Vec3;

/// Reverse pass of a render: maps image-space gradients to scene gradients.
pub trait Tape {
    type Grad;
    fn backward(&self, grad_color: &Image, grad_alpha: Option<&[f64]>) -> Result<Self::Grad>;
}

/// A rendered view. `alpha` and `hit_coords` are row-major per pixel; the
/// tape is `None` once detached.
pub struct RenderOutput<T> {
    pub color: Image,
    pub alpha: Vec<f64>,
    pub hit_coords: Vec<Option<Vec3>>,
    pub tape: Option<T>,
}

impl<T> RenderOutput<T> {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    pub fn alpha_image(&self) -> Image {
        Image {
            width: self.color.width,
            height: self.color.height,
            channels: 1,
            data: self.alpha.clone(),
        }
    }

    pub fn detach(self) -> RenderOutput<()> {
        RenderOutput {
            color: self.color,
            alpha: self.alpha,
            hit_coords: self.hit_coords,
            tape: None,
        }
    }

    pub fn tape(&self) -> Result<&T> {
        self.tape.as_ref().ok_or(Error::DetachedTape)
    }
}

impl<T: Tape> RenderOutput<T> {
    pub fn backward(&self, grad_color: &Image, grad_alpha: Option<&[f64]>) -> Result<T::Grad> {
        self.tape()?.backward(grad_color, grad_alpha)
    }
}
