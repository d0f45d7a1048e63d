use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Which optimization stage a draw is for; the fine stage zooms in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

pub const DISTANCE_RANGE: (f64, f64) = (1.5, 2.0);
pub const COARSE_FOCAL_RANGE: (f64, f64) = (0.7, 1.35);
pub const FINE_FOCAL_RANGE: (f64, f64) = (1.2, 1.8);
pub const ELEVATION_RANGE_DEG: (f64, f64) = (-15.0, 60.0);
pub const LIGHT_ANGLE_MAX: f64 = PI / 3.0;
pub const LIGHT_RADIUS_RANGE: (f64, f64) = (0.8, 1.5);

/// Pinhole camera. `focal` is relative to the sensor half-width, so a point
/// at camera-space `(x, y, z)` lands at normalized `f x / z` horizontally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

/// Camera-space axes in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraBasis {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl Camera {
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        Self {
            position,
            target,
            up: up.normalized(),
            focal,
            width,
            height,
        }
    }

    /// Camera on a sphere around the origin, y up. Angles in radians.
    pub fn orbit(distance: f64, azimuth: f64, elevation: f64, focal: f64, width: usize, height: usize) -> Self {
        let (se, ce) = elevation.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        let position = Vec3::new(ce * ca, se, ce * sa) * distance;
        Self::look_at(position, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), focal, width, height)
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn basis(&self) -> CameraBasis {
        let forward = (self.target - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        CameraBasis { right, up, forward }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    fn half_width(&self) -> f64 {
        0.5 * self.width as f64
    }

    /// Unit ray direction through image-plane point `(px, py)`; pixel
    /// `(i, j)` has its centre at `(i + 0.5, j + 0.5)` and `py` grows down.
    pub fn ray_dir(&self, px: f64, py: f64) -> Vec3 {
        let b = self.basis();
        let hw = self.half_width();
        let a = (px - hw) / (hw * self.focal);
        let c = (0.5 * self.height as f64 - py) / (hw * self.focal);
        (b.forward + b.right * a + b.up * c).normalized()
    }

    pub fn pixel_ray(&self, i: usize, j: usize) -> Vec3 {
        self.ray_dir(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Camera-space coordinates `(x, y, z)` with `z` along the view axis.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let b = self.basis();
        let d = p - self.position;
        Vec3::new(d.dot(b.right), d.dot(b.up), d.dot(b.forward))
    }

    /// Image-plane position and depth, or `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 1e-12 {
            return None;
        }
        let hw = self.half_width();
        let px = hw * (1.0 + self.focal * c.x / c.z);
        let py = 0.5 * self.height as f64 - hw * self.focal * c.y / c.z;
        Some((px, py, c.z))
    }

    /// Gradients of the projected `px` and `py` with respect to `p`.
    pub fn project_jacobian(&self, p: Vec3) -> (Vec3, Vec3) {
        let b = self.basis();
        let c = self.to_camera(p);
        let k = 0.5 * self.width as f64 * self.focal;
        let dx = (b.right / c.z - b.forward * (c.x / (c.z * c.z))) * k;
        let dy = (b.up / c.z - b.forward * (c.y / (c.z * c.z))) * -k;
        (dx, dy)
    }
}

/// Random orbit camera for a training view.
pub fn sample_camera(stage: Stage, width: usize, height: usize, rng: &mut impl Rng) -> Camera {
    let distance = rng.random_range(DISTANCE_RANGE.0..=DISTANCE_RANGE.1);
    let (f0, f1) = match stage {
        Stage::Coarse => COARSE_FOCAL_RANGE,
        Stage::Fine => FINE_FOCAL_RANGE,
    };
    let focal = rng.random_range(f0..=f1);
    let azimuth = rng.random_range(0.0..2.0 * PI);
    let elevation = rng
        .random_range(ELEVATION_RANGE_DEG.0..=ELEVATION_RANGE_DEG.1)
        .to_radians();
    Camera::orbit(distance, azimuth, elevation, focal, width, height)
}

/// Point light near the camera direction: angular offset `psi` from the
/// camera's direction seen from the origin, rotated by `phi` about it, at
/// radius `r`.
pub fn light_from_angles(camera: &Camera, psi: f64, phi: f64, r: f64) -> Vec3 {
    let c = camera.position.normalized();
    let helper = if c.y.abs() < 0.9 {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let e1 = c.cross(helper).normalized();
    let e2 = c.cross(e1);
    let d = c * psi.cos() + (e1 * phi.cos() + e2 * phi.sin()) * psi.sin();
    d * r
}

pub fn sample_light(camera: &Camera, rng: &mut impl Rng) -> Vec3 {
    let psi = rng.random_range(0.0..=LIGHT_ANGLE_MAX);
    let phi = rng.random_range(0.0..2.0 * PI);
    let r = rng.random_range(LIGHT_RADIUS_RANGE.0..=LIGHT_RADIUS_RANGE.1);
    light_from_angles(camera, psi, phi, r)
}
