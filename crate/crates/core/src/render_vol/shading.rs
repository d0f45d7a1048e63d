use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::{sample_light, Camera};
use crate::math::{normalize_backward, Vec3};

/// Lighting and augmentation parameters for one rendered view.
///
/// `texture_mix` (u) blends unlit albedo (0) with fully shaded color (1);
/// `whiteness_mix` (v) blends albedo (0) with white (1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadingSample {
    pub light: Vec3,
    pub ambient: f64,
    pub diffuse: f64,
    pub texture_mix: f64,
    pub whiteness_mix: f64,
}

/// Gradients of one shaded color with respect to its inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ShadeGrad {
    pub albedo: Vec3,
    pub normal: Vec3,
    pub point: Vec3,
}

impl ShadingSample {
    /// Plain albedo: no lighting and no whitening.
    pub fn albedo_only() -> Self {
        Self {
            light: Vec3::new(0.0, 0.0, 1.0),
            ambient: 1.0,
            diffuse: 0.0,
            texture_mix: 0.0,
            whiteness_mix: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.ambient, self.diffuse, self.texture_mix, self.whiteness_mix]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
            && self.light.is_finite()
    }

    /// Whether shading reads the surface normal at all.
    pub fn uses_normals(&self) -> bool {
        self.texture_mix > 0.0 && self.diffuse > 0.0
    }

    fn effective_albedo(&self, albedo: Vec3) -> Vec3 {
        albedo * (1.0 - self.whiteness_mix) + Vec3::splat(self.whiteness_mix)
    }

    fn light_factor(&self, normal: Vec3, point: Vec3) -> (f64, Vec3, f64) {
        let to_light = self.light - point;
        let l = to_light.normalized();
        let ndl = normal.dot(l);
        let lam = ndl.max(0.0);
        let u = self.texture_mix;
        (1.0 - u + u * (self.ambient + self.diffuse * lam), l, ndl)
    }

    /// Lambertian color at a surface point with unit normal.
    pub fn shade(&self, albedo: Vec3, normal: Vec3, point: Vec3) -> Vec3 {
        let a = self.effective_albedo(albedo);
        if !self.uses_normals() {
            let u = self.texture_mix;
            return a * (1.0 - u + u * self.ambient);
        }
        let (m, _, _) = self.light_factor(normal, point);
        a * m
    }

    pub fn shade_backward(&self, albedo: Vec3, normal: Vec3, point: Vec3, grad: Vec3) -> ShadeGrad {
        let a = self.effective_albedo(albedo);
        if !self.uses_normals() {
            let u = self.texture_mix;
            let m = 1.0 - u + u * self.ambient;
            return ShadeGrad {
                albedo: grad * (m * (1.0 - self.whiteness_mix)),
                ..Default::default()
            };
        }
        let (m, l, ndl) = self.light_factor(normal, point);
        let mut g = ShadeGrad {
            albedo: grad * (m * (1.0 - self.whiteness_mix)),
            ..Default::default()
        };
        if ndl > 0.0 {
            let dm = grad.dot(a) * self.texture_mix * self.diffuse;
            g.normal = l * dm;
            // l = normalize(light - point)
            g.point = -normalize_backward(self.light - point, normal * dm);
        }
        g
    }
}

/// Augmentation draw: light near the camera, ambient/diffuse split and the
/// two soft mixing factors.
pub fn sample_shading(camera: &Camera, rng: &mut impl Rng) -> ShadingSample {
    let light = sample_light(camera, rng);
    let ambient = rng.random_range(0.1..=0.4);
    ShadingSample {
        light,
        ambient,
        diffuse: 1.0 - ambient,
        texture_mix: rng.random_range(0.0..=1.0),
        whiteness_mix: rng.random_range(0.0..=1.0),
    }
}
