use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CameraMode, OrbitRing, RunConfig};
use crate::error::{Error, Result};
use crate::frame::Image;
use crate::guidance::MultiviewPrior;
use crate::math::{ray_box, Vec3};
use crate::render_vol::{Camera, Stage};

/// Colour scheme of the synthetic scene. `Swapped` keeps the geometry and
/// replaces every albedo with an inverted, channel-rotated one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Original,
    Swapped,
}

/// A textured sphere next to a textured box, used as a ground-truth scene
/// for oracle-driven runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub sphere_center: Vec3,
    pub sphere_radius: f64,
    pub box_center: Vec3,
    pub box_half: Vec3,
    pub background: Vec3,
    pub palette: Palette,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self {
            sphere_center: Vec3::new(-0.22, 0.0, 0.0),
            sphere_radius: 0.32,
            box_center: Vec3::new(0.25, -0.05, 0.0),
            box_half: Vec3::new(0.18, 0.26, 0.2),
            background: Vec3::splat(0.5),
            palette: Palette::Original,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Sphere,
    Box,
}

impl SyntheticScene {
    pub fn with_palette(mut self, palette: Palette) -> Self {
        self.palette = palette;
        self
    }

    pub fn sdf(&self, p: Vec3) -> f64 {
        let s = (p - self.sphere_center).norm() - self.sphere_radius;
        let q = p - self.box_center;
        let d = Vec3::new(q.x.abs(), q.y.abs(), q.z.abs()) - self.box_half;
        let outside = Vec3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
        let b = outside + d.x.max(d.y).max(d.z).min(0.0);
        s.min(b)
    }

    fn part_at(&self, p: Vec3) -> Part {
        let s = (p - self.sphere_center).norm() - self.sphere_radius;
        let q = p - self.box_center;
        let d = Vec3::new(q.x.abs(), q.y.abs(), q.z.abs()) - self.box_half;
        let b = Vec3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm() + d.x.max(d.y).max(d.z).min(0.0);
        if s <= b {
            Part::Sphere
        } else {
            Part::Box
        }
    }

    /// Surface colour at (or near) `p`.
    pub fn albedo(&self, p: Vec3) -> Vec3 {
        let base = match self.part_at(p) {
            Part::Sphere => Vec3::new(
                0.5 + 0.3 * (5.0 * p.y + 1.0).sin(),
                0.45 + 0.3 * (5.0 * p.z + 2.0).sin(),
                0.4 + 0.3 * (4.0 * p.x).cos(),
            ),
            Part::Box => Vec3::new(
                0.4 + 0.3 * (4.0 * p.y).cos(),
                0.55 + 0.25 * (4.0 * p.z + 0.5).sin(),
                0.5 + 0.3 * (5.0 * p.x + 1.5).sin(),
            ),
        };
        match self.palette {
            Palette::Original => base,
            Palette::Swapped => Vec3::new(1.0 - base.z, 1.0 - base.x, 1.0 - base.y),
        }
    }

    /// Nearest surface hit along a ray, as a distance.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let mut best: Option<f64> = None;
        let oc = origin - self.sphere_center;
        let b = oc.dot(dir);
        let c = oc.dot(oc) - self.sphere_radius * self.sphere_radius;
        let disc = b * b - c;
        if disc >= 0.0 {
            let t = -b - disc.sqrt();
            if t > 0.0 {
                best = Some(t);
            }
        }
        if let Some((t0, _)) = ray_box(origin, dir, self.box_center - self.box_half, self.box_center + self.box_half) {
            if t0 > 0.0 && best.is_none_or(|s| t0 < s) {
                best = Some(t0);
            }
        }
        best
    }

    /// Albedo-only render averaging a regular `supersample` x `supersample`
/// grid of subpixels.
    pub fn render(&self, camera: &Camera, supersample: usize) -> Image {
        let (w, h) = (camera.width, camera.height);
        let n = supersample.max(1);
        let rows: Vec<Vec<Vec3>> = (0..h)
            .into_par_iter()
            .map(|j| {
                (0..w)
                    .map(|i| {
                        let mut acc = Vec3::ZERO;
                        for sy in 0..n {
                            for sx in 0..n {
                                let px = i as f64 + (sx as f64 + 0.5) / n as f64;
                                let py = j as f64 + (sy as f64 + 0.5) / n as f64;
                                let d = camera.ray_dir(px, py);
                                acc += match self.intersect(camera.position, d) {
                                    Some(t) => self.albedo(camera.position + d * t),
                                    None => self.background,
                                };
                            }
                        }
                        acc / (n * n) as f64
                    })
                    .collect()
            })
            .collect();
        Image::from_rgb(w, h, &rows.concat())
    }
}

/// Azimuth of ring view `k`.
pub fn ring_azimuth(ring: &OrbitRing, k: usize) -> f64 {
    k as f64 * TAU / ring.views as f64
}

pub fn ring_camera(ring: &OrbitRing, k: usize, stage: Stage, resolution: usize) -> Camera {
    let focal = match stage {
        Stage::Coarse => ring.coarse_focal,
        Stage::Fine => ring.fine_focal,
    };
    Camera::orbit(
        ring.distance,
        ring_azimuth(ring, k),
        ring.elevation_deg.to_radians(),
        focal,
        resolution,
        resolution,
    )
}

/// Supersampled target image for every ring view.
pub fn ring_targets(scene: &SyntheticScene, ring: &OrbitRing, stage: Stage, resolution: usize, supersample: usize) -> Vec<Image> {
    (0..ring.views)
        .map(|k| scene.render(&ring_camera(ring, k, stage, resolution), supersample))
        .collect()
}

fn orbit_ring(config: &RunConfig) -> Result<&OrbitRing> {
    match &config.camera {
        CameraMode::Orbit(r) => Ok(r),
        CameraMode::Augmented => Err(Error::config("a scene oracle needs orbit cameras (camera.mode = \"orbit\")")),
    }
}

/// Supersampling used for oracle targets.
pub const TARGET_SUPERSAMPLE: usize = 4;

/// Pixel-space oracle for the coarse stage: one target per ring view at
/// the coarse resolution.
pub fn coarse_oracle(scene: &SyntheticScene, config: &RunConfig) -> Result<MultiviewPrior> {
    let ring = orbit_ring(config)?;
    let targets = ring_targets(scene, ring, Stage::Coarse, config.coarse.resolution, TARGET_SUPERSAMPLE);
    MultiviewPrior::from_views(targets, 0.0)
}

/// Latent oracle for the mesh stage: targets at the latent resolution of
/// the fine render, seen through the zoomed fine-stage cameras. With
/// `latent_factor`² subpixels per target pixel, a target is exactly the
/// pooled encoding of a point-sampled full-resolution render.
pub fn fine_oracle(scene: &SyntheticScene, config: &RunConfig) -> Result<MultiviewPrior> {
    let ring = orbit_ring(config)?;
    let f = config.fine.latent_factor;
    let latent = config.fine.resolution / f;
    let targets = ring_targets(scene, ring, Stage::Fine, latent, f);
    Ok(MultiviewPrior::from_views(targets, 0.0)?.latent())
}
