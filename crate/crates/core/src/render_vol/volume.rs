use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use super::shading::ShadingSample;
use super::{RenderOutput, Tape};
use crate::accel::Octree;
use crate::error::{Error, Result};
use crate::field::{EnvScratch, EnvironmentMap, RadianceField, SampleGrad};
use crate::frame::Image;
use crate::math::Vec3;
use crate::params::ParamSet;

/// Smoothing constant inside the opacity penalty.
pub const OPACITY_EPS: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Strata along the box chord of each ray.
    pub max_samples: usize,
    /// Stop marching once transmittance drops below this; 0 disables.
    pub min_transmittance: f64,
    /// Fixed number of partial-gradient buffers summed in order, so results
    /// do not depend on the thread count.
    pub reduction_lanes: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            max_samples: 1024,
            min_transmittance: 0.0,
            reduction_lanes: 4,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct RayRecord {
    dir: Vec3,
    t: Vec<f64>,
    delta: Vec<f64>,
    sigma: Vec<f64>,
    color: Vec<Vec3>,
    background: Vec3,
}

/// Recorded forward pass of `render_volume`.
pub struct VolumeTape<'a, F: RadianceField> {
    field: &'a F,
    env: &'a EnvironmentMap,
    shading: ShadingSample,
    origin: Vec3,
    width: usize,
    height: usize,
    lanes: usize,
    rays: Vec<RayRecord>,
}

/// Gradients of a volume render with respect to the field and the
/// environment map.
pub struct VolumeGrad<G> {
    pub field: G,
    pub env: EnvironmentMap,
}

impl<F: RadianceField> VolumeTape<'_, F> {
    pub fn num_samples(&self) -> usize {
        self.rays.iter().map(|r| r.t.len()).sum()
    }
}

/// Emission-absorption rendering of `field` over the octree's occupied
/// leaves, composited over the environment map.
pub fn render_volume<'a, F: RadianceField>(
    field: &'a F,
    env: &'a EnvironmentMap,
    octree: &Octree,
    camera: &Camera,
    shading: &ShadingSample,
    settings: &RenderSettings,
) -> Result<RenderOutput<VolumeTape<'a, F>>> {
    if settings.max_samples == 0 || camera.width == 0 || camera.height == 0 {
        return Err(Error::config("render needs a positive resolution and sample count"));
    }
    let (w, h) = (camera.width, camera.height);
    let want_normal = shading.uses_normals();
    let origin = camera.position;
    let rows: Vec<Result<Vec<(RayRecord, f64, Vec3, Option<Vec3>)>>> = (0..h)
        .into_par_iter()
        .map(|j| {
            let mut scratch = field.new_scratch();
            let mut env_s = EnvScratch::default();
            let mut row = Vec::with_capacity(w);
            for i in 0..w {
                let dir = camera.pixel_ray(i, j);
                let samples = octree.sample_ray(origin, dir, settings.max_samples, 0.5);
                let mut rec = RayRecord {
                    dir,
                    background: env.eval_with(dir, &mut env_s),
                    ..Default::default()
                };
                let mut trans = 1.0;
                let mut fg = Vec3::ZERO;
                let mut alpha = 0.0;
                let mut depth = 0.0;
                for (&t, &dt) in samples.t.iter().zip(&samples.delta) {
                    let p = origin + dir * t;
                    let s = field.query(p, want_normal, &mut scratch)?;
                    let c = shading.shade(s.albedo, s.normal, p);
                    let a = 1.0 - (-s.density * dt).exp();
                    let wgt = trans * a;
                    fg += c * wgt;
                    alpha += wgt;
                    depth += wgt * t;
                    trans *= 1.0 - a;
                    rec.t.push(t);
                    rec.delta.push(dt);
                    rec.sigma.push(s.density);
                    rec.color.push(c);
                    if trans < settings.min_transmittance {
                        break;
                    }
                }
                let color = fg + rec.background * (1.0 - alpha);
                let hit = (alpha > 1e-6).then(|| origin + dir * (depth / alpha.max(1e-6)));
                row.push((rec, alpha, color, hit));
            }
            Ok(row)
        })
        .collect();
    let mut color = Image::zeros(w, h, 3);
    let mut alpha = Vec::with_capacity(w * h);
    let mut hit_coords = Vec::with_capacity(w * h);
    let mut rays = Vec::with_capacity(w * h);
    for (j, row) in rows.into_iter().enumerate() {
        for (i, (rec, a, c, hit)) in row?.into_iter().enumerate() {
            color.set_rgb(i, j, c);
            alpha.push(a);
            hit_coords.push(hit);
            rays.push(rec);
        }
    }
    Ok(RenderOutput {
        color,
        alpha,
        hit_coords,
        tape: Some(VolumeTape {
            field,
            env,
            shading: *shading,
            origin,
            width: w,
            height: h,
            lanes: settings.reduction_lanes.max(1),
            rays,
        }),
    })
}

impl<F: RadianceField> VolumeTape<'_, F> {
    fn ray_backward(
        &self,
        ray: &RayRecord,
        g_c: Vec3,
        g_a: f64,
        scratch: &mut F::Scratch,
        env_s: &mut EnvScratch,
        field_grad: &mut F::Grad,
        env_grad: &mut EnvironmentMap,
    ) -> Result<()> {
        let n = ray.t.len();
        // forward quantities
        let mut trans = Vec::with_capacity(n + 1);
        trans.push(1.0);
        let mut weights = Vec::with_capacity(n);
        let mut alpha = 0.0;
        for k in 0..n {
            let tk = trans[k];
            let e = (-ray.sigma[k] * ray.delta[k]).exp();
            weights.push(tk * (1.0 - e));
            alpha += tk * (1.0 - e);
            trans.push(tk * e);
        }
        let bg = ray.background;
        // s_k = dL/dw_k
        let s: Vec<f64> = ray
            .color
            .iter()
            .map(|c| g_c.dot(*c) + g_a - g_c.dot(bg))
            .collect();
        let mut suffix = vec![0.0; n + 1];
        for k in (0..n).rev() {
            suffix[k] = suffix[k + 1] + weights[k] * s[k];
        }
        let want_normal = self.shading.uses_normals();
        for k in 0..n {
            let d_sigma = ray.delta[k] * (trans[k + 1] * s[k] - suffix[k + 1]);
            let d_c = g_c * weights[k];
            if d_sigma == 0.0 && d_c == Vec3::ZERO {
                continue;
            }
            let p = self.origin + ray.dir * ray.t[k];
            let smp = self.field.query(p, want_normal, scratch)?;
            let sg = self.shading.shade_backward(smp.albedo, smp.normal, p, d_c);
            let g = SampleGrad {
                density: d_sigma,
                albedo: sg.albedo,
                normal: sg.normal,
            };
            self.field.backward_params(p, want_normal, scratch, &g, field_grad);
        }
        let d_bg = g_c * (1.0 - alpha);
        if d_bg != Vec3::ZERO {
            self.env.eval_with(ray.dir, env_s);
            self.env.backward_with(env_s, d_bg, env_grad);
        }
        Ok(())
    }
}

impl<F: RadianceField> Tape for VolumeTape<'_, F> {
    type Grad = VolumeGrad<F::Grad>;

    fn backward(&self, grad_color: &Image, grad_alpha: Option<&[f64]>) -> Result<Self::Grad> {
        let n_pix = self.width * self.height;
        if grad_color.shape() != (3, self.height, self.width)
            || grad_alpha.is_some_and(|g| g.len() != n_pix)
        {
            return Err(Error::config("gradient shape does not match the render"));
        }
        let lanes = self.lanes.min(n_pix.max(1));
        let per_lane = n_pix.div_ceil(lanes);
        let partials: Vec<Result<(F::Grad, EnvironmentMap)>> = (0..lanes)
            .into_par_iter()
            .map(|lane| {
                let mut fg = self.field.zero_grad();
                let mut eg = self.env.zeros_like();
                let mut scratch = self.field.new_scratch();
                let mut env_s = EnvScratch::default();
                let lo = lane * per_lane;
                let hi = ((lane + 1) * per_lane).min(n_pix);
                for idx in lo..hi {
                    let g_c = Vec3::new(
                        grad_color.data[3 * idx],
                        grad_color.data[3 * idx + 1],
                        grad_color.data[3 * idx + 2],
                    );
                    let g_a = grad_alpha.map_or(0.0, |g| g[idx]);
                    self.ray_backward(
                        &self.rays[idx],
                        g_c,
                        g_a,
                        &mut scratch,
                        &mut env_s,
                        &mut fg,
                        &mut eg,
                    )?;
                }
                Ok((fg, eg))
            })
            .collect();
        let mut field = self.field.zero_grad();
        let mut env = self.env.zeros_like();
        for part in partials {
            let (f, e) = part?;
            self.field.add_grad(&mut field, &f);
            env.add_from(&e);
        }
        Ok(VolumeGrad { field, env })
    }
}

/// Mean of `sqrt(alpha^2 + eps)` over pixels and its gradient.
pub fn opacity_regularizer(alpha: &[f64]) -> (f64, Vec<f64>) {
    if alpha.is_empty() {
        return (0.0, Vec::new());
    }
    let n = alpha.len() as f64;
    let mut loss = 0.0;
    let grad = alpha
        .iter()
        .map(|a| {
            let r = (a * a + OPACITY_EPS).sqrt();
            loss += r;
            a / (r * n)
        })
        .collect();
    (loss / n, grad)
}
