use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::hash_grid::{HashGridConfig, HashGridEncoding, LevelCache};
use super::mlp::Mlp;
use super::{FieldSample, RadianceField, SampleGrad};
use crate::error::Result;
use crate::math::{normalize_backward, sigmoid, softplus, Vec3};
use crate::params::ParamSet;

static DEGENERATE_NORMALS: AtomicUsize = AtomicUsize::new(0);

/// Number of normal queries that fell back to the radial direction.
pub fn degenerate_normal_count() -> usize {
    DEGENERATE_NORMALS.load(Ordering::Relaxed)
}

const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub encoding: HashGridConfig,
    pub hidden_width: usize,
    /// Scale of the linear density bias added before the softplus.
    pub bias_scale: f64,
    /// Radius at which the density bias crosses zero.
    pub bias_offset: f64,
    pub bounding_radius: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            encoding: HashGridConfig::default(),
            hidden_width: 32,
            bias_scale: 10.0,
            bias_offset: 0.5,
            bounding_radius: 2.0,
        }
    }
}

/// Hash-grid neural field with a density/albedo head and a normals head.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralField {
    pub bias_scale: f64,
    pub bias_offset: f64,
    pub bounding_radius: f64,
    pub encoding: HashGridEncoding,
    /// Outputs: density pre-activation, then three albedo logits.
    pub density_albedo: Mlp,
    /// Outputs: raw (unnormalized) normal.
    pub normal: Mlp,
}

/// Reusable per-thread buffers for one field evaluation.
#[derive(Clone, Debug)]
pub struct FieldScratch {
    cache: Vec<LevelCache>,
    features: Vec<f64>,
    hidden_da: Vec<f64>,
    out_da: [f64; 4],
    hidden_n: Vec<f64>,
    out_n: [f64; 3],
    grad_features: Vec<f64>,
    grad_features_n: Vec<f64>,
    mlp_tmp: Vec<f64>,
    albedo: Vec3,
    pre_density: f64,
    radial: bool,
}

impl NeuralField {
    pub fn new(config: &FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        let encoding = HashGridEncoding::new(config.encoding.clone(), rng)?;
        let d = encoding.output_dim();
        let density_albedo = Mlp::new(d, config.hidden_width, 4, rng);
        let normal = Mlp::new(d, config.hidden_width, 3, rng);
        Ok(Self {
            bias_scale: config.bias_scale,
            bias_offset: config.bias_offset,
            bounding_radius: config.bounding_radius,
            encoding,
            density_albedo,
            normal,
        })
    }

    /// Field with small random hash features and all-zero MLPs.
    pub fn zero_mlps(config: &FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut f = Self::new(config, rng)?;
        f.density_albedo.fill_zero();
        f.normal.fill_zero();
        Ok(f)
    }

    pub fn scratch(&self) -> FieldScratch {
        let levels = self.encoding.layout.len();
        let d = self.encoding.output_dim();
        FieldScratch {
            cache: vec![LevelCache::default(); levels],
            features: vec![0.0; d],
            hidden_da: vec![0.0; self.density_albedo.hidden_dim],
            out_da: [0.0; 4],
            hidden_n: vec![0.0; self.normal.hidden_dim],
            out_n: [0.0; 3],
            grad_features: vec![0.0; d],
            grad_features_n: vec![0.0; d],
            mlp_tmp: Vec::new(),
            albedo: Vec3::ZERO,
            pre_density: 0.0,
            radial: false,
        }
    }

    /// Linear density bias, added to the density pre-activation.
    pub fn density_bias(&self, p: Vec3) -> f64 {
        self.bias_scale * (1.0 - p.norm() / self.bias_offset)
    }

    pub fn eval_density(&self, p: Vec3) -> Result<f64> {
        let mut s = self.scratch();
        Ok(self.query_with(p, false, &mut s)?.density)
    }

    pub fn eval_albedo(&self, p: Vec3) -> Result<Vec3> {
        let mut s = self.scratch();
        Ok(self.query_with(p, false, &mut s)?.albedo)
    }

    pub fn eval_normal(&self, p: Vec3) -> Result<Vec3> {
        let mut s = self.scratch();
        Ok(self.query_with(p, true, &mut s)?.normal)
    }

    pub fn query_with(&self, p: Vec3, want_normal: bool, s: &mut FieldScratch) -> Result<FieldSample> {
        self.encoding.encode_into(p, &mut s.features, &mut s.cache)?;
        self.density_albedo
            .forward(&s.features, &mut s.hidden_da, &mut s.out_da);
        let pre = s.out_da[0] + self.density_bias(p);
        s.pre_density = pre;
        let density = softplus(pre);
        let albedo = Vec3::new(
            sigmoid(s.out_da[1]),
            sigmoid(s.out_da[2]),
            sigmoid(s.out_da[3]),
        );
        s.albedo = albedo;
        let normal = if want_normal {
            self.normal.forward(&s.features, &mut s.hidden_n, &mut s.out_n);
            let raw = Vec3::new(s.out_n[0], s.out_n[1], s.out_n[2]);
            normalize_or_radial(raw, p, &mut s.radial)
        } else {
            Vec3::ZERO
        };
        Ok(FieldSample {
            density,
            albedo,
            normal,
        })
    }

    /// Reverse pass for the most recent `query_with` on `s`. Returns the
    /// gradient with respect to the query point.
    pub fn backward_with(
        &self,
        p: Vec3,
        want_normal: bool,
        s: &mut FieldScratch,
        g: &SampleGrad,
        grads: &mut NeuralField,
    ) -> Vec3 {
        self.backward_inner(p, want_normal, s, g, grads, true)
    }

    /// As `backward_with`, without the gradient with respect to `p`.
    pub fn backward_params_with(&self, p: Vec3, want_normal: bool, s: &mut FieldScratch, g: &SampleGrad, grads: &mut NeuralField) {
        self.backward_inner(p, want_normal, s, g, grads, false);
    }

    fn backward_inner(
        &self,
        p: Vec3,
        want_normal: bool,
        s: &mut FieldScratch,
        g: &SampleGrad,
        grads: &mut NeuralField,
        want_point: bool,
    ) -> Vec3 {
        let dpre = g.density * sigmoid(s.pre_density);
        let a = s.albedo;
        let gout = [
            dpre,
            g.albedo.x * a.x * (1.0 - a.x),
            g.albedo.y * a.y * (1.0 - a.y),
            g.albedo.z * a.z * (1.0 - a.z),
        ];
        self.density_albedo.backward(
            &s.features,
            &s.hidden_da,
            &gout,
            &mut grads.density_albedo,
            Some(&mut s.grad_features),
            &mut s.mlp_tmp,
        );
        if want_normal && !s.radial && g.normal != Vec3::ZERO {
            let raw = Vec3::new(s.out_n[0], s.out_n[1], s.out_n[2]);
            let graw = normalize_backward(raw, g.normal);
            self.normal.backward(
                &s.features,
                &s.hidden_n,
                &graw.to_array(),
                &mut grads.normal,
                Some(&mut s.grad_features_n),
                &mut s.mlp_tmp,
            );
            for (a, b) in s.grad_features.iter_mut().zip(&s.grad_features_n) {
                *a += *b;
            }
        }
        if !want_point {
            self.encoding.backward_params(&s.cache, &s.grad_features, &mut grads.encoding);
            return Vec3::ZERO;
        }
        let mut grad_p = self
            .encoding
            .backward(&s.cache, &s.grad_features, &mut grads.encoding);
        let r = p.norm();
        if r > 0.0 {
            grad_p += p * (-dpre * self.bias_scale / (self.bias_offset * r));
        }
        grad_p
    }
}

fn normalize_or_radial(raw: Vec3, p: Vec3, radial: &mut bool) -> Vec3 {
    let n = raw.norm();
    if n >= DEGENERATE_NORM {
        *radial = false;
        return raw / n;
    }
    *radial = true;
    let count = DEGENERATE_NORMALS.fetch_add(1, Ordering::Relaxed);
    if count == 0 {
        log::warn!("degenerate normal prediction; substituting the radial direction");
    }
    let r = p.norm();
    if r > 0.0 {
        p / r
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    }
}

impl ParamSet for NeuralField {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.encoding.param_slices();
        v.extend(self.density_albedo.param_slices());
        v.extend(self.normal.param_slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoding.param_slices_mut();
        v.extend(self.density_albedo.param_slices_mut());
        v.extend(self.normal.param_slices_mut());
        v
    }

    fn zeros_like(&self) -> Self {
        Self {
            bias_scale: self.bias_scale,
            bias_offset: self.bias_offset,
            bounding_radius: self.bounding_radius,
            encoding: self.encoding.zeros_like(),
            density_albedo: self.density_albedo.zeros_like(),
            normal: self.normal.zeros_like(),
        }
    }
}

impl RadianceField for NeuralField {
    type Grad = NeuralField;
    type Scratch = FieldScratch;

    fn new_scratch(&self) -> FieldScratch {
        self.scratch()
    }

    fn zero_grad(&self) -> NeuralField {
        self.zeros_like()
    }

    fn add_grad(&self, acc: &mut NeuralField, other: &NeuralField) {
        acc.add_from(other);
    }

    fn query(&self, p: Vec3, want_normal: bool, s: &mut FieldScratch) -> Result<FieldSample> {
        self.query_with(p, want_normal, s)
    }

    fn backward(
        &self,
        p: Vec3,
        want_normal: bool,
        s: &mut FieldScratch,
        g: &SampleGrad,
        grads: &mut NeuralField,
    ) -> Vec3 {
        self.backward_with(p, want_normal, s, g, grads)
    }

    fn backward_params(&self, p: Vec3, want_normal: bool, s: &mut FieldScratch, g: &SampleGrad, grads: &mut NeuralField) {
        self.backward_params_with(p, want_normal, s, g, grads)
    }
}
