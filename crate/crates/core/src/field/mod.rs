//! Neural scene field: hash-grid encoding, density/albedo and normal heads,
//! and the environment-map background network.

mod env_map;
mod hash_grid;
mod mlp;
mod neural_field;

pub use env_map::{
    encode_direction, non_unit_direction_count, EnvScratch, EnvironmentMap,
    DIRECTION_ENCODING_DIM, ENV_HIDDEN_WIDTH, ENV_LR_SCALE,
};
pub use hash_grid::{HashGridConfig, HashGridEncoding, LevelCache, LevelLayout};
pub use mlp::Mlp;
pub use neural_field::{degenerate_normal_count, FieldConfig, FieldScratch, NeuralField};

use crate::error::Result;
use crate::math::Vec3;

/// Field outputs at one point. `normal` is zero when not requested.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldSample {
    pub density: f64,
    pub albedo: Vec3,
    pub normal: Vec3,
}

/// Upstream gradient on a `FieldSample`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleGrad {
    pub density: f64,
    pub albedo: Vec3,
    pub normal: Vec3,
}

/// A differentiable field that can be volume rendered.
///
/// `backward` must be called right after `query` at the same point with the
/// same scratch, which carries the forward intermediates.
pub trait RadianceField: Sync {
    type Grad: Send;
    type Scratch: Send;

    fn new_scratch(&self) -> Self::Scratch;
    fn zero_grad(&self) -> Self::Grad;
    fn add_grad(&self, acc: &mut Self::Grad, other: &Self::Grad);
    fn query(&self, p: Vec3, want_normal: bool, s: &mut Self::Scratch) -> Result<FieldSample>;
    fn backward(
        &self,
        p: Vec3,
        want_normal: bool,
        s: &mut Self::Scratch,
        g: &SampleGrad,
        grads: &mut Self::Grad,
    ) -> Vec3;

    /// Parameter gradients only; for query points that are constants.
    fn backward_params(&self, p: Vec3, want_normal: bool, s: &mut Self::Scratch, g: &SampleGrad, grads: &mut Self::Grad) {
        self.backward(p, want_normal, s, g, grads);
    }
}

/// Anything that can report a density at a point; used by the occupancy
/// grid and by the mesh initializer.
pub trait DensitySource: Sync {
    fn density_at(&self, p: Vec3) -> f64;
}

impl DensitySource for NeuralField {
    fn density_at(&self, p: Vec3) -> f64 {
        self.eval_density(p).unwrap_or(0.0)
    }
}

impl<F: Fn(Vec3) -> f64 + Sync> DensitySource for F {
    fn density_at(&self, p: Vec3) -> f64 {
        self(p)
    }
}

/// Analytic field with closed-form density and constant albedo; handy for
/// renderer tests. It has no trainable parameters.
pub struct AnalyticField<D: Fn(Vec3) -> f64 + Sync> {
    pub density: D,
    pub albedo: Vec3,
    pub normal: Vec3,
}

impl<D: Fn(Vec3) -> f64 + Sync> RadianceField for AnalyticField<D> {
    type Grad = ();
    type Scratch = ();

    fn new_scratch(&self) {}
    fn zero_grad(&self) {}
    fn add_grad(&self, _: &mut (), _: &()) {}

    fn query(&self, p: Vec3, _want_normal: bool, _: &mut ()) -> Result<FieldSample> {
        Ok(FieldSample {
            density: (self.density)(p),
            albedo: self.albedo,
            normal: self.normal,
        })
    }

    fn backward(&self, _: Vec3, _: bool, _: &mut (), _: &SampleGrad, _: &mut ()) -> Vec3 {
        Vec3::ZERO
    }
}
