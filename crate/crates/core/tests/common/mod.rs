//! Checks shared by the integration tests and the acceptance report. Each
//! returns an `Outcome` instead of panicking so the report can print every
//! line before deciding.
#![allow(dead_code)]

pub mod grad;
pub mod oracles;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdsynth::field::{FieldConfig, HashGridConfig, NeuralField};
use sdsynth::params::ParamSet;
use sdsynth::pipeline::{CameraMode, OrbitRing, RunConfig, ShadingMode};

#[derive(Clone, Debug)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }

    /// All parts must pass; details are joined.
    pub fn all(parts: impl IntoIterator<Item = (&'static str, Outcome)>) -> Self {
        let mut pass = true;
        let mut detail = Vec::new();
        for (name, o) in parts {
            pass &= o.pass;
            detail.push(format!("{name}: {}{}", if o.pass { "" } else { "FAIL " }, o.detail));
        }
        Self::new(pass, detail.join("; "))
    }

    #[track_caller]
    pub fn assert(&self) {
        assert!(self.pass, "{}", self.detail);
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.detail)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A field small enough for finite differences, with every parameter drawn
/// at unit scale so no term is negligible.
pub fn small_field(seed: u64) -> NeuralField {
    let cfg = FieldConfig {
        encoding: HashGridConfig {
            levels: 4,
            log2_table_size: 9,
            feature_dim: 2,
            base_resolution: 2,
            max_resolution: 16,
            bound: 2.0,
            init_scale: 1e-4,
        },
        hidden_width: 8,
        ..Default::default()
    };
    let mut r = rng(seed);
    let mut f = NeuralField::new(&cfg, &mut r).unwrap();
    for s in f.encoding.param_slices_mut() {
        s.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    }
    for s in f.density_albedo.param_slices_mut() {
        s.iter_mut().for_each(|v| *v = r.random_range(-0.6..0.6));
    }
    for s in f.normal.param_slices_mut() {
        s.iter_mut().for_each(|v| *v = r.random_range(-0.6..0.6));
    }
    f
}

/// A run small enough to repeat several times inside one test.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::desk();
    c.seed = seed;
    c.field.encoding = HashGridConfig {
        levels: 6,
        log2_table_size: 11,
        feature_dim: 2,
        base_resolution: 4,
        max_resolution: 64,
        ..Default::default()
    };
    c.field.hidden_width = 16;
    c.coarse.iterations = 12;
    c.coarse.batch_size = 2;
    c.coarse.resolution = 16;
    c.coarse.render.max_samples = 32;
    c.coarse.occupancy.resolution = 16;
    c.fine.iterations = 4;
    c.fine.batch_size = 2;
    c.fine.resolution = 32;
    c.fine.latent_factor = 2;
    c.fine.low_res = 8;
    c.fine.tet.resolution = 12;
    c.edit.iterations = 3;
    c.edit.batch_size = 1;
    c.edit.resolution = 32;
    c.edit.latent_factor = 2;
    c.edit.render.max_samples = 32;
    c
}

/// `tiny_config` with the inverse-rendering camera ring and unlit albedo.
pub fn tiny_oracle_config(seed: u64) -> RunConfig {
    let mut c = tiny_config(seed);
    c.camera = CameraMode::Orbit(OrbitRing::default());
    c.shading = ShadingMode::Albedo;
    let unit = sdsynth::guidance::Guidance::Standard { weight: 1.0 };
    c.coarse.sds.guidance = unit;
    c.fine.sds.guidance = unit;
    c.edit.sds.guidance = unit;
    c
}
