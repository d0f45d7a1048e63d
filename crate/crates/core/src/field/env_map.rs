use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use super::mlp::Mlp;
use crate::math::{sigmoid, Vec3};
use crate::params::ParamSet;

/// Sinusoidal frequency bands applied to the ray direction.
pub const DIRECTION_FREQUENCIES: usize = 4;
pub const DIRECTION_ENCODING_DIM: usize = 3 + 6 * DIRECTION_FREQUENCIES;
pub const ENV_HIDDEN_WIDTH: usize = 16;
/// Learning-rate multiplier applied to the background network.
pub const ENV_LR_SCALE: f64 = 0.1;

static NON_UNIT_DIRECTIONS: AtomicUsize = AtomicUsize::new(0);

pub fn non_unit_direction_count() -> usize {
    NON_UNIT_DIRECTIONS.load(Ordering::Relaxed)
}

/// Background color as a function of ray direction.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    pub mlp: Mlp,
    pub learning_rate_scale: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EnvScratch {
    input: Vec<f64>,
    hidden: Vec<f64>,
    out: [f64; 3],
    tmp: Vec<f64>,
}

pub fn encode_direction(d: Vec3, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(&d.to_array());
    let mut freq = std::f64::consts::PI;
    for _ in 0..DIRECTION_FREQUENCIES {
        for a in 0..3 {
            out.push((freq * d[a]).sin());
            out.push((freq * d[a]).cos());
        }
        freq *= 2.0;
    }
}

impl EnvironmentMap {
    pub fn new(rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(DIRECTION_ENCODING_DIM, ENV_HIDDEN_WIDTH, 3, rng),
            learning_rate_scale: ENV_LR_SCALE,
        }
    }

    /// Random hidden layer and a zero output layer: a uniform mid-gray
    /// background that still receives gradients on its output weights.
    pub fn neutral(rng: &mut impl Rng) -> Self {
        let mut env = Self::new(rng);
        env.mlp.w2.iter_mut().for_each(|w| *w = 0.0);
        env.mlp.b2.iter_mut().for_each(|b| *b = 0.0);
        env
    }

    pub fn zeros() -> Self {
        Self {
            mlp: Mlp::zeros(DIRECTION_ENCODING_DIM, ENV_HIDDEN_WIDTH, 3),
            learning_rate_scale: ENV_LR_SCALE,
        }
    }

    fn unit(d: Vec3) -> Vec3 {
        let n = d.norm();
        if (n - 1.0).abs() > 1e-9 {
            NON_UNIT_DIRECTIONS.fetch_add(1, Ordering::Relaxed);
            if n > 0.0 {
                return d / n;
            }
            return Vec3::new(0.0, 0.0, 1.0);
        }
        d
    }

    pub fn eval_background(&self, d: Vec3) -> Vec3 {
        self.eval_with(d, &mut EnvScratch::default())
    }

    pub fn eval_with(&self, d: Vec3, s: &mut EnvScratch) -> Vec3 {
        let d = Self::unit(d);
        encode_direction(d, &mut s.input);
        s.hidden.resize(self.mlp.hidden_dim, 0.0);
        self.mlp.forward(&s.input, &mut s.hidden, &mut s.out);
        Vec3::new(sigmoid(s.out[0]), sigmoid(s.out[1]), sigmoid(s.out[2]))
    }

    /// Accumulate parameter gradients for the most recent `eval_with` on `s`.
    pub fn backward_with(&self, s: &mut EnvScratch, grad_rgb: Vec3, grads: &mut EnvironmentMap) {
        if grad_rgb == Vec3::ZERO {
            return;
        }
        let mut g = [0.0; 3];
        for c in 0..3 {
            let y = sigmoid(s.out[c]);
            g[c] = grad_rgb[c] * y * (1.0 - y);
        }
        self.mlp
            .backward(&s.input, &s.hidden, &g, &mut grads.mlp, None, &mut s.tmp);
    }
}

impl ParamSet for EnvironmentMap {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.mlp.param_slices()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.param_slices_mut()
    }

    fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
            learning_rate_scale: self.learning_rate_scale,
        }
    }
}
