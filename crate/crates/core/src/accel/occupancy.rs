use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DensitySource;
use crate::math::Vec3;
use crate::rng::hash_uniform;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccupancyConfig {
    /// Cells per axis; must be a power of two for the octree.
    pub resolution: usize,
    pub init_value: f64,
    pub decay: f64,
    /// Optimizer iterations between grid updates.
    pub update_interval: usize,
    pub threshold: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            init_value: 20.0,
            decay: 0.6,
            update_interval: 10,
            threshold: 0.01,
        }
    }
}

impl OccupancyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 2 {
            return Err(Error::config("occupancy resolution must be a power of two >= 2"));
        }
        if !(0.0..=1.0).contains(&self.decay) || self.init_value < 0.0 || self.threshold < 0.0 {
            return Err(Error::config("occupancy decay must be in [0,1] and values nonnegative"));
        }
        if self.update_interval == 0 {
            return Err(Error::config("occupancy update interval must be positive"));
        }
        Ok(())
    }
}

/// Cached density upper estimates on a regular grid over `[-bound, bound]^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub config: OccupancyConfig,
    pub bound: f64,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(config: OccupancyConfig, bound: f64) -> Result<Self> {
        config.validate()?;
        let n = config.resolution.pow(3);
        Ok(Self {
            values: vec![config.init_value; n],
            config,
            bound,
        })
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.bound / self.config.resolution as f64
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let r = self.config.resolution;
        c[0] + r * (c[1] + r * c[2])
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let r = self.config.resolution;
        [index % r, (index / r) % r, index / (r * r)]
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let r = self.config.resolution;
        let mut c = [0usize; 3];
        for a in 0..3 {
            let u = (p[a] + self.bound) / (2.0 * self.bound);
            if !(0.0..=1.0).contains(&u) {
                return None;
            }
            c[a] = ((u * r as f64).floor() as usize).min(r - 1);
        }
        Some(c)
    }

    pub fn cell_min(&self, c: [usize; 3]) -> Vec3 {
        let s = self.cell_size();
        Vec3::new(
            -self.bound + c[0] as f64 * s,
            -self.bound + c[1] as f64 * s,
            -self.bound + c[2] as f64 * s,
        )
    }

    pub fn is_occupied(&self, c: [usize; 3]) -> bool {
        self.values[self.index(c)] > self.config.threshold
    }

    /// Decay every cell, then raise it to the density probed at one jittered
    /// point inside the cell. `key` seeds the probe positions.
    pub fn update(&mut self, field: &(impl DensitySource + ?Sized), key: u64) {
        let r = self.config.resolution;
        let decay = self.config.decay;
        let s = self.cell_size();
        let bound = self.bound;
        self.values.par_iter_mut().enumerate().for_each(|(i, v)| {
            let c = [i % r, (i / r) % r, i / (r * r)];
            let mut p = Vec3::ZERO;
            for a in 0..3 {
                let u = hash_uniform(key, (i as u64) * 3 + a as u64);
                p[a] = -bound + (c[a] as f64 + u) * s;
            }
            let d = field.density_at(p).max(0.0);
            *v = (decay * *v).max(d);
        });
    }

    pub fn occupied_count(&self) -> usize {
        self.values
            .iter()
            .filter(|v| **v > self.config.threshold)
            .count()
    }
}
