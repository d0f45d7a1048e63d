//! Multi-resolution hash-grid encoding.
//!
//! Each level is a lattice over the unit cube. Levels whose lattice fits in
//! the table are indexed directly; finer levels use the XOR-of-primes spatial
//! hash. Features at a point are the trilinear blend of the 8 enclosing
//! lattice corners, concatenated over levels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::ParamSet;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub log2_table_size: u32,
    pub feature_dim: usize,
    pub base_resolution: u32,
    pub max_resolution: u32,
    /// Half-extent of the axis-aligned domain `[-bound, bound]^3`.
    pub bound: f64,
    pub init_scale: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            log2_table_size: 19,
            feature_dim: 4,
            base_resolution: 16,
            max_resolution: 4096,
            bound: 2.0,
            init_scale: 1e-4,
        }
    }
}

impl HashGridConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.feature_dim == 0 {
            return Err(Error::config("hash grid needs at least one level and feature"));
        }
        if self.base_resolution == 0 || self.max_resolution < self.base_resolution {
            return Err(Error::config(
                "hash grid resolutions must satisfy 0 < base <= max",
            ));
        }
        if !(1..=28).contains(&self.log2_table_size) {
            return Err(Error::config("log2_table_size must be in 1..=28"));
        }
        if self.bound <= 0.0 {
            return Err(Error::config("encoding bound must be positive"));
        }
        Ok(())
    }

    /// Lattice resolution of `level`, growing geometrically from base to max.
    pub fn resolution(&self, level: usize) -> u32 {
        if level == 0 {
            return self.base_resolution;
        }
        if level + 1 >= self.levels {
            return self.max_resolution;
        }
        let growth = (self.max_resolution as f64 / self.base_resolution as f64)
            .powf(1.0 / (self.levels - 1) as f64);
        let r = (self.base_resolution as f64 * growth.powi(level as i32)).floor() as u32;
        r.clamp(self.base_resolution, self.max_resolution)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelLayout {
    pub resolution: u32,
    /// First entry of this level in the flat table.
    pub offset: usize,
    /// Entries in this level.
    pub size: usize,
    pub dense: bool,
}

/// Interpolation record for one level, kept for the backward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct LevelCache {
    pub entries: [usize; 8],
    pub weights: [f64; 8],
    pub frac: [f64; 3],
    pub resolution: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HashGridEncoding {
    pub config: HashGridConfig,
    pub layout: Vec<LevelLayout>,
    /// Flat feature table, `feature_dim` values per entry.
    pub table: Vec<f64>,
}

impl HashGridEncoding {
    pub fn zeros(config: HashGridConfig) -> Result<Self> {
        config.validate()?;
        let table_size = 1usize << config.log2_table_size;
        let mut layout = Vec::with_capacity(config.levels);
        let mut offset = 0;
        for level in 0..config.levels {
            let resolution = config.resolution(level);
            let side = resolution as usize + 1;
            let full = side.checked_pow(3);
            let (size, dense) = match full {
                Some(n) if n <= table_size => (n, true),
                _ => (table_size, false),
            };
            layout.push(LevelLayout {
                resolution,
                offset,
                size,
                dense,
            });
            offset += size;
        }
        let table = vec![0.0; offset * config.feature_dim];
        Ok(Self {
            config,
            layout,
            table,
        })
    }

    pub fn new(config: HashGridConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut enc = Self::zeros(config)?;
        let s = enc.config.init_scale;
        for v in enc.table.iter_mut() {
            *v = rng.random_range(-s..=s);
        }
        Ok(enc)
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn num_entries(&self) -> usize {
        self.table.len() / self.config.feature_dim
    }

    /// Map a world point into the unit cube, failing outside the domain.
    pub fn to_unit(&self, p: Vec3) -> Result<Vec3> {
        let b = self.config.bound;
        let u = (p + Vec3::splat(b)) / (2.0 * b);
        const SLACK: f64 = 1e-12;
        if !(u.min_elem() >= -SLACK && u.max_elem() <= 1.0 + SLACK) || !u.is_finite() {
            return Err(Error::OutOfDomain(p));
        }
        Ok(u.map(|c| c.clamp(0.0, 1.0)))
    }

    /// Table entry (relative to the level) for an integer lattice corner.
    pub fn corner_entry(&self, level: usize, corner: [u32; 3]) -> usize {
        let l = &self.layout[level];
        if l.dense {
            let side = l.resolution as usize + 1;
            corner[0] as usize + side * (corner[1] as usize + side * corner[2] as usize)
        } else {
            let h = corner[0].wrapping_mul(PRIMES[0])
                ^ corner[1].wrapping_mul(PRIMES[1])
                ^ corner[2].wrapping_mul(PRIMES[2]);
            (h as usize) & (l.size - 1)
        }
    }

    /// Encode `p`, writing `levels * feature_dim` features and the per-level
    /// interpolation caches.
    pub fn encode_into(&self, p: Vec3, out: &mut [f64], cache: &mut [LevelCache]) -> Result<()> {
        let f = self.config.feature_dim;
        debug_assert_eq!(out.len(), self.output_dim());
        debug_assert_eq!(cache.len(), self.layout.len());
        let u = self.to_unit(p)?;
        // Resolve every corner index first so the table reads, which are
        // mostly cache misses, can be issued back to back.
        for (level, l) in self.layout.iter().enumerate() {
            let res = l.resolution as f64;
            let mut base = [0u32; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let x = u[a] * res;
                let i = (x.floor() as i64).clamp(0, l.resolution as i64 - 1);
                base[a] = i as u32;
                frac[a] = x - i as f64;
            }
            let c = &mut cache[level];
            c.frac = frac;
            c.resolution = res;
            for corner in 0..8 {
                let bits = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut w = 1.0;
                let mut idx = [0u32; 3];
                for a in 0..3 {
                    idx[a] = base[a] + bits[a] as u32;
                    w *= if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                c.entries[corner] = l.offset + self.corner_entry(level, idx);
                c.weights[corner] = w;
            }
        }
        for (level, c) in cache.iter().enumerate() {
            let feat = &mut out[level * f..(level + 1) * f];
            feat.fill(0.0);
            for corner in 0..8 {
                let entry = c.entries[corner];
                let w = c.weights[corner];
                let row = &self.table[entry * f..(entry + 1) * f];
                for k in 0..f {
                    feat[k] += w * row[k];
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self, p: Vec3) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        let mut cache = vec![LevelCache::default(); self.layout.len()];
        self.encode_into(p, &mut out, &mut cache)?;
        Ok(out)
    }

    /// Accumulate table gradients into `grads` and return the gradient with
    /// respect to the world-space input point.
    /// Accumulate table gradients only, for callers whose query points are
    /// constants.
    pub fn backward_params(&self, cache: &[LevelCache], grad_out: &[f64], grads: &mut HashGridEncoding) {
        let f = self.config.feature_dim;
        for (level, c) in cache.iter().enumerate() {
            let g = &grad_out[level * f..(level + 1) * f];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for corner in 0..8 {
                let entry = c.entries[corner];
                let w = c.weights[corner];
                let dst = &mut grads.table[entry * f..(entry + 1) * f];
                for k in 0..f {
                    dst[k] += w * g[k];
                }
            }
        }
    }

    pub fn backward(&self, cache: &[LevelCache], grad_out: &[f64], grads: &mut HashGridEncoding) -> Vec3 {
        let f = self.config.feature_dim;
        let mut grad_unit = Vec3::ZERO;
        for (level, c) in cache.iter().enumerate() {
            let g = &grad_out[level * f..(level + 1) * f];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            for corner in 0..8 {
                let entry = c.entries[corner];
                let w = c.weights[corner];
                let dst = &mut grads.table[entry * f..(entry + 1) * f];
                let row = &self.table[entry * f..(entry + 1) * f];
                let mut dot = 0.0;
                for k in 0..f {
                    dst[k] += w * g[k];
                    dot += row[k] * g[k];
                }
                if dot == 0.0 {
                    continue;
                }
                let bits = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let lin = |a: usize| if bits[a] == 1 { c.frac[a] } else { 1.0 - c.frac[a] };
                let sign = |a: usize| if bits[a] == 1 { 1.0 } else { -1.0 };
                grad_unit.x += dot * sign(0) * lin(1) * lin(2) * c.resolution;
                grad_unit.y += dot * lin(0) * sign(1) * lin(2) * c.resolution;
                grad_unit.z += dot * lin(0) * lin(1) * sign(2) * c.resolution;
            }
        }
        grad_unit / (2.0 * self.config.bound)
    }
}

impl ParamSet for HashGridEncoding {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.table]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.table]
    }

    fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            table: vec![0.0; self.table.len()],
        }
    }
}
