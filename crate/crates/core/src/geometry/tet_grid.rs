use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DensitySource;
use crate::math::Vec3;
use crate::params::ParamSet;

/// Corner offsets of a unit cube indexed by `x | y << 1 | z << 2`.
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Axis permutations with their parity; each traces one monotone path from
/// corner 000 to corner 111 and therefore one tetrahedron.
const PATHS: [([usize; 3], bool); 6] = [
    ([0, 1, 2], true),
    ([1, 2, 0], true),
    ([2, 0, 1], true),
    ([0, 2, 1], false),
    ([2, 1, 0], false),
    ([1, 0, 2], false),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TetGridConfig {
    /// Cubes per axis.
    pub resolution: usize,
    /// The grid spans `[-extent, extent]^3`.
    pub extent: f64,
    /// Per-component deformation bound as a fraction of the edge length.
    pub max_deform_fraction: f64,
}

impl Default for TetGridConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            extent: 1.0,
            max_deform_fraction: 0.125,
        }
    }
}

/// Deformable tetrahedral grid with a signed distance value per vertex.
/// Positive values are inside.
#[derive(Clone, Debug, PartialEq)]
pub struct TetGrid {
    pub resolution: usize,
    pub extent: f64,
    pub max_deform_fraction: f64,
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[u32; 4]>,
    pub sdf: Vec<f64>,
    /// Flat `x, y, z` offsets per vertex.
    pub deform: Vec<f64>,
}

/// Trainable state of a tet grid, or a gradient on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TetParams {
    pub sdf: Vec<f64>,
    pub deform: Vec<f64>,
}

impl ParamSet for TetParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.sdf, &self.deform]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.sdf, &mut self.deform]
    }

    fn zeros_like(&self) -> Self {
        Self {
            sdf: vec![0.0; self.sdf.len()],
            deform: vec![0.0; self.deform.len()],
        }
    }
}

impl TetGrid {
    pub fn new(config: &TetGridConfig) -> Result<Self> {
        let r = config.resolution;
        if r == 0 || config.extent <= 0.0 {
            return Err(Error::config("tet grid needs positive resolution and extent"));
        }
        if !(0.0..=0.5).contains(&config.max_deform_fraction) {
            return Err(Error::config("deformation bound must lie in [0, 0.5] edge lengths"));
        }
        let n = r + 1;
        if n * n * n > u32::MAX as usize {
            return Err(Error::config("tet grid too large"));
        }
        let h = 2.0 * config.extent / r as f64;
        let mut vertices = Vec::with_capacity(n * n * n);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    vertices.push(Vec3::new(
                        -config.extent + x as f64 * h,
                        -config.extent + y as f64 * h,
                        -config.extent + z as f64 * h,
                    ));
                }
            }
        }
        let vid = |x: usize, y: usize, z: usize| (x + n * (y + n * z)) as u32;
        let mut tets = Vec::with_capacity(6 * r * r * r);
        for z in 0..r {
            for y in 0..r {
                for x in 0..r {
                    let corner = |k: usize| {
                        let c = CORNER[k];
                        vid(x + c[0], y + c[1], z + c[2])
                    };
                    for (perm, even) in PATHS {
                        let a = 0usize;
                        let b = a | (1 << perm[0]);
                        let c = b | (1 << perm[1]);
                        let d = 7usize;
                        let mut t = [corner(a), corner(b), corner(c), corner(d)];
                        if !even {
                            t.swap(2, 3);
                        }
                        tets.push(t);
                    }
                }
            }
        }
        let nv = vertices.len();
        Ok(Self {
            resolution: r,
            extent: config.extent,
            max_deform_fraction: config.max_deform_fraction,
            vertices,
            tets,
            sdf: vec![0.0; nv],
            deform: vec![0.0; 3 * nv],
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_length(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.edge_length() * 3f64.sqrt()
    }

    pub fn deform_at(&self, i: usize) -> Vec3 {
        Vec3::new(self.deform[3 * i], self.deform[3 * i + 1], self.deform[3 * i + 2])
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.vertices[i] + self.deform_at(i)
    }

    /// Clamp every deformation component to the configured bound.
    pub fn clamp_deformation(&mut self) {
        let b = self.max_deform_fraction * self.edge_length();
        for d in &mut self.deform {
            *d = d.clamp(-b, b);
        }
    }

    /// Six times the signed volume of tet `k` at deformed positions.
    pub fn signed_volume6(&self, k: usize) -> f64 {
        let [a, b, c, d] = self.tets[k].map(|i| self.position(i as usize));
        (b - a).cross(c - a).dot(d - a)
    }

    pub fn params(&self) -> TetParams {
        TetParams {
            sdf: self.sdf.clone(),
            deform: self.deform.clone(),
        }
    }

    pub fn set_params(&mut self, p: &TetParams) -> Result<()> {
        if p.sdf.len() != self.sdf.len() || p.deform.len() != self.deform.len() {
            return Err(Error::Format("tet parameter size mismatch".into()));
        }
        self.sdf.copy_from_slice(&p.sdf);
        self.deform.copy_from_slice(&p.deform);
        Ok(())
    }

    pub fn set_sdf_from(&mut self, f: impl Fn(Vec3) -> f64) {
        for (s, v) in self.sdf.iter_mut().zip(&self.vertices) {
            *s = f(*v);
        }
    }
}

/// Initialize vertex values as `density - kappa`, positive where dense.
pub fn density_to_sdf(field: &(impl DensitySource + ?Sized), grid: &mut TetGrid, kappa: f64) -> Result<()> {
    if !(kappa > 0.0) {
        return Err(Error::config("density threshold kappa must be positive"));
    }
    use rayon::prelude::*;
    let vals: Vec<f64> = grid
        .vertices
        .par_iter()
        .map(|v| field.density_at(*v) - kappa)
        .collect();
    grid.sdf = vals;
    Ok(())
}
