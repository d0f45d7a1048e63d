use super::occupancy::OccupancyGrid;
use crate::math::{ray_box, Vec3};

/// Occupancy hierarchy over a power-of-two grid. Level 0 is the root and the
/// last level holds the grid cells; an interior node is occupied iff any
/// child is.
#[derive(Clone, Debug, PartialEq)]
pub struct Octree {
    pub bound: f64,
    pub depth: u32,
    levels: Vec<Vec<bool>>,
}

/// Portion of a ray inside one occupied leaf.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafSpan {
    pub cell: [usize; 3],
    pub t0: f64,
    pub t1: f64,
}

/// Samples along one ray, sorted by depth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub chord: f64,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

impl Octree {
    pub fn build(grid: &OccupancyGrid) -> Self {
        let res = grid.resolution();
        let depth = res.trailing_zeros();
        let mut levels = vec![Vec::new(); depth as usize + 1];
        levels[depth as usize] = grid
            .values
            .iter()
            .map(|v| *v > grid.config.threshold)
            .collect();
        for d in (0..depth as usize).rev() {
            let side = 1usize << d;
            let child_side = side * 2;
            let child = &levels[d + 1];
            let mut cur = vec![false; side * side * side];
            for z in 0..child_side {
                for y in 0..child_side {
                    for x in 0..child_side {
                        if child[x + child_side * (y + child_side * z)] {
                            cur[x / 2 + side * (y / 2 + side * (z / 2))] = true;
                        }
                    }
                }
            }
            levels[d] = cur;
        }
        Self {
            bound: grid.bound,
            depth,
            levels,
        }
    }

    /// Every leaf occupied.
    pub fn full(bound: f64, depth: u32) -> Self {
        let levels = (0..=depth)
            .map(|d| vec![true; 1usize << (3 * d)])
            .collect();
        Self { bound, depth, levels }
    }

    pub fn leaf_resolution(&self) -> usize {
        1usize << self.depth
    }

    pub fn node_occupied(&self, level: u32, c: [usize; 3]) -> bool {
        let side = 1usize << level;
        self.levels[level as usize][c[0] + side * (c[1] + side * c[2])]
    }

    pub fn root_occupied(&self) -> bool {
        self.levels[0][0]
    }

    pub fn occupied_nodes(&self, level: u32) -> usize {
        self.levels[level as usize].iter().filter(|b| **b).count()
    }

    fn node_box(&self, level: u32, c: [usize; 3]) -> (Vec3, Vec3) {
        let size = 2.0 * self.bound / (1u64 << level) as f64;
        let lo = Vec3::new(
            -self.bound + c[0] as f64 * size,
            -self.bound + c[1] as f64 * size,
            -self.bound + c[2] as f64 * size,
        );
        (lo, lo + Vec3::splat(size))
    }

    pub fn leaf_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let r = self.leaf_resolution();
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

    pub fn point_occupied(&self, p: Vec3) -> bool {
        self.leaf_of(p)
            .map(|c| self.node_occupied(self.depth, c))
            .unwrap_or(false)
    }

    /// Occupied leaves pierced by the ray, front to back, found by
    /// hierarchical descent that prunes empty nodes.
    pub fn traverse(&self, origin: Vec3, dir: Vec3) -> Vec<LeafSpan> {
        let mut out = Vec::new();
        if !self.root_occupied() {
            return out;
        }
        let (lo, hi) = self.node_box(0, [0, 0, 0]);
        if let Some((t0, t1)) = ray_box(origin, dir, lo, hi) {
            self.descend(origin, dir, 0, [0, 0, 0], t0, t1, &mut out);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        &self,
        origin: Vec3,
        dir: Vec3,
        level: u32,
        c: [usize; 3],
        t0: f64,
        t1: f64,
        out: &mut Vec<LeafSpan>,
    ) {
        if level == self.depth {
            out.push(LeafSpan { cell: c, t0, t1 });
            return;
        }
        let mut kids: [(f64, f64, [usize; 3]); 8] = [(0.0, 0.0, [0; 3]); 8];
        let mut n = 0;
        for k in 0..8 {
            let cc = [
                c[0] * 2 + (k & 1),
                c[1] * 2 + ((k >> 1) & 1),
                c[2] * 2 + ((k >> 2) & 1),
            ];
            if !self.node_occupied(level + 1, cc) {
                continue;
            }
            let (lo, hi) = self.node_box(level + 1, cc);
            if let Some((a, b)) = ray_box(origin, dir, lo, hi) {
                kids[n] = (a, b, cc);
                n += 1;
            }
        }
        let kids = &mut kids[..n];
        kids.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for &(a, b, cc) in kids.iter() {
            self.descend(origin, dir, level + 1, cc, a, b, out);
        }
    }

    /// Stratified samples restricted to occupied leaves.
    ///
    /// The box chord is split into `max_samples` equal strata; the sample of
    /// each stratum sits at fraction `jitter` (0.5 = midpoint) and is kept
    /// only if it falls in an occupied leaf. Leaf spans from the octree walk
    /// limit which strata are examined.
    pub fn sample_ray(&self, origin: Vec3, dir: Vec3, max_samples: usize, jitter: f64) -> RaySamples {
        let mut out = RaySamples::default();
        let (lo, hi) = (Vec3::splat(-self.bound), Vec3::splat(self.bound));
        let Some((t_near, t_far)) = ray_box(origin, dir, lo, hi) else {
            return out;
        };
        let chord = t_far - t_near;
        out.chord = chord;
        if chord <= 0.0 || max_samples == 0 {
            return out;
        }
        let spans = self.traverse(origin, dir);
        if spans.is_empty() {
            return out;
        }
        let dt = chord / max_samples as f64;
        let mut next = 0usize;
        for span in spans {
            let first = ((span.t0 - t_near) / dt - jitter).floor() as i64 - 1;
            let last = ((span.t1 - t_near) / dt - jitter).ceil() as i64 + 1;
            let first = first.max(next as i64).max(0) as usize;
            let last = (last.max(-1) as usize).min(max_samples - 1);
            if first > last {
                continue;
            }
            for i in first..=last {
                let t = t_near + (i as f64 + jitter) * dt;
                if self.point_occupied(origin + dir * t) {
                    out.t.push(t);
                    out.delta.push(dt);
                }
                next = i + 1;
            }
        }
        out
    }

    /// Every stratum, ignoring occupancy. Reference path for tests.
    pub fn sample_ray_dense(&self, origin: Vec3, dir: Vec3, max_samples: usize, jitter: f64) -> RaySamples {
        let mut out = RaySamples::default();
        let (lo, hi) = (Vec3::splat(-self.bound), Vec3::splat(self.bound));
        let Some((t_near, t_far)) = ray_box(origin, dir, lo, hi) else {
            return out;
        };
        let chord = t_far - t_near;
        out.chord = chord;
        if chord <= 0.0 {
            return out;
        }
        let dt = chord / max_samples as f64;
        for i in 0..max_samples {
            out.t.push(t_near + (i as f64 + jitter) * dt);
            out.delta.push(dt);
        }
        out
    }
}
