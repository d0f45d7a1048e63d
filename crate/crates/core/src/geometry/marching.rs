use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::mesh::{vertex_normals, SurfaceMesh};
use super::tet_grid::{TetGrid, TetParams};
use crate::math::Vec3;
use crate::params::ParamSet;

/// Where a surface vertex came from: the crossing on grid edge `(a, b)`,
/// at `position(a) + t (position(b) - position(a))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCrossing {
    pub a: u32,
    pub b: u32,
    pub t: f64,
}

type LocalTri = [(u8, u8); 3];

#[derive(Clone, Copy, Debug, Default)]
struct Case {
    count: u8,
    tris: [LocalTri; 2],
}

fn inside(s: f64) -> bool {
    s >= 0.0
}

/// Triangulations for the sixteen inside/outside patterns of a tet, wound
/// so normals point toward decreasing values. Orientation is fixed on a
/// reference tet; it carries over to every positively oriented tet.
fn case_table() -> &'static [Case; 16] {
    static TABLE: OnceLock<[Case; 16]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let reference = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 1.0),
        ];
        let mut table = [Case::default(); 16];
        for (code, case) in table.iter_mut().enumerate() {
            let ins: Vec<u8> = (0..4).filter(|k| code >> k & 1 == 1).collect();
            let outs: Vec<u8> = (0..4).filter(|k| code >> k & 1 == 0).collect();
            let mut tris: Vec<LocalTri> = match ins.len() {
                1 => vec![[(ins[0], outs[0]), (ins[0], outs[1]), (ins[0], outs[2])]],
                3 => vec![[(ins[0], outs[0]), (ins[1], outs[0]), (ins[2], outs[0])]],
                2 => {
                    let (a, b, c, d) = (ins[0], ins[1], outs[0], outs[1]);
                    let quad = [(a, c), (a, d), (b, d), (b, c)];
                    vec![[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]]
                }
                _ => Vec::new(),
            };
            let centroid = |ids: &[u8]| {
                ids.iter().fold(Vec3::ZERO, |acc, k| acc + reference[*k as usize])
                    / ids.len() as f64
            };
            for tri in &mut tris {
                let q = tri.map(|(i, o)| (reference[i as usize] + reference[o as usize]) * 0.5);
                let n = (q[1] - q[0]).cross(q[2] - q[0]);
                if n.dot(centroid(&outs) - centroid(&ins)) < 0.0 {
                    tri.swap(1, 2);
                }
            }
            case.count = tris.len() as u8;
            for (k, t) in tris.into_iter().enumerate() {
                case.tris[k] = t;
            }
        }
        table
    })
}

fn crossing(pa: Vec3, pb: Vec3, sa: f64, sb: f64) -> Vec3 {
    (pb * sa - pa * sb) / (sa - sb)
}

/// Extract the zero level set of the grid's values as a triangle mesh.
/// Vertices are deduplicated per grid edge in first-visit order.
pub fn marching_tets(grid: &TetGrid) -> SurfaceMesh {
    let table = case_table();
    let codes: Vec<u8> = grid
        .tets
        .par_iter()
        .map(|t| {
            let mut code = 0u8;
            for (k, v) in t.iter().enumerate() {
                if inside(grid.sdf[*v as usize]) {
                    code |= 1 << k;
                }
            }
            code
        })
        .collect();
    let mut vertices = Vec::new();
    let mut provenance = Vec::new();
    let mut faces = Vec::new();
    let mut index: HashMap<(u32, u32), u32> = HashMap::new();
    for (tet, &code) in grid.tets.iter().zip(&codes) {
        if code == 0 || code == 15 {
            continue;
        }
        let case = &table[code as usize];
        for tri in &case.tris[..case.count as usize] {
            let mut face = [0u32; 3];
            for (slot, &(li, lo)) in tri.iter().enumerate() {
                // store the crossing with the inside vertex first
                let a = tet[li as usize];
                let b = tet[lo as usize];
                let id = *index.entry((a, b)).or_insert_with(|| {
                    let (sa, sb) = (grid.sdf[a as usize], grid.sdf[b as usize]);
                    let (pa, pb) = (grid.position(a as usize), grid.position(b as usize));
                    vertices.push(crossing(pa, pb, sa, sb));
                    provenance.push(EdgeCrossing {
                        a,
                        b,
                        t: sa / (sa - sb),
                    });
                    (vertices.len() - 1) as u32
                });
                face[slot] = id;
            }
            faces.push(face);
        }
    }
    let normals = vertex_normals(&vertices, &faces);
    SurfaceMesh {
        vertices,
        faces,
        normals,
        provenance,
    }
}

/// Pull per-vertex position gradients of an extracted mesh back onto the
/// grid's values and deformations.
pub fn marching_tets_backward(grid: &TetGrid, mesh: &SurfaceMesh, grad_vertices: &[Vec3]) -> TetParams {
    let mut g = grid.params().zeros_like();
    for (c, gv) in mesh.provenance.iter().zip(grad_vertices) {
        let (a, b) = (c.a as usize, c.b as usize);
        let (sa, sb) = (grid.sdf[a], grid.sdf[b]);
        let (pa, pb) = (grid.position(a), grid.position(b));
        let d = sa - sb;
        g.sdf[a] += gv.dot(pa - pb) * sb / (d * d);
        g.sdf[b] += gv.dot(pb - pa) * sa / (d * d);
        let wa = -sb / d;
        let wb = sa / d;
        for k in 0..3 {
            g.deform[3 * a + k] += wa * gv[k];
            g.deform[3 * b + k] += wb * gv[k];
        }
    }
    g
}
