use std::collections::HashMap;

use super::marching::EdgeCrossing;
use crate::math::{cross_backward, normalize_backward, Vec3};

/// Triangle mesh from marching tetrahedra. `provenance[i]` records the grid
/// edge vertex `i` was born on; meshes from other sources leave it empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
    pub provenance: Vec<EdgeCrossing>,
}

const DEGENERATE_AREA: f64 = 1e-30;

impl SurfaceMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_points(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Unit face normal, zero for degenerate faces.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_points(f);
        let n = (b - a).cross(c - a);
        if n.dot(n) > DEGENERATE_AREA {
            n.normalized()
        } else {
            Vec3::ZERO
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn recompute_normals(&mut self) {
        self.normals = vertex_normals(&self.vertices, &self.faces);
    }
}

/// Area-weighted vertex normals; isolated or degenerate vertices get zero.
pub fn vertex_normals(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let n = (b - a).cross(c - a);
        for i in f {
            acc[*i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| if n.dot(n) > DEGENERATE_AREA { n.normalized() } else { Vec3::ZERO })
        .collect()
}

fn accumulate_cross_grad(grad: &mut [Vec3], f: &[u32; 3], vertices: &[Vec3], g_n: Vec3) {
    let [a, b, c] = f.map(|i| vertices[i as usize]);
    let (ga, gb) = cross_backward(b - a, c - a, g_n);
    grad[f[1] as usize] += ga;
    grad[f[2] as usize] += gb;
    grad[f[0] as usize] -= ga + gb;
}

/// Vertex-position gradient from a gradient on `vertex_normals` output.
pub fn vertex_normals_backward(vertices: &[Vec3], faces: &[[u32; 3]], grad_normals: &[Vec3]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::ZERO; vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        let n = (b - a).cross(c - a);
        for i in f {
            acc[*i as usize] += n;
        }
    }
    let g_acc: Vec<Vec3> = acc
        .iter()
        .zip(grad_normals)
        .map(|(n, g)| if n.dot(*n) > DEGENERATE_AREA { normalize_backward(*n, *g) } else { Vec3::ZERO })
        .collect();
    let mut grad = vec![Vec3::ZERO; vertices.len()];
    for f in faces {
        let g_n = f.iter().fold(Vec3::ZERO, |s, i| s + g_acc[*i as usize]);
        accumulate_cross_grad(&mut grad, f, vertices, g_n);
    }
    grad
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Faces incident to each undirected edge, in face order.
pub fn edge_faces(faces: &[[u32; 3]]) -> HashMap<(u32, u32), Vec<u32>> {
    let mut map: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            map.entry(edge_key(f[k], f[(k + 1) % 3]))
                .or_default()
                .push(fi as u32);
        }
    }
    map
}

/// Pairs of faces sharing an edge that has exactly two faces, sorted so the
/// result does not depend on hash order.
pub fn adjacent_face_pairs(faces: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut pairs: Vec<(u32, u32)> = edge_faces(faces)
        .into_values()
        .filter(|fs| fs.len() == 2)
        .map(|fs| (fs[0], fs[1]))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Mean of `1 - n_i . n_j` over adjacent face pairs, with its gradient with
/// respect to vertex positions.
pub fn face_smoothness(mesh: &SurfaceMesh) -> (f64, Vec<Vec3>) {
    let mut grad = vec![Vec3::ZERO; mesh.vertices.len()];
    let pairs = adjacent_face_pairs(&mesh.faces);
    if pairs.is_empty() {
        return (0.0, grad);
    }
    let raw: Vec<Vec3> = (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.face_points(f);
            (b - a).cross(c - a)
        })
        .collect();
    let unit: Vec<Vec3> = raw
        .iter()
        .map(|n| if n.dot(*n) > DEGENERATE_AREA { n.normalized() } else { Vec3::ZERO })
        .collect();
    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut g_unit = vec![Vec3::ZERO; mesh.faces.len()];
    for &(i, j) in &pairs {
        let (i, j) = (i as usize, j as usize);
        loss += 1.0 - unit[i].dot(unit[j]);
        g_unit[i] -= unit[j] * scale;
        g_unit[j] -= unit[i] * scale;
    }
    for (f, face) in mesh.faces.iter().enumerate() {
        if unit[f] == Vec3::ZERO || g_unit[f] == Vec3::ZERO {
            continue;
        }
        let g_raw = normalize_backward(raw[f], g_unit[f]);
        accumulate_cross_grad(&mut grad, face, &mesh.vertices, g_raw);
    }
    (loss * scale, grad)
}

/// Edge-level manifold statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopologyReport {
    pub edges: usize,
    /// Edges with a single face.
    pub boundary_edges: usize,
    /// Edges with more than two faces.
    pub nonmanifold_edges: usize,
    /// Two-face edges traversed in the same direction by both faces.
    pub inconsistent_edges: usize,
}

impl TopologyReport {
    pub fn is_watertight(&self) -> bool {
        self.boundary_edges == 0 && self.nonmanifold_edges == 0 && self.inconsistent_edges == 0
    }
}

pub fn topology(faces: &[[u32; 3]]) -> TopologyReport {
    let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    let mut r = TopologyReport::default();
    for (key, fs) in edge_faces(faces) {
        r.edges += 1;
        match fs.len() {
            1 => r.boundary_edges += 1,
            2 => {
                let fwd = directed.get(&key).copied().unwrap_or(0);
                let bwd = directed.get(&(key.1, key.0)).copied().unwrap_or(0);
                if fwd != 1 || bwd != 1 {
                    r.inconsistent_edges += 1;
                }
            }
            _ => r.nonmanifold_edges += 1,
        }
    }
    r
}
