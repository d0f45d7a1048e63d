use rayon::prelude::*;

use crate::geometry::SurfaceMesh;
use crate::math::{cross_backward, Vec3};
use crate::render_vol::Camera;

const BAND_ROWS: usize = 16;
const NEAR: f64 = 1e-6;

/// Nearest surface hit behind one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub face: u32,
    /// Perspective-correct barycentrics of `position`.
    pub bary: [f64; 3],
    /// Distance along the unit pixel ray.
    pub t: f64,
    /// Camera-space depth.
    pub depth: f64,
    pub position: Vec3,
}

/// Projected vertex: image-plane position and camera depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

#[derive(Clone, Debug)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    pub fragments: Vec<Option<Fragment>>,
    pub screen: Vec<Option<ScreenVertex>>,
}

impl FragmentBuffer {
    pub fn get(&self, i: usize, j: usize) -> Option<&Fragment> {
        self.fragments[j * self.width + i].as_ref()
    }

    pub fn covered(&self) -> usize {
        self.fragments.iter().filter(|f| f.is_some()).count()
    }

    pub fn face_ids(&self) -> Vec<Option<u32>> {
        self.fragments.iter().map(|f| f.map(|f| f.face)).collect()
    }
}

/// Signed doubled area of a screen triangle.
pub(crate) fn screen_area(a: &ScreenVertex, b: &ScreenVertex, c: &ScreenVertex) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Edge function of edge `a -> b` at point `(x, y)`.
pub(crate) fn edge_fn(a: &ScreenVertex, b: &ScreenVertex, x: f64, y: f64) -> f64 {
    (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x)
}

/// Ray-triangle intersection: returns `(t, b1, b2)` with the hit at
/// `v0 + b1 (v1 - v0) + b2 (v2 - v0)`.
pub(crate) fn intersect(o: Vec3, d: Vec3, v: [Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    let pvec = d.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < 1e-300 {
        return None;
    }
    let tvec = o - v[0];
    let u = tvec.dot(pvec) / det;
    let qvec = tvec.cross(e1);
    let w = d.dot(qvec) / det;
    let t = e2.dot(qvec) / det;
    Some((t, u, w))
}

/// Gradients of `intersect` outputs with respect to the three vertices.
pub(crate) fn intersect_backward(o: Vec3, d: Vec3, v: [Vec3; 3], g_t: f64, g_u: f64, g_w: f64) -> [Vec3; 3] {
    let e1 = v[1] - v[0];
    let e2 = v[2] - v[0];
    let pvec = d.cross(e2);
    let det = e1.dot(pvec);
    let tvec = o - v[0];
    let qvec = tvec.cross(e1);
    let (u, w, t) = (tvec.dot(pvec) / det, d.dot(qvec) / det, e2.dot(qvec) / det);
    let g_det = -(g_u * u + g_w * w + g_t * t) / det;
    let (gu, gw, gt) = (g_u / det, g_w / det, g_t / det);
    let mut g_tvec = pvec * gu;
    let g_pvec = tvec * gu + e1 * g_det;
    let g_qvec = d * gw + e2 * gt;
    let mut g_e2 = qvec * gt;
    let mut g_e1 = pvec * g_det;
    let (a, b) = cross_backward(tvec, e1, g_qvec);
    g_tvec += a;
    g_e1 += b;
    let (_, b) = cross_backward(d, e2, g_pvec);
    g_e2 += b;
    [-(g_tvec + g_e1 + g_e2), g_e1, g_e2]
}

pub(crate) fn project_vertices(mesh: &SurfaceMesh, camera: &Camera) -> Vec<Option<ScreenVertex>> {
    mesh.vertices
        .par_iter()
        .map(|v| {
            camera
                .project(*v)
                .filter(|p| p.2 > NEAR)
                .map(|(x, y, depth)| ScreenVertex { x, y, depth })
        })
        .collect()
}

/// Z-buffered rasterization. Pixels are tested at their centres; a tie in
/// depth goes to the lower face index. Faces with a vertex behind the
/// camera or with zero screen area are skipped.
pub fn rasterize(mesh: &SurfaceMesh, camera: &Camera) -> FragmentBuffer {
    let (w, h) = (camera.width, camera.height);
    let screen = project_vertices(mesh, camera);
    let bands = h.div_ceil(BAND_ROWS);
    let mut binned: Vec<Vec<u32>> = vec![Vec::new(); bands];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let Some(sv) = f
            .iter()
            .map(|i| screen[*i as usize])
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        if screen_area(&sv[0], &sv[1], &sv[2]).abs() < 1e-14 {
            continue;
        }
        let y0 = sv.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
        let y1 = sv.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
        let j0 = (y0 - 0.5).ceil().max(0.0);
        let j1 = (y1 - 0.5).floor().min(h as f64 - 1.0);
        if j1 < j0 {
            continue;
        }
        for band in (j0 as usize / BAND_ROWS)..=(j1 as usize / BAND_ROWS) {
            binned[band].push(fi as u32);
        }
    }
    let origin = camera.position;
    let forward = camera.basis().forward;
    let band_frags: Vec<Vec<Option<Fragment>>> = binned
        .par_iter()
        .enumerate()
        .map(|(band, faces)| {
            let r0 = band * BAND_ROWS;
            let r1 = ((band + 1) * BAND_ROWS).min(h);
            let mut buf: Vec<Option<Fragment>> = vec![None; (r1 - r0) * w];
            for &fi in faces {
                let f = mesh.faces[fi as usize];
                let sv = f.map(|i| screen[i as usize].unwrap());
                let area = screen_area(&sv[0], &sv[1], &sv[2]);
                let sgn = area.signum();
                let x0 = sv.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
                let x1 = sv.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max);
                let y0 = sv.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
                let y1 = sv.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max);
                let i0 = (x0 - 0.5).ceil().max(0.0) as usize;
                let i1 = (x1 - 0.5).floor().min(w as f64 - 1.0);
                let j0 = ((y0 - 0.5).ceil().max(0.0) as usize).max(r0);
                let j1 = ((y1 - 0.5).floor().min(h as f64 - 1.0)).min(r1 as f64 - 1.0);
                if i1 < i0 as f64 || j1 < j0 as f64 {
                    continue;
                }
                let vw = f.map(|i| mesh.vertices[i as usize]);
                for j in j0..=j1 as usize {
                    let py = j as f64 + 0.5;
                    for i in i0..=i1 as usize {
                        let px = i as f64 + 0.5;
                        let inside = (0..3).all(|k| {
                            sgn * edge_fn(&sv[k], &sv[(k + 1) % 3], px, py) >= 0.0
                        });
                        if !inside {
                            continue;
                        }
                        let d = camera.ray_dir(px, py);
                        let Some((t, u, v)) = intersect(origin, d, vw) else {
                            continue;
                        };
                        let depth = t * d.dot(forward);
                        if depth <= NEAR {
                            continue;
                        }
                        let slot = &mut buf[(j - r0) * w + i];
                        let wins = match slot {
                            None => true,
                            Some(old) => depth < old.depth || (depth == old.depth && fi < old.face),
                        };
                        if wins {
                            *slot = Some(Fragment {
                                face: fi,
                                bary: [1.0 - u - v, u, v],
                                t,
                                depth,
                                position: origin + d * t,
                            });
                        }
                    }
                }
            }
            buf
        })
        .collect();
    FragmentBuffer {
        width: w,
        height: h,
        fragments: band_frags.into_iter().flatten().collect(),
        screen,
    }
}
