use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::raster::{edge_fn, intersect_backward, rasterize, screen_area, FragmentBuffer, ScreenVertex};
use crate::error::{Error, Result};
use crate::field::{EnvironmentMap, RadianceField, SampleGrad};
use crate::frame::Image;
use crate::geometry::{edge_faces, vertex_normals_backward, SurfaceMesh};
use crate::math::{normalize_backward, Vec3};
use crate::render_vol::{Camera, RenderOutput, ShadingSample, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshRenderSettings {
    /// Blend silhouette pixels against the background.
    pub antialias: bool,
    /// Interpolate area-weighted vertex normals; flat face normals otherwise.
    pub smooth_normals: bool,
    pub reduction_lanes: usize,
}

impl Default for MeshRenderSettings {
    fn default() -> Self {
        Self {
            antialias: true,
            smooth_normals: true,
            reduction_lanes: 4,
        }
    }
}

/// One foreground/background neighbour pair at a silhouette. The segment
/// between the pixel centres leaves face `face` through edge `edge` at
/// fraction `s` measured from the covered pixel `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SilhouettePair {
    pub p: usize,
    pub q: usize,
    pub face: u32,
    pub edge: u8,
    pub s: f64,
}

fn pixel_centre(idx: usize, w: usize) -> (f64, f64) {
    ((idx % w) as f64 + 0.5, (idx / w) as f64 + 0.5)
}

fn face_screen(buf: &FragmentBuffer, mesh: &SurfaceMesh, face: u32) -> [ScreenVertex; 3] {
    mesh.faces[face as usize].map(|i| buf.screen[i as usize].expect("rasterized face is in front"))
}

/// Where the segment from `(xp, yp)` (inside) to `(xq, yq)` first leaves
/// the triangle: `(edge, s, e_p, e_q)` with orientation-normalized edge
/// values.
fn exit_edge(sv: &[ScreenVertex; 3], xp: f64, yp: f64, xq: f64, yq: f64) -> Option<(u8, f64, f64, f64)> {
    let sgn = screen_area(&sv[0], &sv[1], &sv[2]).signum();
    let mut best: Option<(u8, f64, f64, f64)> = None;
    for k in 0..3 {
        let (a, b) = (&sv[k], &sv[(k + 1) % 3]);
        let ep = sgn * edge_fn(a, b, xp, yp);
        let eq = sgn * edge_fn(a, b, xq, yq);
        if eq < 0.0 && ep >= 0.0 {
            let s = ep / (ep - eq);
            if best.is_none_or(|b| s < b.1) {
                best = Some((k as u8, s, ep, eq));
            }
        }
    }
    best
}

fn try_face_screen(buf: &FragmentBuffer, mesh: &SurfaceMesh, face: u32) -> Option<[ScreenVertex; 3]> {
    let f = mesh.faces[face as usize];
    Some([buf.screen[f[0] as usize]?, buf.screen[f[1] as usize]?, buf.screen[f[2] as usize]?])
}

/// Longest face walk from a covered pixel towards its silhouette.
const MAX_WALK: usize = 64;

/// Follow the segment from the covered pixel `p` across front-facing
/// neighbours until it leaves the surface through an edge with no such
/// neighbour. Returns the last face, its exit edge and the fraction.
fn silhouette_crossing(
    buf: &FragmentBuffer,
    mesh: &SurfaceMesh,
    adjacency: &std::collections::HashMap<(u32, u32), Vec<u32>>,
    start: u32,
    (xp, yp): (f64, f64),
    (xq, yq): (f64, f64),
) -> Option<(u32, u8, f64)> {
    let mut face = start;
    let mut sv = face_screen(buf, mesh, face);
    let front = screen_area(&sv[0], &sv[1], &sv[2]).signum();
    let mut last_s = f64::NEG_INFINITY;
    for _ in 0..MAX_WALK {
        let (edge, s, _, _) = exit_edge(&sv, xp, yp, xq, yq)?;
        if s < last_s - 1e-12 || s > 1.0 {
            return None;
        }
        last_s = s;
        let f = mesh.faces[face as usize];
        let (a, b) = (f[edge as usize], f[(edge as usize + 1) % 3]);
        let next = adjacency
            .get(&(a.min(b), a.max(b)))
            .into_iter()
            .flatten()
            .copied()
            .find(|&g| g != face);
        let next_sv = next.and_then(|g| try_face_screen(buf, mesh, g).map(|v| (g, v)));
        match next_sv {
            Some((g, v)) if screen_area(&v[0], &v[1], &v[2]).signum() == front => {
                face = g;
                sv = v;
            }
            _ => return Some((face, edge, s)),
        }
    }
    None
}

/// Screen-space edge blend at silhouettes. A neighbour pair where exactly
/// one pixel is covered shares colour in proportion to how far the
/// silhouette edge sits from the midpoint between the two centres.
pub fn silhouette_aa(
    buf: &FragmentBuffer,
    mesh: &SurfaceMesh,
    color: &Image,
    alpha: &[f64],
) -> (Image, Vec<f64>, Vec<SilhouettePair>) {
    let (w, h) = (buf.width, buf.height);
    let mut out = color.clone();
    let mut out_alpha = alpha.to_vec();
    let mut pairs = Vec::new();
    let mut adjacency = None;
    let mut visit = |a: usize, b: usize| {
        let (fa, fb) = (buf.fragments[a], buf.fragments[b]);
        let (p, q, face) = match (fa, fb) {
            (Some(f), None) => (a, b, f.face),
            (None, Some(f)) => (b, a, f.face),
            _ => return,
        };
        let adjacency = adjacency.get_or_insert_with(|| edge_faces(&mesh.faces));
        let found = silhouette_crossing(buf, mesh, adjacency, face, pixel_centre(p, w), pixel_centre(q, w));
        if let Some((face, edge, s)) = found {
            // horizontal pairs take steep edges, vertical pairs shallow ones,
            // so a pixel flipping at a corner does not lose two blends at once
            let sv = face_screen(buf, mesh, face);
            let (ea, eb) = (&sv[edge as usize], &sv[(edge as usize + 1) % 3]);
            let steep = (eb.y - ea.y).abs() >= (eb.x - ea.x).abs();
            if steep == (b == a + 1) {
                pairs.push(SilhouettePair { p, q, face, edge, s });
            }
        }
    };
    for j in 0..h {
        for i in 0..w {
            let idx = j * w + i;
            if i + 1 < w {
                visit(idx, idx + 1);
            }
            if j + 1 < h {
                visit(idx, idx + w);
            }
        }
    }
    for pr in &pairs {
        let cp = color.rgb(pr.p % w, pr.p / w);
        let cq = color.rgb(pr.q % w, pr.q / w);
        let m = pr.s - 0.5;
        let (target, delta, d_alpha, at) = if m >= 0.0 {
            (pr.q, (cp - cq) * m, m, pr.q)
        } else {
            (pr.p, (cq - cp) * -m, m, pr.p)
        };
        let (ti, tj) = (target % w, target / w);
        let cur = out.rgb(ti, tj);
        out.set_rgb(ti, tj, cur + delta);
        out_alpha[at] += d_alpha;
    }
    (out, out_alpha, pairs)
}

/// Recorded forward pass of a mesh render.
pub struct MeshTape<'a, F: RadianceField> {
    mesh: &'a SurfaceMesh,
    texture: &'a F,
    camera: Camera,
    shading: ShadingSample,
    settings: MeshRenderSettings,
    buffer: FragmentBuffer,
    base: Image,
    pairs: Vec<SilhouettePair>,
}

/// Gradients of a mesh render: texture-field parameters and mesh vertex
/// positions.
pub struct MeshGrad<G> {
    pub texture: G,
    pub vertices: Vec<Vec3>,
}

impl<F: RadianceField> MeshTape<'_, F> {
    pub fn fragments(&self) -> &FragmentBuffer {
        &self.buffer
    }

    pub fn silhouette_pairs(&self) -> &[SilhouettePair] {
        &self.pairs
    }
}

fn shading_normal(mesh: &SurfaceMesh, face: u32, bary: [f64; 3], smooth: bool) -> (Vec3, Vec3, bool) {
    let f = mesh.faces[face as usize];
    if smooth && mesh.normals.len() == mesh.vertices.len() {
        let raw = (0..3).fold(Vec3::ZERO, |acc, k| acc + mesh.normals[f[k] as usize] * bary[k]);
        if raw.norm_squared() > 1e-24 {
            return (raw.normalized(), raw, true);
        }
    }
    (mesh.face_normal(face as usize), Vec3::ZERO, false)
}

/// Texture, light and composite the fragments of a rasterized mesh over the
/// environment map.
pub fn shade_fragments<'a, F: RadianceField>(
    buffer: FragmentBuffer,
    mesh: &'a SurfaceMesh,
    texture: &'a F,
    env: &EnvironmentMap,
    camera: &Camera,
    shading: &ShadingSample,
    settings: &MeshRenderSettings,
) -> Result<RenderOutput<MeshTape<'a, F>>> {
    let (w, h) = (buffer.width, buffer.height);
    let rows: Vec<Result<Vec<Vec3>>> = (0..h)
        .into_par_iter()
        .map(|j| {
            let mut scratch = texture.new_scratch();
            (0..w)
                .map(|i| match buffer.get(i, j) {
                    None => Ok(env.eval_background(camera.pixel_ray(i, j))),
                    Some(fr) => {
                        let smp = texture.query(fr.position, false, &mut scratch)?;
                        let (n, _, _) = shading_normal(mesh, fr.face, fr.bary, settings.smooth_normals);
                        Ok(shading.shade(smp.albedo, n, fr.position))
                    }
                })
                .collect()
        })
        .collect();
    let mut base = Image::zeros(w, h, 3);
    for (j, row) in rows.into_iter().enumerate() {
        for (i, c) in row?.into_iter().enumerate() {
            base.set_rgb(i, j, c);
        }
    }
    let alpha: Vec<f64> = buffer
        .fragments
        .iter()
        .map(|f| if f.is_some() { 1.0 } else { 0.0 })
        .collect();
    let (color, alpha, pairs) = if settings.antialias {
        silhouette_aa(&buffer, mesh, &base, &alpha)
    } else {
        (base.clone(), alpha, Vec::new())
    };
    let hit_coords = buffer.fragments.iter().map(|f| f.map(|f| f.position)).collect();
    Ok(RenderOutput {
        color,
        alpha,
        hit_coords,
        tape: Some(MeshTape {
            mesh,
            texture,
            camera: *camera,
            shading: *shading,
            settings: settings.clone(),
            buffer,
            base,
            pairs,
        }),
    })
}

/// Rasterize and shade in one call.
pub fn render_mesh<'a, F: RadianceField>(
    mesh: &'a SurfaceMesh,
    texture: &'a F,
    env: &EnvironmentMap,
    camera: &Camera,
    shading: &ShadingSample,
    settings: &MeshRenderSettings,
) -> Result<RenderOutput<MeshTape<'a, F>>> {
    let buffer = rasterize(mesh, camera);
    shade_fragments(buffer, mesh, texture, env, camera, shading, settings)
}

impl<F: RadianceField> MeshTape<'_, F> {
    /// Push a gradient on the silhouette fraction `s` of a pair onto the
    /// world positions of the crossed edge's endpoints.
    fn silhouette_backward(&self, pr: &SilhouettePair, g_s: f64, grad: &mut [Vec3]) {
        let w = self.buffer.width;
        let f = self.mesh.faces[pr.face as usize];
        let sv = face_screen(&self.buffer, self.mesh, pr.face);
        let sgn = screen_area(&sv[0], &sv[1], &sv[2]).signum();
        let k = pr.edge as usize;
        let (ia, ib) = (f[k] as usize, f[(k + 1) % 3] as usize);
        let (a, b) = (&sv[k], &sv[(k + 1) % 3]);
        let (xp, yp) = pixel_centre(pr.p, w);
        let (xq, yq) = pixel_centre(pr.q, w);
        let ep = sgn * edge_fn(a, b, xp, yp);
        let eq = sgn * edge_fn(a, b, xq, yq);
        let dd = (ep - eq) * (ep - eq);
        let g_ep = -eq / dd * g_s * sgn;
        let g_eq = ep / dd * g_s * sgn;
        // edge_fn gradients with respect to a and b at a point (x, y)
        let mut ga = [0.0; 2];
        let mut gb = [0.0; 2];
        for (g, x, y) in [(g_ep, xp, yp), (g_eq, xq, yq)] {
            ga[0] += g * (b.y - y);
            ga[1] += g * (x - b.x);
            gb[0] += g * (y - a.y);
            gb[1] += g * -(x - a.x);
        }
        for (idx, g) in [(ia, ga), (ib, gb)] {
            let (jx, jy) = self.camera.project_jacobian(self.mesh.vertices[idx]);
            grad[idx] += jx * g[0] + jy * g[1];
        }
    }
}

impl<F: RadianceField> Tape for MeshTape<'_, F> {
    type Grad = MeshGrad<F::Grad>;

    fn backward(&self, grad_color: &Image, grad_alpha: Option<&[f64]>) -> Result<Self::Grad> {
        let (w, h) = (self.buffer.width, self.buffer.height);
        if grad_color.shape() != (3, h, w) || grad_alpha.is_some_and(|g| g.len() != w * h) {
            return Err(Error::config("gradient shape does not match the render"));
        }
        let nv = self.mesh.vertices.len();
        let mut g_base = grad_color.clone();
        let mut g_vertices = vec![Vec3::ZERO; nv];
        for pr in &self.pairs {
            let cp = self.base.rgb(pr.p % w, pr.p / w);
            let cq = self.base.rgb(pr.q % w, pr.q / w);
            let m = pr.s - 0.5;
            let target = if m >= 0.0 { pr.q } else { pr.p };
            let gt = grad_color.rgb(target % w, target / w);
            let ga = grad_alpha.map_or(0.0, |g| g[target]);
            // both branches move colour by m (c_p - c_q) into the target
            let gp = g_base.rgb(pr.p % w, pr.p / w) + gt * m;
            g_base.set_rgb(pr.p % w, pr.p / w, gp);
            let gq = g_base.rgb(pr.q % w, pr.q / w) - gt * m;
            g_base.set_rgb(pr.q % w, pr.q / w, gq);
            let g_s = gt.dot(cp - cq) + ga;
            self.silhouette_backward(pr, g_s, &mut g_vertices);
        }
        let n_pix = w * h;
        let lanes = self.settings.reduction_lanes.max(1).min(n_pix.max(1));
        let per_lane = n_pix.div_ceil(lanes);
        let origin = self.camera.position;
        let smooth = self.settings.smooth_normals;
        let partials: Vec<Result<(F::Grad, Vec<Vec3>, Vec<Vec3>)>> = (0..lanes)
            .into_par_iter()
            .map(|lane| {
                let mut tg = self.texture.zero_grad();
                let mut gv = vec![Vec3::ZERO; nv];
                let mut gn = vec![Vec3::ZERO; if smooth { nv } else { 0 }];
                let mut scratch = self.texture.new_scratch();
                for idx in lane * per_lane..((lane + 1) * per_lane).min(n_pix) {
                    let Some(fr) = self.buffer.fragments[idx] else {
                        continue;
                    };
                    let (i, j) = (idx % w, idx / w);
                    let g_c = g_base.rgb(i, j);
                    if g_c == Vec3::ZERO {
                        continue;
                    }
                    let smp = self.texture.query(fr.position, false, &mut scratch)?;
                    let (n, raw, is_smooth) = shading_normal(self.mesh, fr.face, fr.bary, smooth);
                    let sg = self.shading.shade_backward(smp.albedo, n, fr.position, g_c);
                    let g_tex = SampleGrad {
                        albedo: sg.albedo,
                        ..Default::default()
                    };
                    let g_pos = sg.point + self.texture.backward(fr.position, false, &mut scratch, &g_tex, &mut tg);
                    let face = self.mesh.faces[fr.face as usize];
                    let mut g_b = [0.0; 3];
                    if is_smooth && sg.normal != Vec3::ZERO {
                        let g_raw = normalize_backward(raw, sg.normal);
                        for k in 0..3 {
                            let vi = face[k] as usize;
                            gn[vi] += g_raw * fr.bary[k];
                            g_b[k] += self.mesh.normals[vi].dot(g_raw);
                        }
                    }
                    let d = self.camera.pixel_ray(i, j);
                    // position = origin + t d, with barycentrics (1-u-w, u, w)
                    let vw = face.map(|k| self.mesh.vertices[k as usize]);
                    let gx = intersect_backward(
                        origin,
                        d,
                        vw,
                        g_pos.dot(d),
                        g_b[1] - g_b[0],
                        g_b[2] - g_b[0],
                    );
                    for k in 0..3 {
                        gv[face[k] as usize] += gx[k];
                    }
                }
                Ok((tg, gv, gn))
            })
            .collect();
        let mut texture = self.texture.zero_grad();
        let mut g_normals = vec![Vec3::ZERO; if smooth { nv } else { 0 }];
        for part in partials {
            let (tg, gv, gn) = part?;
            self.texture.add_grad(&mut texture, &tg);
            for (a, b) in g_vertices.iter_mut().zip(&gv) {
                *a += *b;
            }
            for (a, b) in g_normals.iter_mut().zip(&gn) {
                *a += *b;
            }
        }
        if smooth {
            let gx = vertex_normals_backward(&self.mesh.vertices, &self.mesh.faces, &g_normals);
            for (a, b) in g_vertices.iter_mut().zip(&gx) {
                *a += *b;
            }
        }
        Ok(MeshGrad {
            texture,
            vertices: g_vertices,
        })
    }
}
