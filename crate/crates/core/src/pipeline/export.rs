use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{EnvironmentMap, RadianceField};
use crate::frame::Image;
use crate::geometry::SurfaceMesh;
use crate::math::Vec3;
use crate::render_mesh::{render_mesh, MeshRenderSettings};
use crate::render_vol::{Camera, ShadingSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportOptions {
    /// Leg length of each face's chart in texels; a multiple of three puts
    /// the face centroid on a texel centre.
    pub chart_texels: usize,
    pub turntable_frames: usize,
    pub turntable_resolution: usize,
    pub turntable_distance: f64,
    pub turntable_elevation_deg: f64,
    pub turntable_focal: f64,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            chart_texels: 6,
            turntable_frames: 8,
            turntable_resolution: 256,
            turntable_distance: 1.5,
            turntable_elevation_deg: 15.0,
            turntable_focal: 1.35,
        }
    }
}

/// Paths written by `export_mesh`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExportedFiles {
    pub obj: PathBuf,
    pub mtl: PathBuf,
    pub texture: PathBuf,
    pub frames: Vec<PathBuf>,
}

/// Per-face texture atlas: face `f` owns a square cell holding a right
/// triangle chart with one texel of edge padding.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureAtlas {
    pub image: Image,
    /// Three UVs per face, in `[0, 1]` with `v` pointing up.
    pub uvs: Vec<[(f64, f64); 3]>,
    pub chart_texels: usize,
}

impl TextureAtlas {
    fn cell(&self) -> usize {
        self.chart_texels + 3
    }

    fn columns(&self) -> usize {
        self.image.width / self.cell()
    }

    /// Texel holding barycentric `(1 - a - b, a, b)` of face `f`, for `a`
    /// and `b` multiples of `1 / chart_texels`.
    pub fn texel(&self, face: usize, a: usize, b: usize) -> (usize, usize) {
        let cols = self.columns();
        let (cx, cy) = ((face % cols) * self.cell(), (face / cols) * self.cell());
        (cx + 1 + a, cy + 1 + b)
    }

    /// Baked colour at the centroid of `face`.
    pub fn centroid_color(&self, face: usize) -> Vec3 {
        let k = self.chart_texels / 3;
        let (x, y) = self.texel(face, k, k);
        self.image.rgb(x, y)
    }
}

/// Bake the texture field's albedo onto per-face charts.
pub fn bake_texture<F: RadianceField>(mesh: &SurfaceMesh, texture: &F, chart_texels: usize) -> Result<TextureAtlas> {
    if chart_texels == 0 || chart_texels % 3 != 0 {
        return Err(Error::config("chart size must be a positive multiple of three"));
    }
    let k = chart_texels;
    let cell = k + 3;
    let n = mesh.faces.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (w, h) = (cols * cell, rows * cell);
    let mut image = Image::filled(w, h, Vec3::splat(0.5));
    let mut uvs = Vec::with_capacity(mesh.faces.len());
    let mut scratch = texture.new_scratch();
    for f in 0..mesh.faces.len() {
        let [p0, p1, p2] = mesh.face_points(f);
        let (cx, cy) = ((f % cols) * cell, (f / cols) * cell);
        for ty in 0..cell {
            for tx in 0..cell {
                // Clamp padding texels onto the chart so bilinear lookups
                // near an edge never blend in a neighbouring face.
                let a = (tx as f64 - 1.0).clamp(0.0, k as f64);
                let b = (ty as f64 - 1.0).clamp(0.0, k as f64);
                let (a, b) = if a + b > k as f64 {
                    let excess = 0.5 * (a + b - k as f64);
                    (a - excess, b - excess)
                } else {
                    (a, b)
                };
                let (ba, bb) = (a / k as f64, b / k as f64);
                let p = p0 * (1.0 - ba - bb) + p1 * ba + p2 * bb;
                let s = texture.query(p, false, &mut scratch)?;
                image.set_rgb(cx + tx, cy + ty, s.albedo);
            }
        }
        let uv = |x: usize, y: usize| ((x as f64 + 0.5) / w as f64, 1.0 - (y as f64 + 0.5) / h as f64);
        uvs.push([uv(cx + 1, cy + 1), uv(cx + 1 + k, cy + 1), uv(cx + 1, cy + 1 + k)]);
    }
    Ok(TextureAtlas {
        image,
        uvs,
        chart_texels: k,
    })
}

/// Wavefront OBJ text for `mesh` with per-face UVs and vertex normals.
pub fn obj_string(mesh: &SurfaceMesh, uvs: &[[(f64, f64); 3]], mtl_name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mtllib {mtl_name}");
    let _ = writeln!(s, "o surface");
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for tri in uvs {
        for (u, v) in tri {
            let _ = writeln!(s, "vt {u} {v}");
        }
    }
    let have_normals = mesh.normals.len() == mesh.vertices.len();
    if have_normals {
        for n in &mesh.normals {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    let _ = writeln!(s, "usemtl surface");
    for (f, face) in mesh.faces.iter().enumerate() {
        let _ = write!(s, "f");
        for (c, &v) in face.iter().enumerate() {
            let vi = v + 1;
            let ti = 3 * f + c + 1;
            if have_normals {
                let _ = write!(s, " {vi}/{ti}/{vi}");
            } else {
                let _ = write!(s, " {vi}/{ti}");
            }
        }
        let _ = writeln!(s);
    }
    s
}

/// Contents of an OBJ file, as far as this crate writes them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<(f64, f64)>,
    pub normals: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub face_uvs: Vec<[u32; 3]>,
}

/// Parse triangle OBJ text. Polygons with more than three corners are fan
/// triangulated.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut m = ObjMesh::default();
    let bad = |n: usize, what: &str| Error::Format(format!("obj line {}: {what}", n + 1));
    for (n, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let nums = |it: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            it.map(|t| t.parse::<f64>().map_err(|_| bad(n, "bad number"))).collect()
        };
        match tag {
            "v" | "vn" => {
                let x = nums(it)?;
                if x.len() < 3 {
                    return Err(bad(n, "expected three coordinates"));
                }
                let v = Vec3::new(x[0], x[1], x[2]);
                if tag == "v" {
                    m.vertices.push(v);
                } else {
                    m.normals.push(v);
                }
            }
            "vt" => {
                let x = nums(it)?;
                if x.len() < 2 {
                    return Err(bad(n, "expected two texture coordinates"));
                }
                m.uvs.push((x[0], x[1]));
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v: usize = parts.next().unwrap_or("").parse().map_err(|_| bad(n, "bad face index"))?;
                    let t: Option<usize> = match parts.next() {
                        Some("") | None => None,
                        Some(x) => Some(x.parse().map_err(|_| bad(n, "bad uv index"))?),
                    };
                    if v == 0 || v > m.vertices.len() {
                        return Err(bad(n, "face index out of range"));
                    }
                    corners.push((v as u32 - 1, t.map(|t| t as u32 - 1)));
                }
                if corners.len() < 3 {
                    return Err(bad(n, "face needs three corners"));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    m.faces.push(tri.map(|c| c.0));
                    if let [Some(a), Some(b), Some(c)] = tri.map(|c| c.1) {
                        m.face_uvs.push([a, b, c]);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(m)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<ObjMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

/// Fixed-light shading used for preview frames.
pub fn preview_shading(camera: &Camera) -> ShadingSample {
    ShadingSample {
        light: camera.position * 2.0 + Vec3::new(0.0, 1.0, 0.0),
        ambient: 0.35,
        diffuse: 0.65,
        texture_mix: 1.0,
        whiteness_mix: 0.0,
    }
}

/// `frames` views on a circle at fixed elevation.
pub fn turntable_cameras(opts: &ExportOptions) -> Vec<Camera> {
    let n = opts.turntable_frames;
    (0..n)
        .map(|k| {
            Camera::orbit(
                opts.turntable_distance,
                k as f64 * std::f64::consts::TAU / n as f64,
                opts.turntable_elevation_deg.to_radians(),
                opts.turntable_focal,
                opts.turntable_resolution,
                opts.turntable_resolution,
            )
        })
        .collect()
}

/// Write `<stem>.obj`, `<stem>.mtl`, `<stem>.png` and the turntable frames
/// `<stem>_turntable_NNN.png` into `dir`.
pub fn export_mesh<F: RadianceField>(
    mesh: &SurfaceMesh,
    texture: &F,
    env: &EnvironmentMap,
    dir: impl AsRef<Path>,
    stem: &str,
    opts: &ExportOptions,
) -> Result<ExportedFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let atlas = bake_texture(mesh, texture, opts.chart_texels)?;
    let obj = dir.join(format!("{stem}.obj"));
    let mtl = dir.join(format!("{stem}.mtl"));
    let tex = dir.join(format!("{stem}.png"));
    let mtl_name = format!("{stem}.mtl");
    let tex_name = format!("{stem}.png");
    fs::write(&obj, obj_string(mesh, &atlas.uvs, &mtl_name)).map_err(|e| Error::io(&obj, e))?;
    let mtl_text = format!("newmtl surface\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {tex_name}\n");
    fs::write(&mtl, mtl_text).map_err(|e| Error::io(&mtl, e))?;
    atlas.image.save_png(&tex)?;
    let settings = MeshRenderSettings::default();
    let mut frames = Vec::new();
    for (k, cam) in turntable_cameras(opts).iter().enumerate() {
        let out = render_mesh(mesh, texture, env, cam, &preview_shading(cam), &settings)?;
        let path = dir.join(format!("{stem}_turntable_{k:03}.png"));
        out.color.save_png(&path)?;
        frames.push(path);
    }
    Ok(ExportedFiles {
        obj,
        mtl,
        texture: tex,
        frames,
    })
}
