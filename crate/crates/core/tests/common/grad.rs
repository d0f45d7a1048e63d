//! Reverse-mode gradients against central finite differences.

use rand::seq::index::sample;
use rand::Rng;
use sdsynth::field::{EnvironmentMap, NeuralField, SampleGrad};
use sdsynth::frame::Image;
use sdsynth::geometry::{face_smoothness, marching_tets, marching_tets_backward, TetGrid, TetGridConfig};
use sdsynth::guidance::{AvgPoolEncoder, Encoder};
use sdsynth::params::ParamSet;
use sdsynth::render_mesh::{render_mesh, MeshRenderSettings};
use sdsynth::render_vol::{render_volume, sample_shading, Camera, RenderSettings};
use sdsynth::accel::Octree;
use sdsynth::Vec3;

use super::{rng, small_field, Outcome};

/// Gradients smaller than this are compared on an absolute scale.
pub const MAGNITUDE_FLOOR: f64 = 1e-5;
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct Stats {
    pub checked: usize,
    pub failed: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl Stats {
    pub fn record(&mut self, analytic: f64, numeric: f64, tol: f64, what: &str) {
        let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
        let err = (analytic - numeric).abs() / scale;
        self.checked += 1;
        if !(err <= tol) {
            self.failed += 1;
        }
        if !(err <= self.worst) {
            self.worst = err;
            self.worst_at = format!("{what} (analytic {analytic:.6e}, numeric {numeric:.6e})");
        }
    }

    pub fn merge(&mut self, o: Stats) {
        self.checked += o.checked;
        self.failed += o.failed;
        if o.worst > self.worst {
            self.worst = o.worst;
            self.worst_at = o.worst_at;
        }
    }

    pub fn outcome(&self, tol: f64) -> Outcome {
        Outcome::new(
            self.failed == 0 && self.checked > 0,
            format!(
                "{} derivatives, {} above {tol:e}, worst rel err {:.2e} at {}",
                self.checked, self.failed, self.worst, self.worst_at
            ),
        )
    }
}

fn nudge<P: ParamSet>(p: &mut P, mut idx: usize, delta: f64) {
    for s in p.param_slices_mut() {
        if idx < s.len() {
            s[idx] += delta;
            return;
        }
        idx -= s.len();
    }
    panic!("parameter index out of range");
}

/// Indices to probe: `k` drawn among the nonzero analytic entries and `k`
/// drawn uniformly.
fn probe_indices(grad: &[f64], k: usize, r: &mut impl Rng) -> Vec<usize> {
    let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    let mut out: Vec<usize> = sample(r, nonzero.len(), k.min(nonzero.len()))
        .into_iter()
        .map(|i| nonzero[i])
        .collect();
    out.extend(sample(r, grad.len(), k.min(grad.len())).into_iter());
    out
}

/// Compare `grad` (flattened in `ParamSet` order) against central
/// differences of `loss` at a handful of parameters.
pub fn check_params<P: ParamSet + Clone>(
    params: &P,
    grad: &[f64],
    k: usize,
    r: &mut impl Rng,
    tol: f64,
    what: &str,
    stats: &mut Stats,
    loss: impl Fn(&P) -> f64,
) {
    for i in probe_indices(grad, k, r) {
        let mut plus = params.clone();
        nudge(&mut plus, i, STEP);
        let mut minus = params.clone();
        nudge(&mut minus, i, -STEP);
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
        stats.record(grad[i], fd, tol, &format!("{what}[{i}]"));
    }
}

fn random_vec3(r: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(r.random_range(lo..hi), r.random_range(lo..hi), r.random_range(lo..hi))
}

fn random_image(r: &mut impl Rng, w: usize, h: usize, c: usize) -> Image {
    let mut img = Image::zeros(w, h, c);
    img.data.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    img
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Field: hash tables, both MLPs and the query point, through density,
/// albedo and normal outputs.
pub fn field_seed(seed: u64, tol: f64) -> Stats {
    let mut r = rng(1000 + seed);
    let f = small_field(seed);
    let p = random_vec3(&mut r, -1.5, 1.5);
    let g = SampleGrad {
        density: r.random_range(-1.0..1.0),
        albedo: random_vec3(&mut r, -1.0, 1.0),
        normal: random_vec3(&mut r, -1.0, 1.0),
    };
    let loss = |f: &NeuralField, p: Vec3| {
        let mut s = f.scratch();
        let o = f.query_with(p, true, &mut s).unwrap();
        g.density * o.density + g.albedo.dot(o.albedo) + g.normal.dot(o.normal)
    };
    let mut s = f.scratch();
    f.query_with(p, true, &mut s).unwrap();
    let mut grads = f.zeros_like();
    let gp = f.backward_with(p, true, &mut s, &g, &mut grads);
    let mut stats = Stats::default();
    for a in 0..3 {
        let mut e = Vec3::ZERO;
        e[a] = STEP;
        let fd = (loss(&f, p + e) - loss(&f, p - e)) / (2.0 * STEP);
        stats.record(gp[a], fd, tol, &format!("field point[{a}] seed {seed}"));
    }
    check_params(&f, &grads.to_flat(), 8, &mut r, tol, &format!("field seed {seed}"), &mut stats, |f| loss(f, p));
    stats
}

fn probe_camera(r: &mut impl Rng, n: usize) -> Camera {
    Camera::orbit(
        r.random_range(2.2..3.0),
        r.random_range(0.0..std::f64::consts::TAU),
        r.random_range(-0.3..0.8),
        r.random_range(0.9..1.3),
        n,
        n,
    )
}

/// Volume render: every pixel and alpha through the field and the
/// environment map.
pub fn render_vol_seed(seed: u64, tol: f64) -> Stats {
    let mut r = rng(2000 + seed);
    let field = small_field(seed);
    let env = EnvironmentMap::new(&mut r);
    let octree = Octree::full(2.0, 3);
    let cam = probe_camera(&mut r, 8);
    let shading = sample_shading(&cam, &mut r);
    let settings = RenderSettings {
        max_samples: 24,
        min_transmittance: 0.0,
        reduction_lanes: 2,
    };
    let gc = random_image(&mut r, 8, 8, 3);
    let ga: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
    let loss = |f: &NeuralField, e: &EnvironmentMap| {
        let out = render_volume(f, e, &octree, &cam, &shading, &settings).unwrap();
        dot(&out.color.data, &gc.data) + dot(&out.alpha, &ga)
    };
    let out = render_volume(&field, &env, &octree, &cam, &shading, &settings).unwrap();
    let g = out.backward(&gc, Some(&ga)).unwrap();
    let mut stats = Stats::default();
    let what = format!("volume field seed {seed}");
    check_params(&field, &g.field.to_flat(), 6, &mut r, tol, &what, &mut stats, |f| loss(f, &env));
    let what = format!("volume env seed {seed}");
    check_params(&env, &g.env.to_flat(), 4, &mut r, tol, &what, &mut stats, |e| loss(&field, e));
    stats
}

fn random_tet_grid(seed: u64) -> TetGrid {
    let mut r = rng(3000 + seed);
    let mut g = TetGrid::new(&TetGridConfig {
        resolution: 4,
        extent: 1.0,
        max_deform_fraction: 0.125,
    })
    .unwrap();
    let c = random_vec3(&mut r, -0.15, 0.15);
    let rad = r.random_range(0.45..0.7);
    let bound = 0.1 * g.edge_length();
    for d in g.deform.iter_mut() {
        *d = r.random_range(-bound..bound);
    }
    let noise: Vec<f64> = (0..g.num_vertices()).map(|_| r.random_range(-0.05..0.05)).collect();
    for i in 0..g.num_vertices() {
        g.sdf[i] = rad - (g.position(i) - c).norm() + noise[i];
    }
    g
}

/// Marching tetrahedra plus the face smoothness regularizer, back to the
/// per-vertex signed values and deformations.
pub fn geometry_seed(seed: u64, tol: f64) -> Stats {
    let mut r = rng(4000 + seed);
    let grid = random_tet_grid(seed);
    let mesh = marching_tets(&grid);
    let w: Vec<Vec3> = (0..mesh.vertices.len()).map(|_| random_vec3(&mut r, -1.0, 1.0)).collect();
    let lambda = r.random_range(0.5..2.0);
    let loss = |g: &TetGrid| {
        let m = marching_tets(g);
        let lin: f64 = m.vertices.iter().zip(&w).map(|(v, w)| v.dot(*w)).sum();
        lin + lambda * face_smoothness(&m).0
    };
    let (_, gs) = face_smoothness(&mesh);
    let gv: Vec<Vec3> = w.iter().zip(&gs).map(|(a, b)| *a + *b * lambda).collect();
    let grad = marching_tets_backward(&grid, &mesh, &gv);
    let mut stats = Stats::default();
    let params = grid.params();
    let what = format!("tet seed {seed}");
    check_params(&params, &grad.to_flat(), 8, &mut r, tol, &what, &mut stats, |p| {
        let mut g = grid.clone();
        g.set_params(p).unwrap();
        loss(&g)
    });
    stats
}

fn sphere_mesh(seed: u64) -> sdsynth::geometry::SurfaceMesh {
    let mut g = TetGrid::new(&TetGridConfig {
        resolution: 8,
        extent: 1.0,
        max_deform_fraction: 0.125,
    })
    .unwrap();
    let mut r = rng(5000 + seed);
    let c = random_vec3(&mut r, -0.1, 0.1);
    let rad = r.random_range(0.5..0.7);
    g.set_sdf_from(|p| rad - (p - c).norm());
    marching_tets(&g)
}

/// Mesh render: texture-field parameters at `tol`, vertex positions
/// through the silhouette blend at `aa_tol`.
pub fn render_mesh_seed(seed: u64, tol: f64, aa_tol: f64) -> (Stats, Stats) {
    let mut r = rng(6000 + seed);
    let mesh = sphere_mesh(seed);
    let tex = small_field(seed);
    let env = EnvironmentMap::new(&mut r);
    let cam = probe_camera(&mut r, 16);
    let shading = sample_shading(&cam, &mut r);
    let settings = MeshRenderSettings::default();
    let gc = random_image(&mut r, 16, 16, 3);
    let ga: Vec<f64> = (0..256).map(|_| r.random_range(-1.0..1.0)).collect();
    let loss = |m: &sdsynth::geometry::SurfaceMesh, t: &NeuralField| {
        let out = render_mesh(m, t, &env, &cam, &shading, &settings).unwrap();
        dot(&out.color.data, &gc.data) + dot(&out.alpha, &ga)
    };
    let out = render_mesh(&mesh, &tex, &env, &cam, &shading, &settings).unwrap();
    let g = out.backward(&gc, Some(&ga)).unwrap();
    let mut tex_stats = Stats::default();
    let what = format!("mesh texture seed {seed}");
    check_params(&tex, &g.texture.to_flat(), 6, &mut r, tol, &what, &mut tex_stats, |t| loss(&mesh, t));
    let mut pos_stats = Stats::default();
    let basis = cam.basis();
    let live: Vec<usize> = (0..mesh.vertices.len()).filter(|&i| g.vertices[i] != Vec3::ZERO).collect();
    for k in sample(&mut r, live.len(), 6.min(live.len())) {
        let i = live[k];
        for (axis, u) in [("right", basis.right), ("up", basis.up)] {
            let moved = |d: f64| {
                let mut m = mesh.clone();
                m.vertices[i] += u * d;
                m.recompute_normals();
                loss(&m, &tex)
            };
            let fd = (moved(STEP) - moved(-STEP)) / (2.0 * STEP);
            pos_stats.record(g.vertices[i].dot(u), fd, aa_tol, &format!("mesh vertex {i} {axis} seed {seed}"));
        }
    }
    (tex_stats, pos_stats)
}

/// Average-pool encoder vector-Jacobian product.
pub fn guidance_seed(seed: u64, tol: f64) -> Stats {
    let mut r = rng(7000 + seed);
    let factor = [2, 4, 8][seed as usize % 3];
    let n = factor * r.random_range(1..4);
    let enc = AvgPoolEncoder::new(factor, (n, n)).unwrap();
    let x = random_image(&mut r, n, n, 3);
    let gz = random_image(&mut r, n / factor, n / factor, 3);
    let gx = enc.vjp(&x, &gz).unwrap();
    let mut stats = Stats::default();
    for i in sample(&mut r, x.data.len(), 8.min(x.data.len())) {
        let at = |d: f64| {
            let mut y = x.clone();
            y.data[i] += d;
            dot(&enc.encode(&y).unwrap().data, &gz.data)
        };
        let fd = (at(STEP) - at(-STEP)) / (2.0 * STEP);
        stats.record(gx.data[i], fd, tol, &format!("pool x{factor} [{i}] seed {seed}"));
    }
    stats
}

/// The whole suite over `seeds` seeds per module.
pub fn suite(seeds: u64) -> Vec<(&'static str, Outcome)> {
    const TOL: f64 = 1e-4;
    const AA_TOL: f64 = 5e-2;
    let mut field = Stats::default();
    let mut vol = Stats::default();
    let mut geo = Stats::default();
    let mut tex = Stats::default();
    let mut pos = Stats::default();
    let mut gui = Stats::default();
    for s in 0..seeds {
        field.merge(field_seed(s, TOL));
        vol.merge(render_vol_seed(s, TOL));
        geo.merge(geometry_seed(s, TOL));
        let (t, p) = render_mesh_seed(s, TOL, AA_TOL);
        tex.merge(t);
        pos.merge(p);
        gui.merge(guidance_seed(s, TOL));
    }
    vec![
        ("field", field.outcome(TOL)),
        ("render_vol", vol.outcome(TOL)),
        ("geometry", geo.outcome(TOL)),
        ("render_mesh texture", tex.outcome(TOL)),
        ("render_mesh silhouette", pos.outcome(AA_TOL)),
        ("guidance", gui.outcome(TOL)),
    ]
}
