//! Closed-form and brute-force references for the renderer, the
//! acceleration structure, marching tetrahedra, guidance and the pipeline.

use rand::Rng;
use rand_distr::StandardNormal;
use sdsynth::accel::{OccupancyConfig, OccupancyGrid, Octree};
use sdsynth::field::{AnalyticField, EnvironmentMap};
use sdsynth::frame::Image;
use sdsynth::geometry::{marching_tets, topology, TetGrid, TetGridConfig};
use sdsynth::guidance::{
    cfg_combine, cfg_combine_extended, oracle_denoise, sds_gradient, sds_gradient_latent, ConditionSet,
    DiffusionSchedule, GaussianOraclePrior, GuidanceModel, IdentityEncoder, SdsConfig, Weighting,
};
use sdsynth::pipeline::{CoarseSession, FineSession, RunConfig};
use sdsynth::render_vol::{render_volume, Camera, RenderOutput, RenderSettings, ShadingSample, Tape};
use sdsynth::{Result, Vec3};

use super::{rng, Outcome};

fn front_camera(n: usize, distance: f64, focal: f64) -> Camera {
    Camera::look_at(
        Vec3::new(0.0, 0.0, distance),
        Vec3::ZERO,
        Vec3::new(0.0, 1.0, 0.0),
        focal,
        n,
        n,
    )
}

/// Length of the chord a ray cuts through a sphere at the origin.
pub fn sphere_chord(origin: Vec3, dir: Vec3, radius: f64) -> f64 {
    let d = dir.normalized();
    let b = origin.dot(d);
    let c = origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        0.0
    } else {
        2.0 * disc.sqrt()
    }
}

/// Homogeneous sphere of density `sigma0`: every pixel's alpha against
/// `1 - exp(-sigma0 chord)`.
pub fn analytic_transmittance(sigma0: f64, radius: f64, samples: usize, n: usize) -> Outcome {
    let field = AnalyticField {
        density: move |p: Vec3| if p.norm() < radius { sigma0 } else { 0.0 },
        albedo: Vec3::splat(0.5),
        normal: Vec3::new(0.0, 0.0, 1.0),
    };
    let env = EnvironmentMap::zeros();
    let octree = Octree::full(1.0, 0);
    let cam = front_camera(n, 2.5, 1.2);
    let settings = RenderSettings {
        max_samples: samples,
        min_transmittance: 0.0,
        ..Default::default()
    };
    let out = render_volume(&field, &env, &octree, &cam, &ShadingSample::albedo_only(), &settings).unwrap();
    let mut worst: f64 = 0.0;
    let mut hits = 0;
    for j in 0..n {
        for i in 0..n {
            let chord = sphere_chord(cam.position, cam.pixel_ray(i, j), radius);
            hits += (chord > 0.0) as usize;
            let expected = 1.0 - (-sigma0 * chord).exp();
            worst = worst.max((out.alpha[j * n + i] - expected).abs());
        }
    }
    Outcome::new(
        worst <= 1e-3 && hits > 0,
        format!("sigma0 {sigma0}, {samples} samples, {hits} rays through the sphere, max |alpha err| {worst:.2e} (tol 1e-3)"),
    )
}

/// A grid with a random blob of occupied cells and a density that vanishes
/// outside them.
pub fn blob_grid(seed: u64, res: usize) -> OccupancyGrid {
    let mut r = rng(seed);
    let mut g = OccupancyGrid::new(
        OccupancyConfig {
            resolution: res,
            ..Default::default()
        },
        2.0,
    )
    .unwrap();
    let c = Vec3::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
    let rad = r.random_range(0.6..1.2);
    let h = g.cell_size();
    for i in 0..g.values.len() {
        let cell = g.coords(i);
        let centre = g.cell_min(cell) + Vec3::splat(0.5 * h);
        let inside = (centre - c).norm() < rad && r.random::<f64>() < 0.8;
        g.values[i] = if inside { 1.0 } else { 0.0 };
    }
    g
}

/// Renders with empty-space skipping against dense sampling of the same
/// strata, for a field that is zero outside occupied cells.
pub fn pruning_equivalence(seeds: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut skipped_fraction = 0.0;
    for s in 0..seeds {
        let grid = blob_grid(100 + s, 16);
        let octree = Octree::build(&grid);
        let dense = Octree::full(grid.bound, octree.depth);
        let g = &grid;
        let field = AnalyticField {
            density: move |p: Vec3| match g.cell_of(p) {
                Some(c) if g.is_occupied(c) => 2.0 + (3.0 * p.x).sin() + (2.0 * p.y * p.z).cos(),
                _ => 0.0,
            },
            albedo: Vec3::new(0.7, 0.4, 0.2),
            normal: Vec3::new(0.0, 0.0, 1.0),
        };
        let mut r = rng(200 + s);
        let env = EnvironmentMap::new(&mut r);
        let cam = Camera::orbit(3.0, r.random_range(0.0..6.28), r.random_range(-0.5..0.9), 1.0, 24, 24);
        let settings = RenderSettings {
            max_samples: 256,
            min_transmittance: 0.0,
            ..Default::default()
        };
        let sh = ShadingSample::albedo_only();
        let a = render_volume(&field, &env, &octree, &cam, &sh, &settings).unwrap();
        let b = render_volume(&field, &env, &dense, &cam, &sh, &settings).unwrap();
        worst = worst.max(a.color.max_abs_diff(&b.color));
        let (na, nb) = (a.tape().unwrap().num_samples(), b.tape().unwrap().num_samples());
        skipped_fraction += 1.0 - na as f64 / nb as f64;
    }
    Outcome::new(
        worst <= 1e-5,
        format!(
            "{seeds} scenes, max pixel diff {worst:.2e} (tol 1e-5), {:.0}% of samples skipped",
            100.0 * skipped_fraction / seeds as f64
        ),
    )
}

/// Updates on an empty field decay every cell as `20 * 0.6^k`.
pub fn decay_law(updates: u32) -> Outcome {
    let mut g = OccupancyGrid::new(
        OccupancyConfig {
            resolution: 8,
            ..Default::default()
        },
        2.0,
    )
    .unwrap();
    let zero = |_: Vec3| 0.0;
    let mut expected = 20.0;
    let mut exact = true;
    let mut worst_rel: f64 = 0.0;
    for k in 1..=updates {
        g.update(&zero, k as u64);
        expected *= 0.6;
        exact &= g.values.iter().all(|v| *v == expected);
        let closed = 20.0 * 0.6f64.powi(k as i32);
        worst_rel = worst_rel.max((g.values[0] - closed).abs() / closed);
    }
    Outcome::new(
        exact && worst_rel < 1e-13,
        format!("{updates} updates, bit-equal to repeated 0.6 decay: {exact}, max rel diff to 20*0.6^k {worst_rel:.1e}"),
    )
}

/// Analytic sphere on a 32^3 grid: watertight, every vertex within half a
/// cell diagonal of the sphere.
pub fn marching_sphere(radius: f64) -> Outcome {
    let mut g = TetGrid::new(&TetGridConfig {
        resolution: 32,
        extent: 1.0,
        max_deform_fraction: 0.125,
    })
    .unwrap();
    g.set_sdf_from(|p| radius - p.norm());
    let m = marching_tets(&g);
    let topo = topology(&m.faces);
    let half = 0.5 * g.cell_diagonal();
    let worst = m.vertices.iter().map(|v| (v.norm() - radius).abs()).fold(0.0, f64::max);
    Outcome::new(
        topo.is_watertight() && worst <= half && !m.is_empty(),
        format!(
            "{} vertices, {} faces, watertight {}, max |r - R| {worst:.4} (half diagonal {half:.4})",
            m.vertices.len(),
            m.faces.len(),
            topo.is_watertight()
        ),
    )
}

/// Affine signed values at deformed vertices: extracted vertices on the
/// plane.
pub fn marching_plane(seeds: u64) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut vertices = 0;
    for s in 0..seeds {
        let mut r = rng(300 + s);
        let mut g = TetGrid::new(&TetGridConfig {
            resolution: 10,
            extent: 1.0,
            max_deform_fraction: 0.125,
        })
        .unwrap();
        let b = 0.125 * g.edge_length();
        g.deform.iter_mut().for_each(|d| *d = r.random_range(-b..b));
        let a = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let off = r.random_range(-0.3..0.3);
        for i in 0..g.num_vertices() {
            g.sdf[i] = a.dot(g.position(i)) + off;
        }
        let m = marching_tets(&g);
        vertices += m.vertices.len();
        for v in &m.vertices {
            worst = worst.max((a.dot(*v) + off).abs() / a.norm());
        }
    }
    Outcome::new(
        worst <= 1e-10 && vertices > 0,
        format!("{seeds} planes, {vertices} vertices, max distance {worst:.1e} (tol 1e-10)"),
    )
}

/// Renderer that passes its parameters straight through as the image.
pub struct IdentityTape(pub usize, pub usize);

impl Tape for IdentityTape {
    type Grad = Image;
    fn backward(&self, grad_color: &Image, _: Option<&[f64]>) -> Result<Image> {
        Ok(grad_color.clone())
    }
}

pub fn identity_render(theta: &Image) -> RenderOutput<IdentityTape> {
    RenderOutput {
        color: theta.clone(),
        alpha: vec![1.0; theta.width * theta.height],
        hit_coords: vec![None; theta.width * theta.height],
        tape: Some(IdentityTape(theta.width, theta.height)),
    }
}

fn splat(value: u64, shape: &Image) -> Image {
    let mut img = shape.clone();
    for (k, v) in img.data.iter_mut().enumerate() {
        let u = ((value.wrapping_mul(0x9E37_79B9) ^ k as u64) % 1000) as f64 / 1000.0;
        *v = u;
    }
    img
}

/// Gaussian oracle whose mean depends on the full condition set, so text,
/// joint and null predictions all differ.
pub struct TokenPrior {
    pub shape: Image,
    pub std: f64,
}

impl GuidanceModel for TokenPrior {
    fn denoise(&self, x_t: &Image, cond: &ConditionSet, t: f64) -> Result<Image> {
        let prior = GaussianOraclePrior::new(splat(cond.wire_id(), &self.shape), self.std);
        Ok(oracle_denoise(&prior, x_t, t))
    }

    fn native_resolution(&self) -> (usize, usize) {
        (self.shape.width, self.shape.height)
    }
}

/// Output-identical wrapper with its own internal path.
pub struct Shim<'a>(pub &'a dyn GuidanceModel);

impl GuidanceModel for Shim<'_> {
    fn denoise(&self, x_t: &Image, cond: &ConditionSet, t: f64) -> Result<Image> {
        let copy = Image {
            data: x_t.data.iter().copied().collect(),
            ..x_t.clone()
        };
        let out = self.0.denoise(&copy, &cond.clone(), t)?;
        Ok(Image {
            data: out.data.into_iter().collect(),
            ..out
        })
    }

    fn native_resolution(&self) -> (usize, usize) {
        self.0.native_resolution()
    }

    fn is_latent(&self) -> bool {
        self.0.is_latent()
    }
}

fn random_image(r: &mut impl Rng, w: usize, h: usize) -> Image {
    let mut img = Image::zeros(w, h, 3);
    img.data.iter_mut().for_each(|v| *v = r.random_range(0.0..1.0));
    img
}

/// Latent score distillation under the identity encoder against the pixel
/// form, sharing one random stream.
pub fn latent_matches_pixel(trials: u64) -> Outcome {
    let mut equal = true;
    for s in 0..trials {
        let mut r = rng(400 + s);
        let theta = random_image(&mut r, 6, 5);
        let model = TokenPrior {
            shape: random_image(&mut r, 6, 5),
            std: r.random_range(0.0..0.5),
        };
        let cond = ConditionSet::text(3);
        let cfg = if s % 2 == 0 { SdsConfig::coarse() } else { SdsConfig::fine() }
            .with_guidance(sdsynth::guidance::Guidance::Standard { weight: r.random_range(1.0..100.0) });
        let render = identity_render(&theta);
        let (g1, s1) = sds_gradient(&render, &model, &cond, &cfg, &mut rng(500 + s)).unwrap();
        let (g2, s2) = sds_gradient_latent(&render, &IdentityEncoder, &model, &cond, &cfg, &mut rng(500 + s)).unwrap();
        equal &= g1 == g2 && s1 == s2;
    }
    Outcome::new(equal, format!("{trials} draws, bit-identical: {equal}"))
}

/// Extended guidance with a zero joint weight against standard guidance on
/// the text condition, and the single-weight special case.
pub fn extended_reduces_to_standard(trials: u64) -> Outcome {
    let mut zero_joint = true;
    let mut zero_text = true;
    for s in 0..trials {
        let mut r = rng(600 + s);
        let shape = random_image(&mut r, 4, 4);
        let model = TokenPrior {
            std: r.random_range(0.0..0.5),
            shape,
        };
        let x = random_image(&mut r, 4, 4);
        let t = r.random_range(0.0..1.0);
        let w = r.random_range(0.0..100.0);
        let cond = ConditionSet::text(5).with_image(9);
        let a = cfg_combine_extended(&model, &x, &cond, t, w, 0.0, 0.5).unwrap();
        let b = cfg_combine(&model, &x, &cond.text_only(), t, w).unwrap();
        zero_joint &= a == b;
        let a = cfg_combine_extended(&model, &x, &cond, t, 0.0, w, 1.0).unwrap();
        let b = cfg_combine(&model, &x, &cond, t, w).unwrap();
        zero_text &= a == b;
    }
    Outcome::new(
        zero_joint && zero_text,
        format!("{trials} draws, joint weight 0 bit-exact: {zero_joint}, text weight 0 bit-exact: {zero_text}"),
    )
}

/// Posterior mean of `x ~ N(m, s^2)` given `x_t = sqrt(a) x + sigma eps`,
/// by composite Simpson quadrature of the unnormalized posterior.
pub fn quadrature_posterior_mean(m: f64, s: f64, x_t: f64, a: f64, sigma: f64) -> f64 {
    let sa = a.sqrt();
    let like_c = x_t / sa;
    let like_w = sigma / sa;
    let lo = (m - 14.0 * s).min(like_c - 14.0 * like_w);
    let hi = (m + 14.0 * s).max(like_c + 14.0 * like_w);
    let log_w = |x: f64| -0.5 * ((x - m) / s).powi(2) - 0.5 * ((x_t - sa * x) / sigma).powi(2);
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let peak = (0..=n).map(|k| log_w(lo + k as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=n {
        let x = lo + k as f64 * h;
        let c = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let w = c * (log_w(x) - peak).exp();
        num += w * x;
        den += w;
    }
    num / den
}

/// Closed-form Gaussian oracle against quadrature.
pub fn oracle_vs_quadrature(trials: u64) -> Outcome {
    let sch = DiffusionSchedule;
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let mut r = rng(700 + k);
        let m = r.random_range(-1.0..1.0);
        let s = r.random_range(0.05..2.0);
        let t = r.random_range(0.05..0.95);
        let (a, sigma) = (sch.alpha_bar(t), sch.sigma(t));
        let x_t = a.sqrt() * (m + s * r.sample::<f64, _>(StandardNormal)) + sigma * r.sample::<f64, _>(StandardNormal);
        let post = quadrature_posterior_mean(m, s, x_t, a, sigma);
        let expected = (x_t - a.sqrt() * post) / sigma;
        let mean = Image::filled(1, 1, Vec3::splat(m));
        let got = oracle_denoise(&GaussianOraclePrior::new(mean, s), &Image::filled(1, 1, Vec3::splat(x_t)), t).data[0];
        worst = worst.max((got - expected).abs() / expected.abs().max(1e-12));
    }
    Outcome::new(worst <= 1e-6, format!("{trials} cases, max rel err {worst:.2e} (tol 1e-6)"))
}

/// Monte-Carlo mean of the descent step `-w (eps_hat - eps)` for a 1-D
/// scene `x = theta` under the zero-variance oracle, against
/// `sqrt(abar) w / sigma (x* - theta)`, at fixed `t`.
pub fn sds_direction(weighting: Weighting, ts: &[f64], draws: usize) -> Outcome {
    let mut worst_z: f64 = 0.0;
    let mut ok = true;
    let (theta, target) = (0.2, 0.7);
    let theta_img = Image {
        data: vec![theta],
        ..Image::zeros(1, 1, 1)
    };
    let mean = Image {
        data: vec![target],
        ..Image::zeros(1, 1, 1)
    };
    let prior = GaussianOraclePrior::new(mean, 0.0);
    let render = identity_render(&theta_img);
    let cond = ConditionSet::text(1);
    let sch = DiffusionSchedule;
    for (k, &t) in ts.iter().enumerate() {
        let cfg = SdsConfig {
            t_min: t,
            t_max: t + 1e-9,
            weighting,
            guidance: sdsynth::guidance::Guidance::Standard { weight: 1.0 },
        };
        let mut r = rng(800 + k as u64);
        let (mut sum, mut sq, mut expect) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            let (g, step) = sds_gradient(&render, &prior, &cond, &cfg, &mut r).unwrap();
            let d = -g.data[0];
            sum += d;
            sq += d * d;
            expect += sch.alpha_bar(step.t).sqrt() * cfg.weight(step.t) / sch.sigma(step.t) * (target - theta);
        }
        let n = draws as f64;
        let mean = sum / n;
        let expect = expect / n;
        let se = ((sq / n - mean * mean).max(0.0) / (n - 1.0)).sqrt();
        // the residual is deterministic given t, so the spread is rounding
        let allowed = 3.0 * se + 1e-12 * expect.abs();
        let z = (mean - expect).abs() / allowed.max(f64::MIN_POSITIVE);
        ok &= (mean - expect).abs() <= allowed && mean * (target - theta) > 0.0;
        worst_z = worst_z.max(z);
    }
    Outcome::new(
        ok,
        format!("{:?}: {} timesteps x {draws} draws, worst |mean - expected| = {worst_z:.2} x allowance", weighting, ts.len()),
    )
}

/// Guidance-algebra criteria together.
pub fn guidance_algebra() -> Outcome {
    Outcome::all([
        ("latent=pixel", latent_matches_pixel(50)),
        ("extended", extended_reduces_to_standard(100)),
        ("quadrature", oracle_vs_quadrature(50)),
    ])
}

/// The two stage configurations at ten timesteps each.
pub fn sds_directions(draws: usize) -> Outcome {
    let coarse: Vec<f64> = (0..10).map(|k| 0.05 + 0.09 * k as f64).collect();
    let fine: Vec<f64> = (0..10).map(|k| 0.02 + 0.048 * k as f64 + 0.01).collect();
    Outcome::all([
        ("w=1", sds_direction(Weighting::Unit, &coarse, draws)),
        ("w=sigma^2", sds_direction(Weighting::NoiseVariance, &fine, draws)),
    ])
}

/// Bit-identical checkpoints from repeated runs, and a split run resumed
/// through serialized bytes matching the uninterrupted one, for the
/// neural-field and mesh stages.
pub fn determinism_and_resume(config: &RunConfig, model: &dyn GuidanceModel, fine_model: &dyn GuidanceModel) -> Outcome {
    let cond = ConditionSet::text(1);
    let coarse = |until: usize| {
        let mut s = CoarseSession::new(config.clone()).unwrap();
        s.run_until(until, model, &cond, |_| {}).unwrap();
        s
    };
    let full = coarse(config.coarse.iterations).checkpoint().to_bytes().unwrap();
    let again = coarse(config.coarse.iterations).checkpoint().to_bytes().unwrap();
    let half = config.coarse.iterations / 2 + 1;
    let split = coarse(half).checkpoint().to_bytes().unwrap();
    let restored = sdsynth::pipeline::Checkpoint::from_bytes(&split).unwrap();
    let mut resumed = CoarseSession::from_checkpoint(&restored).unwrap();
    resumed.run(model, &cond, |_| {}).unwrap();
    let resumed = resumed.checkpoint().to_bytes().unwrap();
    let coarse_repeat = full == again;
    let coarse_resume = full == resumed;

    let ck = sdsynth::pipeline::Checkpoint::from_bytes(&full).unwrap();
    let fine = |until: usize| {
        let mut s = FineSession::from_coarse(&ck).unwrap();
        s.run_until(until, fine_model, &cond, |_| {}).unwrap();
        s
    };
    let n = config.fine.iterations;
    let f_full = fine(n).checkpoint().to_bytes().unwrap();
    let f_again = fine(n).checkpoint().to_bytes().unwrap();
    let f_split = fine(n / 2).checkpoint().to_bytes().unwrap();
    let mut f_resumed = FineSession::from_checkpoint(&sdsynth::pipeline::Checkpoint::from_bytes(&f_split).unwrap()).unwrap();
    f_resumed.run(fine_model, &cond, |_| {}).unwrap();
    let f_resumed = f_resumed.checkpoint().to_bytes().unwrap();
    let fine_repeat = f_full == f_again;
    let fine_resume = f_full == f_resumed;
    Outcome::new(
        coarse_repeat && coarse_resume && fine_repeat && fine_resume,
        format!(
            "coarse repeat {coarse_repeat}, coarse resume at {half} {coarse_resume}, fine repeat {fine_repeat}, fine resume at {} {fine_resume} ({} + {} bytes)",
            n / 2,
            full.len(),
            f_full.len()
        ),
    )
}
