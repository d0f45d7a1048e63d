//! Acceptance report: one line per criterion, then a single verdict.
//! Criteria 7 to 9 share one coarse run on the synthetic scene.

mod common;

use std::time::Instant;

use common::{grad, oracles, Outcome};
use sdsynth::frame::Image;
use sdsynth::geometry::SurfaceMesh;
use sdsynth::guidance::ConditionSet;
use sdsynth::pipeline::*;
use sdsynth::render_mesh::render_mesh;
use sdsynth::render_vol::{render_volume, ShadingSample, Stage};
use sdsynth::Vec3;

/// Coarse runtime budget on an eight-core machine.
const COARSE_BUDGET_S: f64 = 15.0 * 60.0;
const GRADIENT_BUDGET_S: f64 = 5.0 * 60.0;

fn psnr_over(views: &[Image], targets: &[Image]) -> f64 {
    let mse = views.iter().zip(targets).map(|(v, t)| v.mse(t)).sum::<f64>() / views.len() as f64;
    -10.0 * mse.log10()
}

fn volume_views(ck: &Checkpoint, ring: &OrbitRing, stage: Stage, res: usize) -> Vec<Image> {
    let m = CoarseModel::restore(ck).unwrap();
    (0..ring.views)
        .map(|k| {
            let cam = ring_camera(ring, k, stage, res);
            let out = render_volume(&m.field, &m.env, &m.octree, &cam, &ShadingSample::albedo_only(), &ck.config.coarse.render);
            out.unwrap().color
        })
        .collect()
}

fn mesh_views(scene: &TetScene, config: &RunConfig, ring: &OrbitRing, res: usize) -> Vec<Image> {
    let mesh = scene.extract();
    (0..ring.views)
        .map(|k| {
            let cam = ring_camera(ring, k, Stage::Fine, res);
            let out = render_mesh(&mesh, &scene.texture, &scene.env, &cam, &ShadingSample::albedo_only(), &config.fine.render);
            out.unwrap().color
        })
        .collect()
}

/// Mean distance from each vertex of `b` to the nearest vertex of `a`,
/// using a uniform bucket grid over `a`.
fn mean_nearest_distance(a: &SurfaceMesh, b: &SurfaceMesh, cell: f64) -> f64 {
    use std::collections::HashMap;
    let key = |p: Vec3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64, i64), Vec<Vec3>> = HashMap::new();
    for &p in &a.vertices {
        buckets.entry(key(p)).or_default().push(p);
    }
    let mut total = 0.0;
    for &q in &b.vertices {
        let (x, y, z) = key(q);
        let mut best = f64::INFINITY;
        let mut ring = 1;
        while best.is_infinite() || best > (ring - 1) as f64 * cell {
            best = f64::INFINITY;
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        for p in buckets.get(&(x + dx, y + dy, z + dz)).into_iter().flatten() {
                            best = best.min((*p - q).norm());
                        }
                    }
                }
            }
            ring += 1;
        }
        total += best;
    }
    total / b.vertices.len() as f64
}

struct Synthesis {
    coarse: Outcome,
    fine: Outcome,
    edit: Outcome,
}

fn synthesis() -> Synthesis {
    let config = RunConfig::oracle();
    let CameraMode::Orbit(ring) = config.camera.clone() else {
        unreachable!("the oracle preset uses the orbit ring")
    };
    let scene = SyntheticScene::default();
    let cond = ConditionSet::text(1);

    let start = Instant::now();
    let prior = coarse_oracle(&scene, &config).unwrap();
    let ck = run_coarse(&config, &prior, &cond).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let res = config.coarse.resolution;
    let targets = ring_targets(&scene, &ring, Stage::Coarse, res, TARGET_SUPERSAMPLE);
    let psnr = psnr_over(&volume_views(&ck, &ring, Stage::Coarse, res), &targets);
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8);
    let budget = COARSE_BUDGET_S * 8.0 / cores as f64;
    let coarse = Outcome::new(
        psnr >= 28.0 && elapsed <= budget,
        format!(
            "{} iterations at {res}x{res}, PSNR {psnr:.2} dB over {} views (min 28), {elapsed:.0} s on {cores} core(s) (budget {budget:.0} s)",
            config.coarse.iterations, ring.views
        ),
    );

    let fres = config.fine.resolution;
    let fine_targets = ring_targets(&scene, &ring, Stage::Fine, fres, TARGET_SUPERSAMPLE);
    let before = psnr_over(&volume_views(&ck, &ring, Stage::Fine, fres), &fine_targets);
    let start = Instant::now();
    let fine_prior = fine_oracle(&scene, &config).unwrap();
    let mut session = FineSession::from_coarse(&ck).unwrap();
    let init = psnr_over(&mesh_views(&session.scene, &config, &ring, fres), &fine_targets);
    session.run(&fine_prior, &cond, |_| {}).unwrap();
    let fine_s = start.elapsed().as_secs_f64();
    let after = psnr_over(&mesh_views(&session.scene, &config, &ring, fres), &fine_targets);
    let mesh = session.scene.extract();
    let dir = tempfile::tempdir().unwrap();
    let opts = ExportOptions {
        turntable_frames: 4,
        turntable_resolution: 64,
        ..Default::default()
    };
    let files = export_mesh(&mesh, &session.scene.texture, &session.scene.env, dir.path(), "fine", &opts).unwrap();
    let obj = read_obj(&files.obj).unwrap();
    let lossless = obj.vertices == mesh.vertices && obj.faces == mesh.faces && obj.normals == mesh.normals;
    let fine = Outcome::new(
        after - before >= 2.0 && lossless,
        format!(
            "{} iterations at {fres}x{fres}: coarse render {before:.2} dB, initial mesh {init:.2} dB, refined mesh {after:.2} dB, gain {:+.2} dB (min +2), {fine_s:.0} s; OBJ with {} vertices / {} faces reimports losslessly: {lossless}",
            config.fine.iterations,
            after - before,
            mesh.vertices.len(),
            mesh.faces.len()
        ),
    );

    let swapped = SyntheticScene::default().with_palette(Palette::Swapped);
    let new_targets = ring_targets(&swapped, &ring, Stage::Fine, fres, TARGET_SUPERSAMPLE);
    let edit_before = psnr_over(&mesh_views(&session.scene, &config, &ring, fres), &new_targets);
    let start = Instant::now();
    let edit_prior = fine_oracle(&swapped, &config).unwrap();
    let result = edit_from_coarse_with(&ck, &edit_prior, &cond, |_| {}).unwrap();
    let edit_s = start.elapsed().as_secs_f64();
    let edited = FineSession::from_checkpoint(&result.mesh).unwrap();
    let edit_after = psnr_over(&mesh_views(&edited.scene, &config, &ring, fres), &new_targets);
    let radius = mesh.bounding_radius();
    let moved = mean_nearest_distance(&mesh, &edited.scene.extract(), session.scene.grid.edge_length());
    let edit = Outcome::new(
        edit_after - edit_before >= 5.0 && moved <= 0.1 * radius,
        format!(
            "against swapped-texture targets {edit_before:.2} dB -> {edit_after:.2} dB, gain {:+.2} dB (min +5); mean vertex displacement {moved:.4} = {:.1}% of bounding radius {radius:.3} (max 10%); {edit_s:.0} s",
            edit_after - edit_before,
            100.0 * moved / radius
        ),
    );
    Synthesis { coarse, fine, edit }
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("[{}] {n:>2} {name}: {o}", if o.pass { "PASS" } else { "FAIL" });
        results.push((n, name, o));
    };

    let start = Instant::now();
    let parts = grad::suite(100);
    let secs = start.elapsed().as_secs_f64();
    let mut o = Outcome::all(parts);
    o.pass &= secs <= GRADIENT_BUDGET_S;
    o.detail = format!("100 seeds per module in {secs:.1} s (max {GRADIENT_BUDGET_S:.0}); {}", o.detail);
    report(1, "gradient suite", o);

    report(2, "homogeneous sphere transmittance", oracles::analytic_transmittance(1.0, 0.5, 1024, 32));
    report(
        3,
        "empty-space pruning",
        Outcome::all([("equivalence", oracles::pruning_equivalence(8)), ("decay", oracles::decay_law(20))]),
    );
    report(
        4,
        "marching tetrahedra",
        Outcome::all([("sphere", oracles::marching_sphere(0.6)), ("plane", oracles::marching_plane(10))]),
    );
    report(5, "guidance algebra", oracles::guidance_algebra());
    report(6, "score distillation direction", oracles::sds_directions(100_000));

    let s = synthesis();
    report(7, "coarse reconstruction", s.coarse);
    report(8, "mesh refinement", s.fine);
    report(9, "texture edit", s.edit);

    let config = common::tiny_oracle_config(21);
    let scene = SyntheticScene::default();
    let coarse = coarse_oracle(&scene, &config).unwrap();
    let fine = fine_oracle(&scene, &config).unwrap();
    report(10, "determinism and resume", oracles::determinism_and_resume(&config, &coarse, &fine));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
