//! End-to-end stages on small configurations: determinism, stage
//! isolation, initialization, conditioning hooks and export.

mod common;

use std::sync::Mutex;

use common::{tiny_config, tiny_oracle_config};
use sdsynth::frame::Image;
use sdsynth::guidance::{ConditionSet, GuidanceModel};
use sdsynth::params::ParamSet;
use sdsynth::pipeline::*;
use sdsynth::render_vol::{render_volume, Stage, FINE_FOCAL_RANGE};

fn coarse_checkpoint(config: &RunConfig) -> Checkpoint {
    let prior = coarse_oracle(&SyntheticScene::default(), config).unwrap();
    run_coarse(config, &prior, &ConditionSet::text(1)).unwrap()
}

#[test]
fn seeded_runs_repeat_and_resume_exactly() {
    let config = tiny_oracle_config(3);
    let scene = SyntheticScene::default();
    let coarse = coarse_oracle(&scene, &config).unwrap();
    let fine = fine_oracle(&scene, &config).unwrap();
    common::oracles::determinism_and_resume(&config, &coarse, &fine).assert();
}

#[test]
fn mesh_initialization_copies_the_field() {
    let config = tiny_oracle_config(4);
    let ck = coarse_checkpoint(&config);
    let scene = init_fine_from_coarse(&ck, config.fine.kappa).unwrap();
    assert!(scene.grid.deform.iter().all(|d| *d == 0.0));
    assert_eq!(scene.texture.to_flat(), ck.field);
    assert_eq!(scene.env.to_flat(), ck.env);
    assert!(!scene.extract().is_empty());
}

#[test]
fn mesh_stage_leaves_background_and_occupancy_alone() {
    let config = tiny_oracle_config(5);
    let ck = coarse_checkpoint(&config);
    let prior = fine_oracle(&SyntheticScene::default(), &config).unwrap();
    let mut s = FineSession::from_coarse(&ck).unwrap();
    let tex_before = s.scene.texture.to_flat();
    let sdf_before = s.scene.grid.sdf.clone();
    s.run(&prior, &ConditionSet::text(1), |_| {}).unwrap();
    let out = s.checkpoint();
    assert_eq!(out.env, ck.env);
    assert_eq!(out.occupancy, ck.occupancy);
    assert_eq!(out.occupancy_updates, ck.occupancy_updates);
    assert_eq!(out.field, ck.field);
    assert_ne!(s.scene.texture.to_flat(), tex_before);
    assert_ne!(s.scene.grid.sdf, sdf_before);
}

#[test]
fn mesh_views_use_the_narrow_focal_range() {
    let config = tiny_config(6);
    for it in 0..2000 {
        let d = draw_view(&config, Stage::Fine, 64, it, it % 3);
        assert!((FINE_FOCAL_RANGE.0..=FINE_FOCAL_RANGE.1).contains(&d.camera.focal));
    }
}

/// Super-resolution style prior that records the low-resolution input.
struct Recorder {
    resolution: (usize, usize),
    seen: Mutex<Vec<Option<Image>>>,
}

impl GuidanceModel for Recorder {
    fn denoise(&self, x_t: &Image, cond: &ConditionSet, _t: f64) -> sdsynth::Result<Image> {
        self.seen.lock().unwrap().push(cond.low_res.clone());
        Ok(Image::zeros(x_t.width, x_t.height, x_t.channels))
    }

    fn native_resolution(&self) -> (usize, usize) {
        self.resolution
    }

    fn wants_low_res(&self) -> bool {
        true
    }
}

#[test]
fn super_resolution_prior_sees_the_frozen_coarse_render() {
    let config = tiny_config(7);
    let ck = coarse_checkpoint(&tiny_oracle_config(7));
    let mut ck = ck;
    ck.config = config.clone();
    let f = config.fine.resolution / config.fine.latent_factor;
    let rec = Recorder {
        resolution: (f, f),
        seen: Mutex::new(Vec::new()),
    };
    let mut s = FineSession::from_coarse(&ck).unwrap();
    s.run_until(2, &rec, &ConditionSet::text(1), |_| {}).unwrap();
    let coarse = CoarseModel::restore(&ck).unwrap();
    let seen = std::mem::take(&mut *rec.seen.lock().unwrap());
    // two guidance passes (conditional and null) per view
    assert_eq!(seen.len(), 2 * 2 * config.fine.batch_size);
    let mut k = 0;
    for it in 0..2u64 {
        for v in 0..config.fine.batch_size as u64 {
            let d = draw_view(&config, Stage::Fine, config.fine.resolution, it, v);
            let cam = d.camera.with_resolution(config.fine.low_res, config.fine.low_res);
            let expected = render_volume(&coarse.field, &coarse.env, &coarse.octree, &cam, &d.shading, &config.coarse.render)
                .unwrap()
                .color;
            for _ in 0..2 {
                assert_eq!(seen[k].as_ref(), Some(&expected));
                k += 1;
            }
        }
    }

    let mut detached = FineSession::new(config.clone(), init_fine_from_coarse(&ck, config.fine.kappa).unwrap()).unwrap();
    assert!(detached.step(&rec, &ConditionSet::text(1)).is_err());
}

#[test]
fn export_round_trips_and_bakes_the_texture() {
    let config = tiny_oracle_config(8);
    let ck = coarse_checkpoint(&config);
    let scene = init_fine_from_coarse(&ck, config.fine.kappa).unwrap();
    let mesh = scene.extract();
    let dir = tempfile::tempdir().unwrap();
    let opts = ExportOptions {
        turntable_frames: 5,
        turntable_resolution: 24,
        ..Default::default()
    };
    let files = export_mesh(&mesh, &scene.texture, &scene.env, dir.path(), "asset", &opts).unwrap();
    let obj = read_obj(&files.obj).unwrap();
    assert_eq!(obj.vertices.len(), mesh.vertices.len());
    assert_eq!(obj.faces.len(), mesh.faces.len());
    assert_eq!(obj.vertices, mesh.vertices);
    assert_eq!(obj.faces, mesh.faces);
    assert_eq!(files.frames.len(), 5);
    assert!(files.frames.iter().chain([&files.mtl, &files.texture]).all(|p| p.exists()));

    let atlas = bake_texture(&mesh, &scene.texture, opts.chart_texels).unwrap();
    let disk = Image::load_png(&files.texture).unwrap();
    let mut s = sdsynth::field::RadianceField::new_scratch(&scene.texture);
    for f in (0..mesh.faces.len()).step_by(7) {
        let c = mesh.face_points(f).iter().fold(sdsynth::Vec3::ZERO, |a, p| a + *p) / 3.0;
        let q = sdsynth::field::RadianceField::query(&scene.texture, c, false, &mut s).unwrap();
        let (x, y) = atlas.texel(f, opts.chart_texels / 3, opts.chart_texels / 3);
        let baked = disk.rgb(x, y);
        assert!((baked - q.albedo).max_abs() <= 2.0 / 255.0, "face {f}");
    }
}

fn tail_mean(losses: &[f64], n: usize) -> f64 {
    let tail = &losses[losses.len() - n..];
    tail.iter().sum::<f64>() / n as f64
}

#[test]
fn editing_with_the_same_condition_does_not_regress() {
    let mut config = tiny_oracle_config(9);
    config.coarse.iterations = 40;
    config.edit.iterations = 12;
    config.edit.resolution = config.coarse.resolution;
    config.edit.latent_factor = 1;
    let prior = coarse_oracle(&SyntheticScene::default(), &config).unwrap();
    let cond = ConditionSet::text(1);
    let mut coarse = Vec::new();
    let mut s = CoarseSession::new(config.clone()).unwrap();
    s.run(&prior, &cond, |r| coarse.push(r.loss.sds)).unwrap();
    let ck = s.checkpoint();
    let mut edit = CoarseSession::edit_from(&ck).unwrap();
    let mut edited = Vec::new();
    edit.run(&prior, &cond, |r| edited.push(r.loss.sds)).unwrap();
    let (a, b) = (tail_mean(&coarse, 8), tail_mean(&edited, 8));
    let spread = coarse[coarse.len() - 8..].iter().fold(0.0f64, |m, v| m.max((v - a).abs()));
    assert!(b <= a + spread + 1e-4, "edit {b} against coarse {a} (spread {spread})");
}

#[test]
fn coarse_loss_falls_on_average() {
    let mut config = tiny_oracle_config(10);
    config.coarse.iterations = 150;
    let prior = coarse_oracle(&SyntheticScene::default(), &config).unwrap();
    let mut losses = Vec::new();
    let mut s = CoarseSession::new(config).unwrap();
    s.run(&prior, &ConditionSet::text(1), |r| losses.push(r.loss.sds)).unwrap();
    let window: Vec<f64> = losses.windows(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    let (first, mid, last) = (window[0], window[window.len() / 2], window[window.len() - 1]);
    assert!(mid < first && last < mid, "moving average {first} -> {mid} -> {last}");
}
