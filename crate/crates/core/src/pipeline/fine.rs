use std::path::PathBuf;

use super::adam::Adam;
use super::checkpoint::{Checkpoint, StageTag, TetState};
use super::coarse::CoarseModel;
use super::config::RunConfig;
use super::stage::{draw_view, non_finite, sds_pixel_grad, IterRecord, LossTerms, ViewDiagnostic};
use crate::error::{Error, Result};
use crate::field::{EnvironmentMap, NeuralField};
use crate::geometry::{density_to_sdf, face_smoothness, marching_tets, marching_tets_backward, SurfaceMesh, TetGrid, TetGridConfig};
use crate::guidance::{AvgPoolEncoder, ConditionSet, GuidanceModel};
use crate::math::Vec3;
use crate::params::ParamSet;
use crate::render_mesh::render_mesh;
use crate::render_vol::{render_volume, Stage};
use crate::rng::{stream, Purpose};

/// Mesh-stage scene: deformable tet grid, texture field and the background
/// carried over from the coarse stage.
#[derive(Clone, Debug)]
pub struct TetScene {
    pub grid: TetGrid,
    pub texture: NeuralField,
    pub env: EnvironmentMap,
}

impl TetScene {
    pub fn extract(&self) -> SurfaceMesh {
        marching_tets(&self.grid)
    }
}

/// Convert a coarse checkpoint into a mesh scene: signed values from the
/// density field, zero deformation, texture field copied from the coarse
/// field.
pub fn init_fine_from_coarse(ckpt: &Checkpoint, kappa: f64) -> Result<TetScene> {
    if ckpt.stage == StageTag::Fine {
        return Err(Error::config("mesh initialization needs a neural-field checkpoint"));
    }
    let model = CoarseModel::restore(ckpt)?;
    let mut grid = TetGrid::new(&ckpt.config.fine.tet)?;
    density_to_sdf(&model.field, &mut grid, kappa)?;
    if marching_tets(&grid).is_empty() {
        return Err(Error::EmptyMesh(format!(
            "no surface at density {kappa}; lower kappa below the field's peak density"
        )));
    }
    Ok(TetScene {
        grid,
        texture: model.field,
        env: model.env,
    })
}

/// A running mesh-stage optimization.
#[derive(Clone, Debug)]
pub struct FineSession {
    pub config: RunConfig,
    pub scene: TetScene,
    pub adam: Adam,
    pub iteration: usize,
    pub skipped_steps: usize,
    /// Frozen coarse model, rendered as the low-resolution condition for
    /// priors that ask for one.
    pub coarse: Option<CoarseModel>,
    occupancy: Vec<f64>,
    occupancy_updates: usize,
    pub dump_dir: Option<PathBuf>,
}

impl FineSession {
    pub fn new(config: RunConfig, scene: TetScene) -> Result<Self> {
        config.validate()?;
        let mut adam = Adam::new(&config.optimizer);
        adam.add_group("sdf", config.optimizer.sdf_lr_scale, scene.grid.sdf.len());
        adam.add_group("deform", config.optimizer.deform_lr_scale, scene.grid.deform.len());
        adam.add_group("texture", config.optimizer.texture_lr_scale, scene.texture.num_params());
        Ok(Self {
            config,
            scene,
            adam,
            iteration: 0,
            skipped_steps: 0,
            coarse: None,
            occupancy: Vec::new(),
            occupancy_updates: 0,
            dump_dir: None,
        })
    }

    /// Initialize from a coarse checkpoint, keeping the frozen coarse model
    /// around for low-resolution conditioning.
    pub fn from_coarse(ckpt: &Checkpoint) -> Result<Self> {
        let scene = init_fine_from_coarse(ckpt, ckpt.config.fine.kappa)?;
        let mut s = Self::new(ckpt.config.clone(), scene)?;
        s.coarse = Some(CoarseModel::restore(ckpt)?);
        s.occupancy = ckpt.occupancy.clone();
        s.occupancy_updates = ckpt.occupancy_updates;
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let g = &self.scene.grid;
        Checkpoint {
            stage: StageTag::Fine,
            iteration: self.iteration,
            config: self.config.clone(),
            field: self.coarse.as_ref().map(|c| c.field.to_flat()).unwrap_or_default(),
            env: self.scene.env.to_flat(),
            occupancy: self.occupancy.clone(),
            occupancy_updates: self.occupancy_updates,
            tet: Some(TetState {
                resolution: g.resolution,
                extent: g.extent,
                max_deform_fraction: g.max_deform_fraction,
                sdf: g.sdf.clone(),
                deform: g.deform.clone(),
            }),
            texture: Some(self.scene.texture.to_flat()),
            optimizer: Some(self.adam.clone()),
            skipped_steps: self.skipped_steps,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (Some(tet), Some(texture)) = (&ckpt.tet, &ckpt.texture) else {
            return Err(Error::config("not a mesh-stage checkpoint"));
        };
        let config = &ckpt.config;
        let mut grid = TetGrid::new(&TetGridConfig {
            resolution: tet.resolution,
            extent: tet.extent,
            max_deform_fraction: tet.max_deform_fraction,
        })?;
        grid.sdf.clone_from(&tet.sdf);
        grid.deform.clone_from(&tet.deform);
        let base = CoarseModel::init(config)?;
        let mut tex = base.field.clone();
        let mut env = base.env.clone();
        if texture.len() != tex.num_params() || ckpt.env.len() != env.num_params() || grid.sdf.len() != tet.sdf.len() {
            return Err(Error::Format("checkpoint sizes do not match its config".into()));
        }
        tex.set_from_flat(texture);
        env.set_from_flat(&ckpt.env);
        let mut s = Self::new(
            config.clone(),
            TetScene {
                grid,
                texture: tex,
                env,
            },
        )?;
        if !ckpt.field.is_empty() && ckpt.occupancy.len() == base.occupancy.values.len() {
            let mut coarse = base;
            if ckpt.field.len() != coarse.field.num_params() {
                return Err(Error::Format("coarse field size does not match its config".into()));
            }
            coarse.field.set_from_flat(&ckpt.field);
            coarse.env.set_from_flat(&ckpt.env);
            coarse.occupancy.values.copy_from_slice(&ckpt.occupancy);
            coarse.octree = crate::accel::Octree::build(&coarse.occupancy);
            s.coarse = Some(coarse);
        }
        s.occupancy = ckpt.occupancy.clone();
        s.occupancy_updates = ckpt.occupancy_updates;
        if let Some(a) = &ckpt.optimizer {
            s.adam = a.clone();
        }
        s.iteration = ckpt.iteration;
        s.skipped_steps = ckpt.skipped_steps;
        Ok(s)
    }

    pub fn step(&mut self, guidance: &dyn GuidanceModel, cond: &ConditionSet) -> Result<IterRecord> {
        let it = self.iteration;
        let seed = self.config.seed;
        let fc = self.config.fine.clone();
        let mesh = marching_tets(&self.scene.grid);
        if mesh.is_empty() {
            self.skipped_steps += 1;
            log::warn!("iteration {it}: empty mesh, step skipped ({} so far)", self.skipped_steps);
            self.iteration += 1;
            return Ok(IterRecord {
                stage: StageTag::Fine,
                iter: it,
                loss: LossTerms::default(),
                t: Vec::new(),
                grad_norm: 0.0,
                skipped: true,
            });
        }
        let res = fc.resolution;
        let encoder = AvgPoolEncoder::new(fc.latent_factor, (res, res))?;
        let b = fc.batch_size;
        let inv_b = 1.0 / b as f64;
        let w_smooth = self.config.loss.smoothness;
        let scene = &self.scene;
        let mut g_tex = scene.texture.zeros_like();
        let mut g_vert = vec![Vec3::ZERO; mesh.vertices.len()];
        let mut loss = LossTerms::default();
        let mut ts = Vec::with_capacity(b);
        let mut diag = Vec::with_capacity(b);
        for v in 0..b {
            let draw = draw_view(&self.config, Stage::Fine, res, it as u64, v as u64);
            let mut view_cond = cond.clone().with_view(draw.hint());
            if guidance.wants_low_res() {
                let coarse = self
                    .coarse
                    .as_ref()
                    .ok_or_else(|| Error::config("the prior wants a low-resolution render but no coarse model is attached"))?;
                let cam = draw.camera.with_resolution(fc.low_res, fc.low_res);
                let low = render_volume(&coarse.field, &coarse.env, &coarse.octree, &cam, &draw.shading, &self.config.coarse.render)?;
                view_cond.low_res = Some(low.color);
            }
            let out = render_mesh(&mesh, &scene.texture, &scene.env, &draw.camera, &draw.shading, &fc.render)?;
            let mut rng = stream(seed, it as u64, v as u64, Purpose::Timestep);
            let (g_color, step) = sds_pixel_grad(&out.color, Some(&encoder), guidance, &view_cond, &fc.sds, inv_b, &mut rng)?;
            let g = out.backward(&g_color, None)?;
            g_tex.add_from(&g.texture);
            for (a, d) in g_vert.iter_mut().zip(&g.vertices) {
                *a += *d;
            }
            loss.sds += step.x0_error * inv_b;
            ts.push(step.t);
            diag.push(ViewDiagnostic {
                draw,
                t: step.t,
                residual_rms: step.residual_rms,
                x0_error: step.x0_error,
            });
        }
        let (smooth, g_smooth) = face_smoothness(&mesh);
        for (a, d) in g_vert.iter_mut().zip(&g_smooth) {
            *a += *d * w_smooth;
        }
        loss.smoothness = smooth;
        loss.total = loss.sds + w_smooth * smooth;
        let g_tet = marching_tets_backward(&scene.grid, &mesh, &g_vert);
        let grad_norm = (g_tet.squared_norm() + g_tex.squared_norm()).sqrt();
        let dump = self.dump_dir.as_deref();
        if !grad_norm.is_finite() {
            return Err(non_finite(dump, StageTag::Fine, it, "gradient", &diag));
        }
        self.adam.begin_step();
        let grid = &mut self.scene.grid;
        self.adam.update_slices(0, vec![&mut grid.sdf], vec![&g_tet.sdf])?;
        self.adam.update_slices(1, vec![&mut grid.deform], vec![&g_tet.deform])?;
        self.adam.update(2, &mut self.scene.texture, &g_tex)?;
        grid.clamp_deformation();
        if !grid.sdf.iter().chain(&grid.deform).all(|v| v.is_finite()) || !self.scene.texture.all_finite() {
            return Err(non_finite(dump, StageTag::Fine, it, "parameters", &diag));
        }
        self.iteration += 1;
        Ok(IterRecord {
            stage: StageTag::Fine,
            iter: it,
            loss,
            t: ts,
            grad_norm,
            skipped: false,
        })
    }

    pub fn run_until(
        &mut self,
        until: usize,
        guidance: &dyn GuidanceModel,
        cond: &ConditionSet,
        mut observer: impl FnMut(&IterRecord),
    ) -> Result<()> {
        let end = until.min(self.config.fine.iterations);
        while self.iteration < end {
            let rec = self.step(guidance, cond)?;
            observer(&rec);
        }
        Ok(())
    }

    pub fn run(&mut self, guidance: &dyn GuidanceModel, cond: &ConditionSet, observer: impl FnMut(&IterRecord)) -> Result<()> {
        self.run_until(usize::MAX, guidance, cond, observer)
    }
}

/// Mesh stage from a coarse checkpoint.
pub fn run_fine(ckpt: &Checkpoint, guidance: &dyn GuidanceModel, cond: &ConditionSet) -> Result<Checkpoint> {
    let mut s = FineSession::from_coarse(ckpt)?;
    s.run(guidance, cond, |r| log::debug!("{}", r.to_json_line()))?;
    Ok(s.checkpoint())
}
