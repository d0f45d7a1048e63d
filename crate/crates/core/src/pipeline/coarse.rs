use std::path::PathBuf;

use super::adam::Adam;
use super::checkpoint::{Checkpoint, StageTag};
use super::config::RunConfig;
use super::stage::{draw_view, non_finite, sds_pixel_grad, IterRecord, LossTerms, ViewDiagnostic};
use crate::accel::{OccupancyGrid, Octree};
use crate::error::{Error, Result};
use crate::field::{EnvironmentMap, NeuralField};
use crate::guidance::{AvgPoolEncoder, ConditionSet, Encoder, GuidanceModel, SdsConfig};
use crate::params::ParamSet;
use crate::render_vol::{opacity_regularizer, render_volume, RenderSettings, Stage, VolumeGrad};
use crate::rng::{stream, stream_key, Purpose};

/// The coarse scene: neural field, background and the sampling cache.
#[derive(Clone, Debug)]
pub struct CoarseModel {
    pub field: NeuralField,
    pub env: EnvironmentMap,
    pub occupancy: OccupancyGrid,
    pub octree: Octree,
}

impl CoarseModel {
    pub fn init(config: &RunConfig) -> Result<Self> {
        let field = NeuralField::new(&config.field, &mut stream(config.seed, 0, 0, Purpose::Init))?;
        let env = EnvironmentMap::neutral(&mut stream(config.seed, 0, 1, Purpose::Init));
        let occupancy = OccupancyGrid::new(config.coarse.occupancy.clone(), config.field.bounding_radius)?;
        let octree = Octree::build(&occupancy);
        Ok(Self {
            field,
            env,
            occupancy,
            octree,
        })
    }

    /// Rebuild from checkpoint sections.
    pub fn restore(ckpt: &Checkpoint) -> Result<Self> {
        let mut m = Self::init(&ckpt.config)?;
        if ckpt.field.len() != m.field.num_params()
            || ckpt.env.len() != m.env.num_params()
            || ckpt.occupancy.len() != m.occupancy.values.len()
        {
            return Err(Error::Format("checkpoint sizes do not match its config".into()));
        }
        m.field.set_from_flat(&ckpt.field);
        m.env.set_from_flat(&ckpt.env);
        m.occupancy.values.copy_from_slice(&ckpt.occupancy);
        m.octree = Octree::build(&m.occupancy);
        Ok(m)
    }
}

/// Which rendering setup a neural-field step uses.
struct VolumePass<'a> {
    tag: StageTag,
    camera_stage: Stage,
    resolution: usize,
    batch_size: usize,
    render: &'a RenderSettings,
    sds: &'a SdsConfig,
    encoder: Option<&'a dyn Encoder>,
}

/// A running neural-field optimization: the coarse stage, or the
/// continuation step of the editing workflow.
#[derive(Clone, Debug)]
pub struct CoarseSession {
    pub config: RunConfig,
    pub stage: StageTag,
    pub model: CoarseModel,
    pub adam: Adam,
    pub iteration: usize,
    pub occupancy_updates: usize,
    /// Where to write the last batch when a non-finite value shows up.
    pub dump_dir: Option<PathBuf>,
}

impl CoarseSession {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = CoarseModel::init(&config)?;
        Ok(Self::with_model(config, StageTag::Coarse, model))
    }

    fn with_model(config: RunConfig, stage: StageTag, model: CoarseModel) -> Self {
        let mut adam = Adam::new(&config.optimizer);
        adam.add_group("field", 1.0, model.field.num_params());
        adam.add_group("env", config.optimizer.env_lr_scale, model.env.num_params());
        Self {
            config,
            stage,
            model,
            adam,
            iteration: 0,
            occupancy_updates: 0,
            dump_dir: None,
        }
    }

    /// Start the editing continuation from a finished coarse checkpoint,
    /// with fresh optimizer moments.
    pub fn edit_from(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.stage != StageTag::Coarse {
            return Err(Error::config("editing starts from a coarse checkpoint"));
        }
        let model = CoarseModel::restore(ckpt)?;
        Ok(Self::with_model(ckpt.config.clone(), StageTag::Edit, model))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.stage == StageTag::Fine {
            return Err(Error::config("not a neural-field checkpoint"));
        }
        let model = CoarseModel::restore(ckpt)?;
        let mut s = Self::with_model(ckpt.config.clone(), ckpt.stage, model);
        if let Some(adam) = &ckpt.optimizer {
            s.adam = adam.clone();
        }
        s.iteration = ckpt.iteration;
        s.occupancy_updates = ckpt.occupancy_updates;
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            stage: self.stage,
            iteration: self.iteration,
            config: self.config.clone(),
            field: self.model.field.to_flat(),
            env: self.model.env.to_flat(),
            occupancy: self.model.occupancy.values.clone(),
            occupancy_updates: self.occupancy_updates,
            tet: None,
            texture: None,
            optimizer: Some(self.adam.clone()),
            skipped_steps: 0,
        }
    }

    fn target_iterations(&self) -> usize {
        match self.stage {
            StageTag::Edit => self.config.edit.iterations,
            _ => self.config.coarse.iterations,
        }
    }

    /// One optimizer step.
    pub fn step(&mut self, model: &dyn GuidanceModel, cond: &ConditionSet) -> Result<IterRecord> {
        match self.stage {
            StageTag::Edit => {
                let e = self.config.edit.clone();
                let enc = AvgPoolEncoder::new(e.latent_factor, (e.resolution, e.resolution))?;
                self.volume_step(
                    &VolumePass {
                        tag: StageTag::Edit,
                        camera_stage: Stage::Fine,
                        resolution: e.resolution,
                        batch_size: e.batch_size,
                        render: &e.render,
                        sds: &e.sds,
                        encoder: Some(&enc),
                    },
                    model,
                    cond,
                )
            }
            _ => {
                let c = self.config.coarse.clone();
                self.volume_step(
                    &VolumePass {
                        tag: StageTag::Coarse,
                        camera_stage: Stage::Coarse,
                        resolution: c.resolution,
                        batch_size: c.batch_size,
                        render: &c.render,
                        sds: &c.sds,
                        encoder: None,
                    },
                    model,
                    cond,
                )
            }
        }
    }

    fn volume_step(&mut self, pass: &VolumePass, guidance: &dyn GuidanceModel, cond: &ConditionSet) -> Result<IterRecord> {
        let it = self.iteration;
        let seed = self.config.seed;
        let b = pass.batch_size;
        let inv_b = 1.0 / b as f64;
        let w_opacity = self.config.loss.opacity;
        let m = &self.model;
        let mut grads = VolumeGrad {
            field: m.field.zeros_like(),
            env: m.env.zeros_like(),
        };
        let mut loss = LossTerms::default();
        let mut ts = Vec::with_capacity(b);
        let mut diag = Vec::with_capacity(b);
        for v in 0..b {
            let draw = draw_view(&self.config, pass.camera_stage, pass.resolution, it as u64, v as u64);
            let out = render_volume(&m.field, &m.env, &m.octree, &draw.camera, &draw.shading, pass.render)?;
            let view_cond = cond.clone().with_view(draw.hint());
            let mut rng = stream(seed, it as u64, v as u64, Purpose::Timestep);
            let (g_color, step) = sds_pixel_grad(&out.color, pass.encoder, guidance, &view_cond, pass.sds, inv_b, &mut rng)?;
            let (op, mut g_alpha) = opacity_regularizer(&out.alpha);
            for g in &mut g_alpha {
                *g *= w_opacity * inv_b;
            }
            let g = out.backward(&g_color, Some(&g_alpha))?;
            grads.field.add_from(&g.field);
            grads.env.add_from(&g.env);
            loss.sds += step.x0_error * inv_b;
            loss.opacity += op * inv_b;
            ts.push(step.t);
            diag.push(ViewDiagnostic {
                draw,
                t: step.t,
                residual_rms: step.residual_rms,
                x0_error: step.x0_error,
            });
        }
        loss.total = loss.sds + w_opacity * loss.opacity;
        let grad_norm = (grads.field.squared_norm() + grads.env.squared_norm()).sqrt();
        let dump = self.dump_dir.as_deref();
        if !grad_norm.is_finite() {
            return Err(non_finite(dump, pass.tag, it, "gradient", &diag));
        }
        self.adam.begin_step();
        self.adam.update(0, &mut self.model.field, &grads.field)?;
        self.adam.update(1, &mut self.model.env, &grads.env)?;
        if !self.model.field.all_finite() || !self.model.env.all_finite() {
            return Err(non_finite(dump, pass.tag, it, "parameters", &diag));
        }
        let interval = self.model.occupancy.config.update_interval;
        if (it + 1) % interval == 0 {
            let key = stream_key(seed, it as u64, 0, Purpose::Occupancy);
            self.model.occupancy.update(&self.model.field, key);
            self.model.octree = Octree::build(&self.model.occupancy);
            self.occupancy_updates += 1;
        }
        self.iteration += 1;
        Ok(IterRecord {
            stage: pass.tag,
            iter: it,
            loss,
            t: ts,
            grad_norm,
            skipped: false,
        })
    }

    /// Step until `until` iterations (capped at the stage's configured count),
    /// passing each record to `observer`.
    pub fn run_until(
        &mut self,
        until: usize,
        model: &dyn GuidanceModel,
        cond: &ConditionSet,
        mut observer: impl FnMut(&IterRecord),
    ) -> Result<()> {
        let end = until.min(self.target_iterations());
        while self.iteration < end {
            let rec = self.step(model, cond)?;
            observer(&rec);
        }
        Ok(())
    }

    pub fn run(&mut self, model: &dyn GuidanceModel, cond: &ConditionSet, observer: impl FnMut(&IterRecord)) -> Result<()> {
        self.run_until(usize::MAX, model, cond, observer)
    }
}

/// Full coarse stage from initialization.
pub fn run_coarse(config: &RunConfig, model: &dyn GuidanceModel, cond: &ConditionSet) -> Result<Checkpoint> {
    let mut s = CoarseSession::new(config.clone())?;
    s.run(model, cond, |r| log::debug!("{}", r.to_json_line()))?;
    Ok(s.checkpoint())
}
