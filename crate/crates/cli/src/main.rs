use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sdsynth::frame::Image;
use sdsynth::guidance::external::ExternalDenoiser;
use sdsynth::guidance::{ConditionSet, GuidanceModel};
use sdsynth::pipeline::{
    coarse_oracle, export_mesh, fine_oracle, CoarseModel, CoarseSession, Checkpoint, ExportOptions, FineSession,
    IterRecord, Palette, RunConfig, StageTag, SyntheticScene,
};
use sdsynth::render_mesh::render_mesh;
use sdsynth::render_vol::{render_volume, Camera};

/// Coarse-to-fine 3D synthesis by score distillation.
#[derive(Parser)]
#[command(name = "sdsynth", version)]
struct Cli {
    /// TOML run configuration; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration: desk, oracle or paper.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Append per-iteration JSON records to this file.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PriorArgs {
    /// Address of an external denoiser (host:port). Without it the built-in
    /// oracle of the synthetic scene is used.
    #[arg(long)]
    denoiser: Option<String>,
    /// Colour scheme of the synthetic scene oracle.
    #[arg(long, value_enum, default_value_t = PaletteArg::Original)]
    palette: PaletteArg,
    /// Opaque text-condition token.
    #[arg(long, default_value_t = 1)]
    text_id: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum PaletteArg {
    Original,
    Swapped,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the coarse neural field.
    Coarse {
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint of an interrupted run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        prior: PriorArgs,
    },
    /// Extract a mesh from a coarse checkpoint and refine it.
    Refine {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Treat --from as an interrupted mesh-stage checkpoint.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        prior: PriorArgs,
    },
    /// Re-target a coarse model to a new condition, then refine a mesh.
    Edit {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        prior: PriorArgs,
    },
    /// Write OBJ, MTL, baked texture and turntable frames.
    Export {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "mesh")]
        stem: String,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Render one view of a checkpoint to PNG.
    Render {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        azimuth_deg: f64,
        #[arg(long, default_value_t = 15.0)]
        elevation_deg: f64,
        #[arg(long, default_value_t = 1.5)]
        distance: f64,
        #[arg(long, default_value_t = 1.35)]
        focal: f64,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(&cli.preset)?,
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

enum Stage {
    Coarse,
    Fine,
}

fn build_prior(p: &PriorArgs, config: &RunConfig, stage: Stage) -> Result<Box<dyn GuidanceModel>> {
    if let Some(addr) = &p.denoiser {
        let res = match stage {
            Stage::Coarse => (config.coarse.resolution, config.coarse.resolution),
            Stage::Fine => {
                let r = config.fine.resolution / config.fine.latent_factor;
                (r, r)
            }
        };
        return Ok(Box::new(ExternalDenoiser::new(addr.clone(), res)));
    }
    let palette = match p.palette {
        PaletteArg::Original => Palette::Original,
        PaletteArg::Swapped => Palette::Swapped,
    };
    let scene = SyntheticScene::default().with_palette(palette);
    Ok(match stage {
        Stage::Coarse => Box::new(coarse_oracle(&scene, config)?),
        Stage::Fine => Box::new(fine_oracle(&scene, config)?),
    })
}

struct Logger {
    out: Option<BufWriter<File>>,
    every: usize,
}

impl Logger {
    fn new(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => Some(BufWriter::new(
                File::options()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("opening log {}", p.display()))?,
            )),
            None => None,
        };
        Ok(Self { out, every: 25 })
    }

    fn record(&mut self, r: &IterRecord) {
        if let Some(w) = &mut self.out {
            if let Err(e) = writeln!(w, "{}", r.to_json_line()) {
                log::warn!("log write failed: {e}");
            }
        }
        if (r.iter + 1) % self.every == 0 {
            log::info!("{:?} iter {} loss {:.5} grad {:.3e}", r.stage, r.iter + 1, r.loss.total, r.grad_norm);
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SDSYNTH_THREADS") {
        let n: usize = v.parse().with_context(|| format!("SDSYNTH_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    configure_threads()?;
    let cli = Cli::parse();
    let mut logger = Logger::new(cli.log.as_deref())?;
    match &cli.command {
        Command::Coarse { out, resume, prior } => {
            let mut session = match resume {
                Some(p) => CoarseSession::from_checkpoint(&Checkpoint::load(p)?)?,
                None => CoarseSession::new(load_config(&cli)?)?,
            };
            session.dump_dir = out.parent().map(Path::to_path_buf);
            let model = build_prior(prior, &session.config, Stage::Coarse)?;
            session.run(model.as_ref(), &ConditionSet::text(prior.text_id), |r| logger.record(r))?;
            session.checkpoint().save(out)?;
        }
        Command::Refine {
            from,
            out,
            resume,
            prior,
        } => {
            let ck = Checkpoint::load(from)?;
            let mut session = if *resume {
                FineSession::from_checkpoint(&ck)?
            } else {
                FineSession::from_coarse(&ck)?
            };
            session.dump_dir = out.parent().map(Path::to_path_buf);
            let model = build_prior(prior, &session.config, Stage::Fine)?;
            session.run(model.as_ref(), &ConditionSet::text(prior.text_id), |r| logger.record(r))?;
            if session.skipped_steps > 0 {
                log::warn!("{} steps skipped on empty meshes", session.skipped_steps);
            }
            session.checkpoint().save(out)?;
        }
        Command::Edit { from, out, prior } => {
            let ck = Checkpoint::load(from)?;
            let model = build_prior(prior, &ck.config, Stage::Fine)?;
            let cond = ConditionSet::text(prior.text_id);
            let res = sdsynth::pipeline::edit_from_coarse_with(&ck, model.as_ref(), &cond, |r| logger.record(r))?;
            res.mesh.save(out)?;
        }
        Command::Export {
            from,
            dir,
            stem,
            frames,
            resolution,
        } => {
            let ck = Checkpoint::load(from)?;
            if ck.stage != StageTag::Fine {
                bail!("export needs a mesh-stage checkpoint (run `refine` first)");
            }
            let s = FineSession::from_checkpoint(&ck)?;
            let mesh = s.scene.extract();
            let opts = ExportOptions {
                turntable_frames: *frames,
                turntable_resolution: *resolution,
                ..Default::default()
            };
            let files = export_mesh(&mesh, &s.scene.texture, &s.scene.env, dir, stem, &opts)?;
            log::info!("wrote {} ({} vertices, {} faces)", files.obj.display(), mesh.vertices.len(), mesh.faces.len());
        }
        Command::Render {
            from,
            out,
            azimuth_deg,
            elevation_deg,
            distance,
            focal,
            resolution,
        } => {
            let ck = Checkpoint::load(from)?;
            let cam = Camera::orbit(
                *distance,
                azimuth_deg.to_radians(),
                elevation_deg.to_radians(),
                *focal,
                *resolution,
                *resolution,
            );
            let shading = sdsynth::pipeline::export::preview_shading(&cam);
            let image: Image = match ck.stage {
                StageTag::Fine => {
                    let s = FineSession::from_checkpoint(&ck)?;
                    let mesh = s.scene.extract();
                    render_mesh(&mesh, &s.scene.texture, &s.scene.env, &cam, &shading, &ck.config.fine.render)?.color
                }
                _ => {
                    let m = CoarseModel::restore(&ck)?;
                    render_volume(&m.field, &m.env, &m.octree, &cam, &shading, &ck.config.coarse.render)?.color
                }
            };
            image.save_png(out)?;
        }
    }
    Ok(())
}
