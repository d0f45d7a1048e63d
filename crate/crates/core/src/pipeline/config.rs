use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accel::OccupancyConfig;
use crate::error::{Error, Result};
use crate::field::{FieldConfig, HashGridConfig};
use crate::geometry::TetGridConfig;
use crate::guidance::{Guidance, SdsConfig};
use crate::render_mesh::MeshRenderSettings;
use crate::render_vol::RenderSettings;

/// How training cameras are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CameraMode {
    /// Random distance, focal, azimuth and elevation per draw.
    Augmented,
    /// A fixed ring of `views` cameras; each draw picks one at random.
    Orbit(OrbitRing),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitRing {
    pub views: usize,
    pub distance: f64,
    pub elevation_deg: f64,
    pub coarse_focal: f64,
    pub fine_focal: f64,
}

impl Default for OrbitRing {
    fn default() -> Self {
        Self {
            views: 8,
            distance: 1.5,
            elevation_deg: 15.0,
            coarse_focal: 1.35,
            fine_focal: 1.8,
        }
    }
}

/// How lighting is drawn for each view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadingMode {
    /// Random point light with soft textureless and albedo-only mixing.
    Augmented,
    /// Unlit albedo.
    Albedo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub env_lr_scale: f64,
    pub sdf_lr_scale: f64,
    pub deform_lr_scale: f64,
    pub texture_lr_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
            env_lr_scale: 0.1,
            sdf_lr_scale: 1.0,
            deform_lr_scale: 1.0,
            texture_lr_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub opacity: f64,
    pub smoothness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            opacity: 1e-3,
            smoothness: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseStageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub resolution: usize,
    pub render: RenderSettings,
    pub occupancy: OccupancyConfig,
    pub sds: SdsConfig,
}

impl Default for CoarseStageConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 32,
            resolution: 64,
            render: RenderSettings::default(),
            occupancy: OccupancyConfig::default(),
            sds: SdsConfig::coarse(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineStageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub resolution: usize,
    /// Pooling factor of the stand-in latent encoder.
    pub latent_factor: usize,
    pub tet: TetGridConfig,
    /// Density subtracted to turn the coarse field into signed values.
    pub kappa: f64,
    pub render: MeshRenderSettings,
    pub sds: SdsConfig,
    /// Resolution of the frozen coarse render handed to priors that ask for
    /// a low-resolution condition.
    pub low_res: usize,
}

impl Default for FineStageConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_size: 32,
            resolution: 512,
            latent_factor: 8,
            tet: TetGridConfig {
                resolution: 128,
                ..Default::default()
            },
            kappa: 5.0,
            render: MeshRenderSettings::default(),
            sds: SdsConfig::fine(),
            low_res: 64,
        }
    }
}

/// Neural-field continuation under the high-resolution prior, the middle
/// step of the editing workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditStageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub resolution: usize,
    pub latent_factor: usize,
    pub render: RenderSettings,
    pub sds: SdsConfig,
}

impl Default for EditStageConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 32,
            resolution: 512,
            latent_factor: 8,
            render: RenderSettings::default(),
            sds: SdsConfig::fine(),
        }
    }
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub field: FieldConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub camera: CameraMode,
    pub shading: ShadingMode,
    pub coarse: CoarseStageConfig,
    pub fine: FineStageConfig,
    pub edit: EditStageConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RunConfig {
    /// Full-scale settings.
    pub fn paper() -> Self {
        Self {
            seed: 0,
            field: FieldConfig::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            camera: CameraMode::Augmented,
            shading: ShadingMode::Augmented,
            coarse: CoarseStageConfig::default(),
            fine: FineStageConfig::default(),
            edit: EditStageConfig::default(),
        }
    }

    /// CPU-sized settings: smaller renders, fewer iterations, a smaller
    /// hash table and tet grid. Every code path is the same.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.field.encoding = HashGridConfig {
            log2_table_size: 15,
            ..Default::default()
        };
        c.coarse.iterations = 500;
        c.coarse.batch_size = 1;
        c.coarse.render = RenderSettings {
            max_samples: 96,
            min_transmittance: 1e-2,
            ..Default::default()
        };
        c.coarse.occupancy.resolution = 64;
        c.fine.iterations = 300;
        c.fine.batch_size = 2;
        c.fine.resolution = 256;
        c.fine.latent_factor = 2;
        c.fine.tet.resolution = 64;
        // s starts in density units, so at the base rate a vertex a few
        // units outside the surface never changes sign in 300 steps
        c.optimizer.sdf_lr_scale = 20.0;
        c.edit.iterations = 60;
        c.edit.batch_size = 1;
        c.edit.resolution = 128;
        c.edit.latent_factor = 1;
        c.edit.render = c.coarse.render.clone();
        c
    }

    /// Desk settings for inverse rendering against a known scene: a fixed
    /// camera ring, unlit albedo and unit guidance weight, so the optimum
    /// of every stage reproduces the target views.
    pub fn oracle() -> Self {
        let mut c = Self::desk();
        c.camera = CameraMode::Orbit(OrbitRing::default());
        c.shading = ShadingMode::Albedo;
        let unit = Guidance::Standard { weight: 1.0 };
        c.coarse.sds.guidance = unit.clone();
        c.fine.sds.guidance = unit.clone();
        c.edit.sds.guidance = unit;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            "oracle" => Ok(Self::oracle()),
            other => Err(Error::config(format!("unknown preset `{other}` (expected desk, oracle or paper)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.field.encoding.validate()?;
        self.coarse.occupancy.validate()?;
        self.coarse.sds.validate()?;
        self.fine.sds.validate()?;
        self.edit.sds.validate()?;
        let positive = [
            self.coarse.batch_size,
            self.coarse.resolution,
            self.fine.batch_size,
            self.fine.resolution,
            self.fine.latent_factor,
            self.fine.tet.resolution,
            self.edit.batch_size,
            self.edit.resolution,
            self.edit.latent_factor,
            self.coarse.render.max_samples,
            self.edit.render.max_samples,
        ];
        if positive.contains(&0) {
            return Err(Error::config("batch sizes, resolutions and sample counts must be positive"));
        }
        if self.fine.resolution % self.fine.latent_factor != 0 || self.edit.resolution % self.edit.latent_factor != 0 {
            return Err(Error::config("latent factor must divide the render resolution"));
        }
        if !(self.fine.kappa > 0.0) {
            return Err(Error::config("kappa must be positive"));
        }
        if let CameraMode::Orbit(r) = &self.camera {
            if r.views == 0 || r.distance <= 0.0 || r.coarse_focal <= 0.0 || r.fine_focal <= 0.0 {
                return Err(Error::config("orbit ring needs views, distance and focal lengths > 0"));
            }
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("optimizer needs lr > 0 and betas in [0, 1)"));
        }
        if self.loss.opacity < 0.0 || self.loss.smoothness < 0.0 {
            return Err(Error::config("loss weights must be nonnegative"));
        }
        for g in [&self.coarse.sds.guidance, &self.fine.sds.guidance, &self.edit.sds.guidance] {
            if let Guidance::Extended { text_weight, joint_weight, .. } = g {
                log::info!("extended guidance: text weight {text_weight}, joint weight {joint_weight}");
            }
        }
        Ok(())
    }
}
