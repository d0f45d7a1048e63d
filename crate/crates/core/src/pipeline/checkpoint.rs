use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamGroup};
use super::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SDSYNCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageTag {
    Coarse,
    /// Neural-field continuation of the editing workflow.
    Edit,
    Fine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TetState {
    pub resolution: usize,
    pub extent: f64,
    pub max_deform_fraction: f64,
    pub sdf: Vec<f64>,
    pub deform: Vec<f64>,
}

/// Complete resumable state of a stage.
///
/// Random draws are keyed by `(seed, iteration, view, purpose)`, so the
/// iteration counter is the only RNG cursor that needs saving.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: StageTag,
    pub iteration: usize,
    pub config: RunConfig,
    pub field: Vec<f64>,
    pub env: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub occupancy_updates: usize,
    pub tet: Option<TetState>,
    pub texture: Option<Vec<f64>>,
    pub optimizer: Option<Adam>,
    pub skipped_steps: usize,
}

#[derive(Serialize, Deserialize)]
struct GroupMeta {
    name: String,
    lr_scale: f64,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    groups: Vec<GroupMeta>,
}

#[derive(Serialize, Deserialize)]
struct TetMeta {
    resolution: usize,
    extent: f64,
    max_deform_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: StageTag,
    iteration: usize,
    seed: u64,
    config_hash: String,
    config: RunConfig,
    occupancy_updates: usize,
    skipped_steps: usize,
    tet: Option<TetMeta>,
    has_texture: bool,
    optimizer: Option<OptimizerMeta>,
    sections: Vec<(String, usize)>,
}

impl Checkpoint {
    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    fn sections(&self) -> Vec<(String, &[f64])> {
        let mut s: Vec<(String, &[f64])> = vec![
            ("field".into(), &self.field),
            ("env".into(), &self.env),
            ("occupancy".into(), &self.occupancy),
        ];
        if let Some(t) = &self.tet {
            s.push(("tet.sdf".into(), &t.sdf));
            s.push(("tet.deform".into(), &t.deform));
        }
        if let Some(t) = &self.texture {
            s.push(("texture".into(), t));
        }
        if let Some(o) = &self.optimizer {
            for g in &o.groups {
                s.push((format!("adam.{}.m", g.name), &g.m));
                s.push((format!("adam.{}.v", g.name), &g.v));
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let sections = self.sections();
        let header = Header {
            stage: self.stage,
            iteration: self.iteration,
            seed: self.config.seed,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            occupancy_updates: self.occupancy_updates,
            skipped_steps: self.skipped_steps,
            tet: self.tet.as_ref().map(|t| TetMeta {
                resolution: t.resolution,
                extent: t.extent,
                max_deform_fraction: t.max_deform_fraction,
            }),
            has_texture: self.texture.is_some(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                step: o.step,
                groups: o
                    .groups
                    .iter()
                    .map(|g| GroupMeta {
                        name: g.name.clone(),
                        lr_scale: g.lr_scale,
                        len: g.m.len(),
                    })
                    .collect(),
            }),
            sections: sections.iter().map(|(n, d)| (n.clone(), d.len())).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let body: usize = sections.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, d) in sections {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Format(e.to_string()))?;
        if header.config.hash() != header.config_hash {
            return Err(Error::Format("config hash does not match the stored config".into()));
        }
        let mut pos = 16 + hlen;
        let mut take = |name: &str| -> Result<Vec<f64>> {
            let (_, len) = header
                .sections
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("missing section `{name}`")))?;
            let end = pos + len * 8;
            let raw = bytes
                .get(pos..end)
                .ok_or_else(|| Error::Format(format!("truncated section `{name}`")))?;
            pos = end;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let field = take("field")?;
        let env = take("env")?;
        let occupancy = take("occupancy")?;
        let tet = match &header.tet {
            Some(m) => Some(TetState {
                resolution: m.resolution,
                extent: m.extent,
                max_deform_fraction: m.max_deform_fraction,
                sdf: take("tet.sdf")?,
                deform: take("tet.deform")?,
            }),
            None => None,
        };
        let texture = if header.has_texture { Some(take("texture")?) } else { None };
        let optimizer = match &header.optimizer {
            Some(m) => {
                let mut groups = Vec::new();
                for g in &m.groups {
                    let gm = take(&format!("adam.{}.m", g.name))?;
                    let gv = take(&format!("adam.{}.v", g.name))?;
                    if gm.len() != g.len || gv.len() != g.len {
                        return Err(Error::Format(format!("optimizer group `{}` has the wrong size", g.name)));
                    }
                    groups.push(AdamGroup {
                        name: g.name.clone(),
                        lr_scale: g.lr_scale,
                        m: gm,
                        v: gv,
                    });
                }
                Some(Adam {
                    learning_rate: m.learning_rate,
                    beta1: m.beta1,
                    beta2: m.beta2,
                    epsilon: m.epsilon,
                    step: m.step,
                    groups,
                })
            }
            None => None,
        };
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last section".into()));
        }
        Ok(Self {
            stage: header.stage,
            iteration: header.iteration,
            config: header.config,
            field,
            env,
            occupancy,
            occupancy_updates: header.occupancy_updates,
            tet,
            texture,
            optimizer,
            skipped_steps: header.skipped_steps,
        })
    }

    /// Write to `path` through a temporary file and a rename, so a crash
    /// never leaves a half-written checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
