use std::path::PathBuf;

use crate::math::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point ({}, {}, {}) lies outside the encoding domain", .0.x, .0.y, .0.z)]
    OutOfDomain(Vec3),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gradient tape is detached: the render was produced without recording")]
    DetachedTape,

    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("empty mesh: {0}")]
    EmptyMesh(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("denoiser protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("image encoding: {0}")]
    Image(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
