//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: wrong magic number {found:#010x} (expected {expected:#010x})")]
    WrongMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("class imbalance rate must lie in [0, 0.9], got {0}")]
    ImbalanceOutOfRange(f64),

    #[error("cannot split {samples} samples across {uavs} UAVs")]
    TooManyUavs { samples: usize, uavs: usize },

    #[error("negative speed {0} m/s")]
    NegativeSpeed(f64),

    #[error("empty UAV set")]
    EmptyUavSet,

    #[error("UAV {0} holds no samples")]
    ZeroSampleUav(usize),

    #[error("no available UAVs (all below battery threshold or recharging)")]
    NoAvailableUavs,

    #[error("empty shard for UAV {0}")]
    EmptyShard(usize),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model checkpoint {path}: {detail}")]
    BadCheckpoint { path: PathBuf, detail: String },

    #[error("all UAVs are recharging; swarm depleted at round {0}")]
    SwarmDepleted(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
