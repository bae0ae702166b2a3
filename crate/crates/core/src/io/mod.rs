//! Datasets, synthetic scenes, trajectories, configuration, and exports.

mod config;
mod dataset;
pub mod export;
mod synth;
mod trajectory;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{DatasetSection, RunConfig, TaxonomySection};
pub use dataset::{
    encode_depth, encode_labels, load_sequence, write_gray8_png, write_rgb_png, write_u16_png, DatasetFrame,
    DatasetKind, DatasetMeta, Prefetch, Sequence, DEFAULT_DEPTH_SCALE, PREFETCH_DEPTH, SEMANTIC_VOID,
};
pub use synth::{
    generate_synthetic, render_view, Face, LabeledBox, Region, RoomSpec, SynthConfig, SynthSummary, SynthView,
    TrajectorySpec,
};
pub use trajectory::{format_line, format_trajectory, load_trajectory, parse_trajectory, save_trajectory, Stamped};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset layout: {0}")]
    Layout(String),
    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("cannot encode {}: {message}", path.display())]
    Encode { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
}

impl IoError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.to_path_buf(),
            source,
        }
    }
}
