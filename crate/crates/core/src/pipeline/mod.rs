//! File-based orchestration of both stages: index a corpus, generate a rated
//! collection, import ratings, train listener models, and compose with them.
//!
//! Every command reads and writes plain files so each stage can be rerun in
//! isolation. Commands that write into a work directory hold its lock file.

mod commands;
mod config;
mod manifest;
mod ratings;
mod timing;

use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::abc::AbcError;
use crate::corpus::CorpusError;
use crate::evolve::EvolveError;
use crate::listener::{CheckpointError, ListenerGroup, TrainError};
use crate::pianoroll::RollError;

pub use commands::{
    cmd_ga1, cmd_ga2, cmd_index, cmd_score, cmd_train, convert, load_corpus, load_index, verify_collection, Ga2Report,
    IndexReport, ModelMeta, ScoreReport, Skipped, TrainReport, GA2_BREAKDOWN_HEADER,
};
pub use config::PipelineConfig;
pub use manifest::{Manifest, ManifestEntry};
pub use ratings::{cmd_ratings_import, ImportReport, RatingRecord};
pub use timing::{timing_sweep, write_timing_csv, TimingRow, TIMING_HEADER};

/// Standard file names inside a work directory.
pub mod layout {
    use std::path::{Path, PathBuf};

    use crate::listener::ListenerGroup;

    pub fn index(work: &Path) -> PathBuf {
        work.join("index.txt")
    }

    pub fn histogram(work: &Path) -> PathBuf {
        work.join("note_histogram.csv")
    }

    pub fn collection(work: &Path) -> PathBuf {
        work.join("collection")
    }

    pub fn manifest(work: &Path) -> PathBuf {
        collection(work).join("manifest.csv")
    }

    pub fn ratings(work: &Path) -> PathBuf {
        work.join("ratings")
    }

    pub fn dataset(work: &Path, group: ListenerGroup) -> PathBuf {
        ratings(work).join(format!("{}.ratings", group.as_str()))
    }

    pub fn models(work: &Path) -> PathBuf {
        work.join("models")
    }

    pub fn checkpoint(work: &Path, group: ListenerGroup) -> PathBuf {
        models(work).join(format!("{}.ckpt", group.as_str()))
    }

    pub fn ga2(work: &Path) -> PathBuf {
        work.join("ga2")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("work directory is locked by {0} (remove it if no other run is active)")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{file}: {source}")]
    Abc { file: PathBuf, source: AbcError },
    #[error("{file}: {source}")]
    Roll { file: PathBuf, source: RollError },
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("{file}: {source}")]
    IndexFile { file: PathBuf, source: CorpusError },
    #[error("{file}: {source}")]
    Checkpoint { file: PathBuf, source: CheckpointError },
    #[error("{file} line {line}: {reason}")]
    Manifest { file: PathBuf, line: usize, reason: String },
    #[error("ratings row {row}: unknown piece id {piece_id:?}")]
    UnknownPieceId { row: usize, piece_id: String },
    #[error("ratings row {row}: score {score} outside 0..=100")]
    ScoreOutOfRange { row: usize, score: i64 },
    #[error("no ratings for the {} group", .0.as_str())]
    EmptyGroup(ListenerGroup),
    #[error("ratings row {row}: {reason}")]
    Ratings { row: usize, reason: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for usage and configuration, 2 for bad data, 3 for numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Locked(_) => 1,
            PipelineError::Train(TrainError::DivergenceDetected { .. }) => 3,
            PipelineError::Train(TrainError::Config(_)) => 1,
            PipelineError::Evolve(EvolveError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}

/// Exclusive claim on a work directory, released on drop.
#[derive(Debug)]
pub struct WorkLock {
    path: PathBuf,
}

impl WorkLock {
    pub const FILE: &'static str = ".harmogen.lock";

    pub fn acquire(work_dir: &Path) -> Result<Self, PipelineError> {
        create_dir(work_dir)?;
        let path = work_dir.join(Self::FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkLock { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }
}

impl Drop for WorkLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}
