//! On-disk timeline directory:
//!
//! ```text
//! <root>/
//!   timeline.json        manifest: slice order, rho values, seeds, config hash
//!   global.ckpt          running global after the last completed slice
//!   slice_<t>/
//!     local.ckpt         local topic matrix of slice t
//!     delta.ckpt         learned perturbation (local minus pre-update global)
//!     encoder.ckpt       encoder parameters theta_t
//!     global.ckpt        running global immediately after slice t
//! ```
//!
//! The manifest is rewritten after every slice, so a crashed run leaves a
//! loadable prefix behind and `--resume` can pick up at the next slice. A
//! `.lock` file guards against concurrent writers; a stale lock from a
//! crashed process must be removed by hand.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::{ModelTimeline, RhoSchedule, SliceRecord, SliceTrainConfig};
use crate::model::checkpoint::{
    read_encoder, read_topic_matrix, write_encoder, write_topic_matrix, CheckpointError, CkptMeta,
};
use crate::model::{EncoderParams, TopicMatrix, TopicRole};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("timeline directory {0} is locked (remove .lock if no trainer is running)")]
    Locked(String),
    #[error("timeline directory {0} already contains a run (use resume)")]
    AlreadyExists(String),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceEntry {
    pub t: usize,
    pub label: i64,
    pub rho: f64,
    pub val_elbo_before: Option<f64>,
    pub val_elbo_after: Option<f64>,
    pub encoder: String,
    pub local: String,
    pub delta: String,
    pub global: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    pub v: usize,
    pub schedule: RhoSchedule,
    pub train: SliceTrainConfig,
    pub slices: Vec<SliceEntry>,
}

impl TimelineManifest {
    pub fn completed(&self) -> usize {
        self.slices.len()
    }
}

/// Held while a trainer owns the directory; removed on drop.
#[derive(Debug)]
struct LockFile {
    path: PathBuf,
}

impl LockFile {
    fn acquire(root: &Path) -> Result<Self, PersistError> {
        let path = root.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockFile { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PersistError::Locked(root.display().to_string()))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn manifest_path(root: &Path) -> PathBuf {
    root.join("timeline.json")
}

fn write_manifest(root: &Path, manifest: &TimelineManifest) -> Result<(), PersistError> {
    let path = manifest_path(root);
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| PersistError::Manifest(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<TimelineManifest, PersistError> {
    let path = manifest_path(root);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PersistError::Manifest(e.to_string()))
}

/// Incrementally persists a training run.
#[derive(Debug)]
pub struct TimelineWriter {
    root: PathBuf,
    manifest: TimelineManifest,
    _lock: LockFile,
}

impl TimelineWriter {
    /// Starts a fresh directory and stores the initial global matrix so a
    /// resume before the first slice completes is well defined.
    pub fn create(
        root: &Path,
        config_hash: &str,
        schedule: RhoSchedule,
        train: SliceTrainConfig,
        k: usize,
        v: usize,
        init_global: &TopicMatrix,
    ) -> Result<Self, PersistError> {
        std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        if manifest_path(root).exists() {
            return Err(PersistError::AlreadyExists(root.display().to_string()));
        }
        let lock = LockFile::acquire(root)?;
        let manifest = TimelineManifest {
            version: crate::ARTIFACT_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            seed: train.seed,
            k,
            v,
            schedule,
            train,
            slices: Vec::new(),
        };
        let writer = TimelineWriter {
            root: root.to_path_buf(),
            manifest,
            _lock: lock,
        };
        writer.write_global(init_global, 0)?;
        write_manifest(&writer.root, &writer.manifest)?;
        Ok(writer)
    }

    /// Reopens an existing directory for appending.
    pub fn resume(root: &Path) -> Result<Self, PersistError> {
        let manifest = read_manifest(root)?;
        let lock = LockFile::acquire(root)?;
        Ok(TimelineWriter {
            root: root.to_path_buf(),
            manifest,
            _lock: lock,
        })
    }

    pub fn manifest(&self) -> &TimelineManifest {
        &self.manifest
    }

    fn meta(&self, slice: usize) -> CkptMeta {
        CkptMeta {
            seed: self.manifest.seed,
            slice,
            hyper: serde_json::json!({
                "config_hash": self.manifest.config_hash,
                "k": self.manifest.k,
                "v": self.manifest.v,
                "lr": self.manifest.train.lr,
                "alpha0": self.manifest.train.alpha0,
                "alpha_min": self.manifest.train.alpha_min,
                "boost": self.manifest.train.boost,
                "hidden": self.manifest.train.hidden,
                "reparam": self.manifest.train.reparam,
            }),
        }
    }

    fn write_global(&self, global: &TopicMatrix, slice: usize) -> Result<(), PersistError> {
        let path = self.root.join("global.ckpt");
        write_topic_matrix(&path, global, &self.meta(slice))?;
        Ok(())
    }

    /// Persists one finished slice and refreshes the manifest plus the
    /// running global checkpoint.
    pub fn append_slice(&mut self, rec: &SliceRecord) -> Result<(), PersistError> {
        let dir = self.root.join(format!("slice_{}", rec.t));
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let meta = self.meta(rec.t);
        write_topic_matrix(&dir.join("local.ckpt"), &rec.local, &meta)?;
        write_topic_matrix(&dir.join("delta.ckpt"), &rec.delta, &meta)?;
        write_topic_matrix(&dir.join("global.ckpt"), &rec.global_after, &meta)?;
        write_encoder(&dir.join("encoder.ckpt"), &rec.encoder, &meta)?;
        self.write_global(&rec.global_after, rec.t)?;
        self.manifest.slices.push(SliceEntry {
            t: rec.t,
            label: rec.label,
            rho: rec.rho,
            val_elbo_before: rec.val_elbo_before,
            val_elbo_after: rec.val_elbo_after,
            encoder: format!("slice_{}/encoder.ckpt", rec.t),
            local: format!("slice_{}/local.ckpt", rec.t),
            delta: format!("slice_{}/delta.ckpt", rec.t),
            global: format!("slice_{}/global.ckpt", rec.t),
        });
        write_manifest(&self.root, &self.manifest)
    }
}

/// Reads the current running global (the state a resume continues from).
pub fn read_current_global(root: &Path) -> Result<TopicMatrix, PersistError> {
    let (matrix, _) = read_topic_matrix(&root.join("global.ckpt"))?;
    Ok(matrix)
}

/// Reads the encoder of the last completed slice, if any.
pub fn read_last_encoder(root: &Path) -> Result<Option<EncoderParams>, PersistError> {
    let manifest = read_manifest(root)?;
    match manifest.slices.last() {
        None => Ok(None),
        Some(entry) => {
            let (enc, _) = read_encoder(&root.join(&entry.encoder))?;
            Ok(Some(enc))
        }
    }
}

/// Loads a persisted timeline fully into memory for evaluation.
pub fn load_timeline(root: &Path) -> Result<(TimelineManifest, ModelTimeline), PersistError> {
    let manifest = read_manifest(root)?;
    let mut slices: Vec<SliceRecord> = Vec::with_capacity(manifest.slices.len());
    for entry in &manifest.slices {
        let (local, _) = read_topic_matrix(&root.join(&entry.local))?;
        let (mut delta, _) = read_topic_matrix(&root.join(&entry.delta))?;
        delta.role = TopicRole::Delta;
        let (global_after, _) = read_topic_matrix(&root.join(&entry.global))?;
        let (encoder, _) = read_encoder(&root.join(&entry.encoder))?;
        slices.push(SliceRecord {
            t: entry.t,
            label: entry.label,
            rho: entry.rho,
            encoder,
            delta,
            local,
            global_after,
            val_elbo_before: entry.val_elbo_before,
            val_elbo_after: entry.val_elbo_after,
        });
    }
    let global = read_current_global(root)?;
    Ok((
        manifest.clone(),
        ModelTimeline {
            schedule: manifest.schedule,
            slices,
            global,
        },
    ))
}
