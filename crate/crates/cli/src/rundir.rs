//! Run directories: fixed layout, single-writer lock, manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bitrain_core::trainer::RunDirs;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
const LOCK: &str = ".lock";

/// Removes the lock file when the run ends, successfully or not.
#[derive(Debug)]
struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// An output directory owned by one process:
/// `corpora/`, `bpe/`, `checkpoints/`, `logs/`, `report.json`.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    _lock: Lock,
}

impl RunDir {
    /// Creates the layout and takes the lock. A directory that already
    /// holds a manifest belongs to an earlier run and is refused.
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
        let lock_path = root.join(LOCK);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
            .with_context(|| {
                format!(
                    "run directory {} is locked by another process (remove {} if that process is gone)",
                    root.display(),
                    lock_path.display()
                )
            })?;
        writeln!(f, "{}", std::process::id())?;
        let lock = Lock(lock_path);
        if root.join(MANIFEST).exists() {
            bail!(
                "{} already holds a finished or running job; choose a fresh --out directory",
                root.display()
            );
        }
        for sub in ["corpora", "bpe", "checkpoints", "logs"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpora(&self, name: &str) -> PathBuf {
        self.root.join("corpora").join(name)
    }

    pub fn bpe(&self, name: &str) -> PathBuf {
        self.root.join("bpe").join(name)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    /// Training artifacts of the run's main model.
    pub fn train_dirs(&self) -> RunDirs {
        RunDirs::under(&self.root)
    }

    /// Training artifacts of an auxiliary model (reverse model, teacher).
    pub fn aux_dirs(&self, name: &str) -> RunDirs {
        RunDirs {
            checkpoints: self.root.join("checkpoints").join(name),
            metrics: self.root.join("logs").join(format!("{name}.metrics.jsonl")),
            timing: self.root.join("logs").join(format!("{name}.timing.jsonl")),
        }
    }

    /// Path relative to the run root, for manifests and reports.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }

    /// Written once, before any training.
    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        f.write_all(serde_json::to_string_pretty(manifest)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_report<T: Serialize>(&self, report: &T) -> Result<()> {
        let path = self.root.join(REPORT);
        fs::write(&path, serde_json::to_string_pretty(report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Everything needed to rerun a job: the resolved options, the configs,
/// every seed and the hashes of the inputs. The output directory itself is
/// left out so identical jobs have identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub options: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<bitrain_core::trainer::TrainingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<bitrain_core::model::ModelConfig>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputFile>,
    pub artifacts: BTreeMap<String, String>,
    /// Sizes known before training, such as the number of training pairs.
    pub planned: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(command: &str, options: impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            options: serde_json::to_value(options)?,
            training: None,
            model: None,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            planned: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_string(), InputFile::hash(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, relative: &str) {
        self.artifacts.insert(name.to_string(), relative.to_string());
    }
}
