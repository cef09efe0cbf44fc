//! Reproducibility artifacts: the run manifest written before training
//! starts and the structured-text sidecar written next to every checkpoint.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use diffract_qat::error::{Error, Result};

use crate::config::{Config, GumbelSection, ScheduleSection};

/// Everything needed to re-run a training run identically.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    /// Toolkit version that produced the run.
    pub version: String,
    pub seed: u64,
    pub task: String,
    pub quantizer: String,
    pub levels: u32,
    /// SHA-256 digests of every input data file, keyed by config role.
    pub data_digests: BTreeMap<String, String>,
    /// Run-relative output locations.
    pub outputs: OutputPaths,
    /// The fully resolved configuration (file + overrides).
    pub config: Config,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputPaths {
    pub manifest: String,
    pub checkpoints: String,
    pub metrics: String,
    pub summary: String,
    pub exports: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            manifest: "manifest.toml".into(),
            checkpoints: "checkpoints".into(),
            metrics: "metrics.csv".into(),
            summary: "summary.toml".into(),
            exports: "exports".into(),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a PGM directory: the SHA-256 of the sorted
/// `name = file-digest` lines, so any rename or content change shows up.
pub fn sha256_dir(dir: &Path) -> Result<String> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for entry in std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?
    {
        let entry = entry?;
        let path = entry.path();
        if path.is_file() {
            entries.push((
                entry.file_name().to_string_lossy().into_owned(),
                sha256_file(&path)?,
            ));
        }
    }
    entries.sort();
    let mut hasher = Sha256::new();
    for (name, digest) in entries {
        hasher.update(name.as_bytes());
        hasher.update(b" = ");
        hasher.update(digest.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex(&hasher.finalize()))
}

/// Digests for every data input the config references.
pub fn data_digests(cfg: &Config) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    match cfg.data.format.as_str() {
        "idx" => {
            for (key, path) in [
                ("train_images", &cfg.data.train_images),
                ("train_labels", &cfg.data.train_labels),
                ("test_images", &cfg.data.test_images),
                ("test_labels", &cfg.data.test_labels),
            ] {
                if let Some(p) = path {
                    map.insert(key.to_string(), sha256_file(p)?);
                }
            }
        }
        _ => {
            if let Some(dir) = &cfg.data.dir {
                map.insert("dir".to_string(), sha256_dir(dir)?);
            }
        }
    }
    Ok(map)
}

impl RunManifest {
    pub fn build(cfg: &Config) -> Result<Self> {
        Ok(Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.run.seed,
            task: cfg.run.task.clone(),
            quantizer: cfg.train.quantizer.clone(),
            levels: cfg.train.levels,
            data_digests: data_digests(cfg)?,
            outputs: OutputPaths::default(),
            config: cfg.clone(),
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize manifest: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::Format(format!("invalid manifest {}: {e}", path.display())))
    }
}

/// Sidecar metadata written next to every checkpoint as
/// `<checkpoint>.meta.toml`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    /// Training stage the checkpoint came from ("fp" or "qat").
    pub stage: String,
    /// Epoch (within the stage) the weights were selected from, if any ran.
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub task: String,
    pub quantizer: String,
    pub levels: u32,
    pub schedule: ScheduleSection,
    pub gumbel: GumbelSection,
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.toml");
    checkpoint.with_file_name(name)
}

impl CheckpointMeta {
    pub fn for_stage(cfg: &Config, stage: &str, best_epoch: Option<usize>) -> Self {
        Self {
            stage: stage.to_string(),
            best_epoch,
            seed: cfg.run.seed,
            task: cfg.run.task.clone(),
            quantizer: if stage == "fp" {
                "fp".to_string()
            } else {
                cfg.train.quantizer.clone()
            },
            levels: cfg.train.levels,
            schedule: cfg.schedule,
            gumbel: cfg.gumbel,
        }
    }

    pub fn write_for(&self, checkpoint: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize checkpoint metadata: {e}")))?;
        std::fs::write(meta_path(checkpoint), text)?;
        Ok(())
    }

    pub fn read_for(checkpoint: &Path) -> Result<Option<Self>> {
        let path = meta_path(checkpoint);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let meta = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("invalid sidecar {}: {e}", path.display())))?;
        Ok(Some(meta))
    }

    /// The learned-temperature cap parameter, when the checkpoint's
    /// temperature scalars are learnable parameters rather than fixed
    /// temperatures.
    pub fn lt_gamma(&self) -> Option<f64> {
        (self.quantizer == "psq-lt").then_some(self.schedule.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_path_appends_suffix() {
        assert_eq!(
            meta_path(Path::new("runs/a/checkpoints/final.d2nn")),
            PathBuf::from("runs/a/checkpoints/final.d2nn.meta.toml")
        );
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = Config::default();
        let m = RunManifest {
            version: "0.0.0".into(),
            seed: 3,
            task: "classification".into(),
            quantizer: "psq-lt".into(),
            levels: 2,
            data_digests: BTreeMap::from([("train_images".into(), "abc".into())]),
            outputs: OutputPaths::default(),
            config: cfg,
        };
        let text = m.to_toml().unwrap();
        let back: RunManifest = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn lt_gamma_only_for_learned_temperature_runs() {
        let cfg = Config::default();
        let meta = CheckpointMeta::for_stage(&cfg, "qat", Some(3));
        assert_eq!(meta.lt_gamma(), Some(0.05));
        let mut cfg2 = Config::default();
        cfg2.train.quantizer = "psq-ft".into();
        let meta2 = CheckpointMeta::for_stage(&cfg2, "qat", None);
        assert_eq!(meta2.lt_gamma(), None);
        let fp_meta = CheckpointMeta::for_stage(&cfg, "fp", Some(0));
        assert_eq!(fp_meta.quantizer, "fp");
        assert_eq!(fp_meta.lt_gamma(), None);
    }
}
