//! Run configuration: a TOML file with strict unknown-key rejection plus a
//! small set of command-line overrides.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use diffract_qat::error::{Error, Result};
use diffract_qat::network::Geometry;
use diffract_qat::training::{
    GumbelSchedule, QuantizerKind, ScheduleConfig, ScheduleMode, Task, TrainConfig,
};

/// Run identity and bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Run directory name; derived from the setup when omitted.
    pub name: Option<String>,
    pub out_dir: String,
    pub seed: u64,
    pub task: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: None,
            out_dir: "runs".into(),
            seed: 0,
            task: "classification".into(),
        }
    }
}

/// Dataset sources. Either IDX image/label file pairs or a directory of
/// 8-bit grayscale PGM files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// "idx" or "pgm".
    pub format: String,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// PGM directory (split into partitions by the fractions below).
    pub dir: Option<PathBuf>,
    /// Nearest-neighbor resize target (square) for PGM inputs; 0 keeps the
    /// native size.
    pub resize: usize,
    /// Fraction of the training set carved off for validation. When 0, the
    /// test set doubles as the validation set.
    pub val_fraction: f64,
    /// PGM-directory mode only: fraction held out as the test set.
    pub test_fraction: f64,
    /// Keep only the first N training / test samples (0 = all).
    pub limit_train: usize,
    pub limit_test: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            format: "idx".into(),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            dir: None,
            resize: 0,
            val_fraction: 0.0,
            test_fraction: 0.1,
            limit_train: 0,
            limit_test: 0,
        }
    }
}

/// Network geometry. Distances and the pitch are expressed in wavelengths so
/// a config stays valid under a wavelength change.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layer_size: usize,
    pub fov_size: usize,
    pub num_layers: usize,
    pub wavelength: f64,
    pub pitch_wavelengths: f64,
    pub z_in_wavelengths: f64,
    pub z_wavelengths: f64,
    pub z_out_wavelengths: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layer_size: 32,
            fov_size: 32,
            num_layers: 5,
            wavelength: 632.8e-9,
            pitch_wavelengths: 0.5,
            z_in_wavelengths: 5.3,
            z_wavelengths: 5.3,
            z_out_wavelengths: 9.3,
        }
    }
}

impl ModelSection {
    pub fn geometry(&self) -> Result<Geometry> {
        let g = Geometry {
            layer_h: self.layer_size,
            layer_w: self.layer_size,
            fov_h: self.fov_size,
            fov_w: self.fov_size,
            num_layers: self.num_layers,
            pitch: self.pitch_wavelengths * self.wavelength,
            wavelength: self.wavelength,
            z_in: self.z_in_wavelengths * self.wavelength,
            z_between: self.z_wavelengths * self.wavelength,
            z_out: self.z_out_wavelengths * self.wavelength,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Optimization protocol.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs_fp: usize,
    pub epochs_qat: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate for the quantization-aware stage; falls back to `lr`.
    pub lr_qat: Option<f64>,
    pub quantizer: String,
    pub levels: u32,
    pub berhu_c_frac: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs_fp: 20,
            epochs_qat: 20,
            batch_size: 32,
            lr: 1e-3,
            lr_qat: None,
            quantizer: "psq-lt".into(),
            levels: 4,
            berhu_c_frac: 0.2,
        }
    }
}

/// Temperature schedule and regularizer hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub tau0: f64,
    pub delta_tau: f64,
    pub delta_t: usize,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: usize,
    pub literal: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let d = ScheduleConfig::default();
        Self {
            tau0: d.tau0,
            delta_tau: d.delta_tau,
            delta_t: d.delta_t,
            gamma: d.gamma,
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            beta: d.beta,
            literal: false,
        }
    }
}

/// Gumbel-softmax annealing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GumbelSection {
    pub temp0: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for GumbelSection {
    fn default() -> Self {
        let d = GumbelSchedule::default();
        Self {
            temp0: d.temp0,
            decay: d.decay,
            floor: d.floor,
        }
    }
}

/// The full resolved configuration of a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub schedule: ScheduleSection,
    pub gumbel: GumbelSection,
}

/// Which training stage a core config is being built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    FullPrecision,
    Qat,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::FullPrecision => "fp",
            Stage::Qat => "qat",
        }
    }
}

/// Command-line overrides shared by `train`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub name: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub quantizer: Option<String>,
    pub levels: Option<u32>,
    pub schedule_literal: bool,
    pub epochs_fp: Option<usize>,
    pub epochs_qat: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_qat: Option<f64>,
}

pub fn parse_task(s: &str) -> Result<Task> {
    match s {
        "classification" => Ok(Task::Classification),
        "qpi" => Ok(Task::Qpi),
        other => Err(Error::Config(format!(
            "unknown task \"{other}\" (expected \"classification\" or \"qpi\")"
        ))),
    }
}

pub fn parse_quantizer(s: &str) -> Result<(QuantizerKind, ScheduleMode)> {
    match s {
        "fp" => Ok((QuantizerKind::FullPrecision, ScheduleMode::Ft)),
        "hard" => Ok((QuantizerKind::Hard, ScheduleMode::Ft)),
        "ste" => Ok((QuantizerKind::Ste, ScheduleMode::Ft)),
        "gs" => Ok((QuantizerKind::Gumbel, ScheduleMode::Ft)),
        "dsq" => Ok((QuantizerKind::Dsq, ScheduleMode::Ft)),
        "psq-ft" => Ok((QuantizerKind::Psq, ScheduleMode::Ft)),
        "psq-li" => Ok((QuantizerKind::Psq, ScheduleMode::Li)),
        "psq-lt" => Ok((QuantizerKind::Psq, ScheduleMode::Lt)),
        other => Err(Error::Config(format!(
            "unknown quantizer \"{other}\" (expected fp|hard|ste|gs|dsq|psq-ft|psq-li|psq-lt)"
        ))),
    }
}

impl Config {
    /// Parse a config file, mapping unknown keys and type errors to config
    /// errors that name the offender.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn apply_overrides(&mut self, ov: &Overrides) {
        if let Some(v) = &ov.name {
            self.run.name = Some(v.clone());
        }
        if let Some(v) = &ov.out_dir {
            self.run.out_dir = v.display().to_string();
        }
        if let Some(v) = ov.seed {
            self.run.seed = v;
        }
        if let Some(v) = &ov.task {
            self.run.task = v.clone();
        }
        if let Some(v) = &ov.quantizer {
            self.train.quantizer = v.clone();
        }
        if let Some(v) = ov.levels {
            self.train.levels = v;
        }
        if ov.schedule_literal {
            self.schedule.literal = true;
        }
        if let Some(v) = ov.epochs_fp {
            self.train.epochs_fp = v;
        }
        if let Some(v) = ov.epochs_qat {
            self.train.epochs_qat = v;
        }
        if let Some(v) = ov.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = ov.lr {
            self.train.lr = v;
        }
        if let Some(v) = ov.lr_qat {
            self.train.lr_qat = Some(v);
        }
    }

    pub fn task(&self) -> Result<Task> {
        parse_task(&self.run.task)
    }

    pub fn quantizer(&self) -> Result<(QuantizerKind, ScheduleMode)> {
        parse_quantizer(&self.train.quantizer)
    }

    /// The run-directory name, derived from the setup when not set.
    pub fn resolved_name(&self) -> String {
        match &self.run.name {
            Some(n) => n.clone(),
            None => format!(
                "{}-{}-q{}-seed{}",
                self.run.task, self.train.quantizer, self.train.levels, self.run.seed
            ),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out_dir).join(self.resolved_name())
    }

    fn core_schedule(&self, mode: ScheduleMode) -> ScheduleConfig {
        ScheduleConfig {
            mode,
            tau0: self.schedule.tau0,
            delta_tau: self.schedule.delta_tau,
            delta_t: self.schedule.delta_t,
            gamma: self.schedule.gamma,
            lambda1: self.schedule.lambda1,
            lambda2: self.schedule.lambda2,
            beta: self.schedule.beta,
            literal_staircase: self.schedule.literal,
        }
    }

    /// The core training config for one stage.
    pub fn stage_config(&self, stage: Stage) -> Result<TrainConfig> {
        let task = self.task()?;
        let (kind, mode) = self.quantizer()?;
        let cfg = match stage {
            Stage::FullPrecision => TrainConfig {
                task,
                quantizer: QuantizerKind::FullPrecision,
                levels: self.train.levels,
                epochs: self.train.epochs_fp,
                batch_size: self.train.batch_size,
                lr: self.train.lr,
                seed: self.run.seed,
                schedule: self.core_schedule(ScheduleMode::Ft),
                gumbel: self.core_gumbel(),
                berhu_c_frac: self.train.berhu_c_frac,
            },
            Stage::Qat => TrainConfig {
                task,
                quantizer: kind,
                levels: self.train.levels,
                epochs: self.train.epochs_qat,
                batch_size: self.train.batch_size,
                lr: self.train.lr_qat.unwrap_or(self.train.lr),
                seed: self.run.seed,
                schedule: self.core_schedule(mode),
                gumbel: self.core_gumbel(),
                berhu_c_frac: self.train.berhu_c_frac,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn core_gumbel(&self) -> GumbelSchedule {
        GumbelSchedule {
            temp0: self.gumbel.temp0,
            decay: self.gumbel.decay,
            floor: self.gumbel.floor,
        }
    }

    /// Structural validation beyond what the stage configs check.
    pub fn validate(&self) -> Result<()> {
        self.task()?;
        self.quantizer()?;
        self.model.geometry()?;
        match self.data.format.as_str() {
            "idx" => {
                for (name, p) in [
                    ("data.train_images", &self.data.train_images),
                    ("data.train_labels", &self.data.train_labels),
                    ("data.test_images", &self.data.test_images),
                    ("data.test_labels", &self.data.test_labels),
                ] {
                    if p.is_none() {
                        return Err(Error::Config(format!("{name} is required for IDX data")));
                    }
                }
            }
            "pgm" => {
                if self.data.dir.is_none() {
                    return Err(Error::Config("data.dir is required for PGM data".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown data format \"{other}\" (expected \"idx\" or \"pgm\")"
                )))
            }
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config(format!(
                "data.val_fraction must be in [0,1), got {}",
                self.data.val_fraction
            )));
        }
        Ok(())
    }
}
