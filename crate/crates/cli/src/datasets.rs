//! Dataset assembly from a run config or evaluation flags.

use std::path::{Path, PathBuf};

use diffract_qat::data::{load_idx, load_image_dir, split, PhaseSample, SplitSpec};
use diffract_qat::error::{Error, Result};

use crate::config::Config;

/// The three partitions a training run works with. When the config carves no
/// validation split, the test set doubles as the validation set.
pub struct LoadedData {
    pub train: Vec<PhaseSample>,
    pub val: Vec<PhaseSample>,
    pub test: Vec<PhaseSample>,
}

fn truncate(mut set: Vec<PhaseSample>, limit: usize) -> Vec<PhaseSample> {
    if limit > 0 && set.len() > limit {
        set.truncate(limit);
    }
    set
}

pub fn load_for_training(cfg: &Config) -> Result<LoadedData> {
    match cfg.data.format.as_str() {
        "idx" => {
            let train_all = load_idx(
                cfg.data.train_images.as_ref().expect("validated"),
                cfg.data.train_labels.as_ref().expect("validated"),
            )?;
            let test = load_idx(
                cfg.data.test_images.as_ref().expect("validated"),
                cfg.data.test_labels.as_ref().expect("validated"),
            )?;
            let train_all = truncate(train_all, cfg.data.limit_train);
            let test = truncate(test, cfg.data.limit_test);
            if cfg.data.val_fraction > 0.0 {
                let sets = split(
                    train_all,
                    &SplitSpec {
                        train: 1.0 - cfg.data.val_fraction,
                        val: cfg.data.val_fraction,
                        test: 0.0,
                        seed: cfg.run.seed,
                    },
                )?;
                Ok(LoadedData {
                    train: sets.train,
                    val: sets.val,
                    test,
                })
            } else {
                Ok(LoadedData {
                    val: test.clone(),
                    train: train_all,
                    test,
                })
            }
        }
        "pgm" => {
            let dir = cfg.data.dir.as_ref().expect("validated");
            let target = if cfg.data.resize > 0 {
                cfg.data.resize
            } else {
                cfg.model.fov_size
            };
            let (all, skipped) = load_image_dir(dir, (target, target))?;
            if skipped > 0 {
                eprintln!(
                    "warning: skipped {skipped} non-PGM files in {}",
                    dir.display()
                );
            }
            let vf = cfg.data.val_fraction;
            let tf = cfg.data.test_fraction;
            if vf + tf >= 1.0 {
                return Err(Error::Config(format!(
                    "val_fraction + test_fraction must be < 1, got {vf} + {tf}"
                )));
            }
            let sets = split(
                all,
                &SplitSpec {
                    train: 1.0 - vf - tf,
                    val: vf,
                    test: tf,
                    seed: cfg.run.seed,
                },
            )?;
            let mut val = sets.val;
            if val.is_empty() {
                val = sets.test.clone();
            }
            Ok(LoadedData {
                train: truncate(sets.train, cfg.data.limit_train),
                val,
                test: truncate(sets.test, cfg.data.limit_test),
            })
        }
        other => Err(Error::Config(format!("unknown data format \"{other}\""))),
    }
}

/// Load a standalone dataset for `eval` / `export` from explicit flags.
pub fn load_eval_set(
    images: Option<&PathBuf>,
    labels: Option<&PathBuf>,
    dir: Option<&PathBuf>,
    resize: Option<usize>,
    default_size: usize,
) -> Result<Vec<PhaseSample>> {
    match (images, labels, dir) {
        (Some(im), Some(lb), None) => load_idx(im, lb),
        (None, None, Some(d)) => {
            let target = resize.unwrap_or(default_size);
            let (set, skipped) = load_image_dir(Path::new(d), (target, target))?;
            if skipped > 0 {
                eprintln!(
                    "warning: skipped {skipped} non-PGM files in {}",
                    d.display()
                );
            }
            Ok(set)
        }
        _ => Err(Error::Config(
            "provide either --images with --labels (IDX) or --dir (PGM)".into(),
        )),
    }
}
