//! `train`: run the two-stage protocol end to end and emit every
//! reproducibility artifact into the run directory.

use clap::Args;
use std::path::PathBuf;
use std::process::ExitCode;

use diffract_qat::error::{Error, Result};
use diffract_qat::formats::{network_from_checkpoint, read_checkpoint, write_checkpoint};
use diffract_qat::network::{DiffractiveNetwork, LayerQuantizer};
use diffract_qat::training::{
    evaluate_hard, train_full_precision, train_qat, uniform_phase_init, QuantizerKind, Task,
    TrainReport,
};

use crate::config::{Config, Overrides, Stage};
use crate::datasets::load_for_training;
use crate::manifest::{CheckpointMeta, RunManifest};
use crate::outputs::{fmt_float, MetricsCsv, Summary};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Continue an existing run directory from its last stage checkpoint.
    /// The optimizer state is not checkpointed, so a resumed stage restarts
    /// that stage's optimization from the stored weights.
    #[arg(long)]
    pub resume: bool,
    /// Override the run name (and so the run directory).
    #[arg(long)]
    pub name: Option<String>,
    /// Override the parent directory that run directories live in.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the task (classification|qpi).
    #[arg(long)]
    pub task: Option<String>,
    /// Override the quantizer (fp|hard|ste|gs|dsq|psq-ft|psq-li|psq-lt).
    #[arg(long)]
    pub quantizer: Option<String>,
    /// Override the number of quantization levels.
    #[arg(long)]
    pub levels: Option<u32>,
    /// Use the staircase temperature schedule's literal printed form.
    #[arg(long)]
    pub schedule_literal: bool,
    /// Override the number of full-precision epochs.
    #[arg(long)]
    pub epochs_fp: Option<usize>,
    /// Override the number of quantization-aware epochs.
    #[arg(long)]
    pub epochs_qat: Option<usize>,
    /// Override the batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Override the quantization-aware stage's learning rate.
    #[arg(long)]
    pub lr_qat: Option<f64>,
}

impl TrainArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            name: self.name.clone(),
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            task: self.task.clone(),
            quantizer: self.quantizer.clone(),
            levels: self.levels,
            schedule_literal: self.schedule_literal,
            epochs_fp: self.epochs_fp,
            epochs_qat: self.epochs_qat,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_qat: self.lr_qat,
        }
    }
}

fn log_stage(metrics: &mut MetricsCsv, stage: &str, report: &TrainReport) -> Result<()> {
    for rec in &report.epochs {
        metrics.append_epoch(stage, rec)?;
        eprintln!(
            "[{stage}] epoch {:>3}  train_loss {:.6}  val {:.6}",
            rec.epoch, rec.train_loss, rec.val_metric
        );
    }
    Ok(())
}

fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "accuracy",
        Task::Qpi => "ssim",
    }
}

pub fn run(args: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = Config::load(&args.config)?;
    cfg.apply_overrides(&args.overrides());
    cfg.validate()?;
    let task = cfg.task()?;
    let (kind, _) = cfg.quantizer()?;
    let geom = cfg.model.geometry()?;

    let data = load_for_training(&cfg)?;
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::Config(
            "training needs non-empty train, validation, and test sets".into(),
        ));
    }
    eprintln!(
        "dataset: {} train / {} val / {} test samples",
        data.train.len(),
        data.val.len(),
        data.test.len()
    );

    let run_dir = cfg.run_dir();
    if run_dir.exists() && !args.resume {
        return Err(Error::Config(format!(
            "run directory {} already exists; pass --resume to continue it or pick a new name",
            run_dir.display()
        )));
    }
    let ckpt_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    std::fs::create_dir_all(run_dir.join("exports"))?;
    let manifest_path = run_dir.join("manifest.toml");
    let fp_ckpt = ckpt_dir.join("fp_best.d2nn");
    let qat_ckpt = ckpt_dir.join("qat_best.d2nn");
    let final_ckpt = ckpt_dir.join("final.d2nn");
    let summary_path = run_dir.join("summary.toml");

    // The manifest is written before any training starts; a resumed run must
    // resolve to the exact same manifest.
    let manifest = RunManifest::build(&cfg)?;
    if manifest_path.exists() {
        let existing = RunManifest::read(&manifest_path)?;
        if existing != manifest {
            return Err(Error::Config(format!(
                "{} does not match the resolved configuration; refusing to resume a different run",
                manifest_path.display()
            )));
        }
    } else {
        manifest.write(&manifest_path)?;
    }

    if args.resume && summary_path.exists() {
        println!("run {} is already complete", run_dir.display());
        return Ok(ExitCode::SUCCESS);
    }

    let mut metrics = MetricsCsv::open(&run_dir.join("metrics.csv"), task)?;

    // Full-precision stage (or its checkpoint, when resuming past it).
    let (mut net, fp_best) = if args.resume && fp_ckpt.exists() {
        eprintln!(
            "resume: reusing full-precision checkpoint {}",
            fp_ckpt.display()
        );
        let best = CheckpointMeta::read_for(&fp_ckpt)?.and_then(|m| m.best_epoch);
        let net = network_from_checkpoint(&read_checkpoint(&fp_ckpt)?, None)?;
        if net.geometry() != &geom {
            return Err(Error::GeometryMismatch(format!(
                "checkpoint {} was trained with a different geometry",
                fp_ckpt.display()
            )));
        }
        (net, best)
    } else {
        let fp_cfg = cfg.stage_config(Stage::FullPrecision)?;
        let mut net = DiffractiveNetwork::with_uniform_quantizer(
            geom,
            uniform_phase_init(&geom, cfg.run.seed),
            LayerQuantizer::FullPrecision,
        )?;
        let out = train_full_precision(&fp_cfg, &mut net, &data.train, &data.val)?;
        log_stage(&mut metrics, Stage::FullPrecision.label(), &out.report)?;
        write_checkpoint(&fp_ckpt, &net)?;
        CheckpointMeta::for_stage(&cfg, Stage::FullPrecision.label(), out.best_epoch)
            .write_for(&fp_ckpt)?;
        (net, out.best_epoch)
    };

    // Quantization-aware stage. A full-precision run stops after stage one.
    let mut qat_best = None;
    let final_stage = if kind == QuantizerKind::FullPrecision {
        Stage::FullPrecision
    } else {
        let qat_cfg = cfg.stage_config(Stage::Qat)?;
        let out = train_qat(&qat_cfg, &mut net, &data.train, &data.val)?;
        log_stage(&mut metrics, Stage::Qat.label(), &out.report)?;
        write_checkpoint(&qat_ckpt, &net)?;
        CheckpointMeta::for_stage(&cfg, Stage::Qat.label(), out.best_epoch).write_for(&qat_ckpt)?;
        qat_best = out.best_epoch;
        Stage::Qat
    };
    write_checkpoint(&final_ckpt, &net)?;
    let final_best = if final_stage == Stage::FullPrecision {
        fp_best
    } else {
        qat_best
    };
    CheckpointMeta::for_stage(&cfg, final_stage.label(), final_best).write_for(&final_ckpt)?;

    let final_metrics = evaluate_hard(&net, &data.test, task)?;
    Summary {
        completed: true,
        task: cfg.run.task.clone(),
        method: cfg.train.quantizer.clone(),
        levels: cfg.train.levels,
        seed: cfg.run.seed,
        fp_best_epoch: fp_best,
        qat_best_epoch: qat_best,
        metrics: final_metrics.into(),
    }
    .write(&summary_path)?;
    println!(
        "{}: test {} = {}",
        cfg.resolved_name(),
        metric_name(task),
        fmt_float(final_metrics.primary())
    );
    Ok(ExitCode::SUCCESS)
}
