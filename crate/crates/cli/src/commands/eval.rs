//! `eval`: hard-quantized evaluation of a checkpoint on a dataset, with
//! per-task diagnostic tables.

use clap::Args;
use ndarray::Array2;
use std::path::PathBuf;
use std::process::ExitCode;

use diffract_qat::data::{pad_to_shape, PhaseSample};
use diffract_qat::error::{Error, Result};
use diffract_qat::formats::{network_from_checkpoint, read_checkpoint};
use diffract_qat::network::DiffractiveNetwork;
use diffract_qat::objectives::{bins_to_curve, classify, patch_layout, phase_error_bins, ssim};
use diffract_qat::training::{EvalMetrics, Task};

use crate::config::parse_task;
use crate::manifest::CheckpointMeta;
use crate::outputs::{confusion_csv, eval_metrics_csv, phase_error_curve_csv};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Task the metrics belong to (classification|qpi).
    #[arg(long)]
    pub task: String,
    /// IDX image file (paired with --labels).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX label file (paired with --images).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of PGM images (alternative to --images/--labels).
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Resize target for PGM inputs (defaults to the checkpoint's field of
    /// view).
    #[arg(long)]
    pub resize: Option<usize>,
    /// Directory the metric CSVs are written into.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Number of ground-truth-phase bins for the phase error curve.
    #[arg(long, default_value_t = 32)]
    pub bins: usize,
}

/// Pad a sample onto the field of view, rejecting oversized inputs as a
/// geometry mismatch rather than a generic shape error.
pub fn to_fov(sample: &PhaseSample, net: &DiffractiveNetwork) -> Result<Array2<f64>> {
    let geom = net.geometry();
    let (h, w) = sample.image.dim();
    if h > geom.fov_h || w > geom.fov_w {
        return Err(Error::GeometryMismatch(format!(
            "sample {} is {h}x{w} but the checkpoint's field of view is {}x{}",
            sample.id, geom.fov_h, geom.fov_w
        )));
    }
    if (h, w) == (geom.fov_h, geom.fov_w) {
        Ok(sample.image.clone())
    } else {
        pad_to_shape(&sample.image, geom.fov_h, geom.fov_w)
    }
}

pub struct EvalOutcome {
    pub metrics: EvalMetrics,
    pub confusion: Option<[[usize; 10]; 10]>,
    pub curve: Option<Vec<(f64, f64)>>,
}

/// Evaluate every sample once, producing the task metrics plus the
/// task-specific diagnostic table.
pub fn evaluate_with_diagnostics(
    net: &DiffractiveNetwork,
    dataset: &[PhaseSample],
    task: Task,
    bins: usize,
) -> Result<EvalOutcome> {
    if dataset.is_empty() {
        return Err(Error::InvalidParam(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    match task {
        Task::Classification => {
            let layout = patch_layout(net.geometry().fov_h, net.geometry().fov_w)?;
            let mut matrix = [[0usize; 10]; 10];
            for sample in dataset {
                let label = sample.label.ok_or_else(|| {
                    Error::Config(format!(
                        "sample {} has no label for classification",
                        sample.id
                    ))
                })? as usize;
                if label > 9 {
                    return Err(Error::Config(format!(
                        "sample {} label {label} outside 0..=9",
                        sample.id
                    )));
                }
                let intensity = net.evaluate(&to_fov(sample, net)?)?;
                let pred = classify(&intensity, &layout);
                matrix[label][pred] += 1;
            }
            let hits: usize = (0..10).map(|c| matrix[c][c]).sum();
            Ok(EvalOutcome {
                metrics: EvalMetrics {
                    accuracy: Some(hits as f64 / dataset.len() as f64),
                    ssim: None,
                    l1: None,
                },
                confusion: Some(matrix),
                curve: None,
            })
        }
        Task::Qpi => {
            let mut ssim_sum = 0.0;
            let mut l1_sum = 0.0;
            let mut sums = vec![0.0; bins];
            let mut counts = vec![0usize; bins];
            for sample in dataset {
                let target = to_fov(sample, net)?;
                let intensity = net.evaluate(&target)?;
                ssim_sum += ssim(&intensity, &target, 1.0)?;
                l1_sum += intensity
                    .iter()
                    .zip(target.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / intensity.len() as f64;
                let gt_phase = target.mapv(|v| std::f64::consts::PI * v);
                phase_error_bins(&intensity, &gt_phase, bins, &mut sums, &mut counts)?;
            }
            let n = dataset.len() as f64;
            Ok(EvalOutcome {
                metrics: EvalMetrics {
                    accuracy: None,
                    ssim: Some(ssim_sum / n),
                    l1: Some(l1_sum / n),
                },
                confusion: None,
                curve: Some(bins_to_curve(&sums, &counts)),
            })
        }
    }
}

pub fn run(args: &EvalArgs) -> Result<ExitCode> {
    let task = parse_task(&args.task)?;
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let lt_gamma = CheckpointMeta::read_for(&args.checkpoint)?.and_then(|m| m.lt_gamma());
    let net = network_from_checkpoint(&ckpt, lt_gamma)?;
    let dataset = crate::datasets::load_eval_set(
        args.images.as_ref(),
        args.labels.as_ref(),
        args.dir.as_ref(),
        args.resize,
        net.geometry().fov_h,
    )?;

    let outcome = evaluate_with_diagnostics(&net, &dataset, task, args.bins)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let metrics_csv = eval_metrics_csv(&outcome.metrics);
    print!("{metrics_csv}");
    std::fs::write(args.out_dir.join("eval_metrics.csv"), &metrics_csv)?;
    if let Some(matrix) = &outcome.confusion {
        std::fs::write(args.out_dir.join("confusion.csv"), confusion_csv(matrix))?;
    }
    if let Some(curve) = &outcome.curve {
        std::fs::write(
            args.out_dir.join("phase_error_curve.csv"),
            phase_error_curve_csv(curve),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}
