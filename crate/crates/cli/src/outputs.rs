//! CSV and summary artifacts. All floating-point values are printed with 17
//! significant digits (`{:.16e}`) so files replay bit-exactly; cells whose
//! value does not exist are left empty rather than zeroed.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;

use diffract_qat::error::{Error, Result};
use diffract_qat::training::{EpochRecord, EvalMetrics, Task};

/// Replay-exact float formatting: 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// The header of a run's metrics CSV; the final column is the task's
/// validation metric.
pub fn metrics_header(task: Task) -> &'static str {
    match task {
        Task::Classification => "stage,epoch,split,loss,task_loss,regularizer,accuracy",
        Task::Qpi => "stage,epoch,split,loss,task_loss,regularizer,ssim",
    }
}

/// Append-mode writer for a run's per-epoch metrics.
pub struct MetricsCsv {
    file: std::fs::File,
}

impl MetricsCsv {
    /// Create the file with its header, or open an existing one for append.
    pub fn open(path: &Path, task: Task) -> Result<Self> {
        let fresh = !path.exists();
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{}", metrics_header(task))?;
        }
        Ok(Self { file })
    }

    /// Two rows per epoch: the training losses and the validation metric.
    pub fn append_epoch(&mut self, stage: &str, rec: &EpochRecord) -> Result<()> {
        writeln!(
            self.file,
            "{stage},{},train,{},{},{},",
            rec.epoch,
            fmt_float(rec.train_loss),
            fmt_float(rec.task_loss),
            fmt_float(rec.regularizer),
        )?;
        writeln!(
            self.file,
            "{stage},{},val,,,,{}",
            rec.epoch,
            fmt_float(rec.val_metric),
        )?;
        Ok(())
    }
}

/// `metric,value` rows for an evaluation pass.
pub fn eval_metrics_csv(metrics: &EvalMetrics) -> String {
    let mut out = String::from("metric,value\n");
    if let Some(a) = metrics.accuracy {
        let _ = writeln!(out, "accuracy,{}", fmt_float(a));
    }
    if let Some(s) = metrics.ssim {
        let _ = writeln!(out, "ssim,{}", fmt_float(s));
    }
    if let Some(l) = metrics.l1 {
        let _ = writeln!(out, "l1,{}", fmt_float(l));
    }
    out
}

/// 10x10 confusion matrix: row = true class, column = predicted class.
pub fn confusion_csv(matrix: &[[usize; 10]; 10]) -> String {
    let mut out = String::from("label,p0,p1,p2,p3,p4,p5,p6,p7,p8,p9\n");
    for (label, row) in matrix.iter().enumerate() {
        let _ = write!(out, "{label}");
        for count in row {
            let _ = write!(out, ",{count}");
        }
        out.push('\n');
    }
    out
}

/// Mean absolute phase error per ground-truth-phase bin; empty bins are
/// omitted entirely.
pub fn phase_error_curve_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("bin_center,mean_abs_error\n");
    for (center, err) in curve {
        let _ = writeln!(out, "{},{}", fmt_float(*center), fmt_float(*err));
    }
    out
}

/// Completion marker and final scores of a run, written when training ends.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub completed: bool,
    pub task: String,
    pub method: String,
    pub levels: u32,
    pub seed: u64,
    pub fp_best_epoch: Option<usize>,
    pub qat_best_epoch: Option<usize>,
    pub metrics: SummaryMetrics,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct SummaryMetrics {
    pub accuracy: Option<f64>,
    pub ssim: Option<f64>,
    pub l1: Option<f64>,
}

impl From<EvalMetrics> for SummaryMetrics {
    fn from(m: EvalMetrics) -> Self {
        Self {
            accuracy: m.accuracy,
            ssim: m.ssim,
            l1: m.l1,
        }
    }
}

impl Summary {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize summary: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::Format(format!("invalid summary {}: {e}", path.display())))
    }
}

/// Fixed column order of the comparison table.
pub const COMPARE_HEADER: &str = "run,task,method,levels,seed,accuracy,ssim,l1";

/// One comparison row per completed run; missing metrics stay empty.
pub fn compare_csv(rows: &[(String, Summary)]) -> String {
    let mut sorted: Vec<&(String, Summary)> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.1.task, &a.1.method, a.1.levels, &a.0).cmp(&(&b.1.task, &b.1.method, b.1.levels, &b.0))
    });
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (name, s) in sorted {
        let cell = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{},{}",
            s.task,
            s.method,
            s.levels,
            s.seed,
            cell(s.metrics.accuracy),
            cell(s.metrics.ssim),
            cell(s.metrics.l1),
        );
    }
    out
}
