//! `export`: dump phase surfaces, weight histograms, per-layer temperatures,
//! or the detector-plane field for one sample.

use clap::Args;
use ndarray::Array2;
use num_complex::Complex64;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use diffract_qat::error::{Error, Result};
use diffract_qat::formats::{
    network_from_checkpoint, read_checkpoint, write_field_dump, TAG_FULL_PRECISION,
};
use diffract_qat::quantizers::QuantizerSpec;
use diffract_qat::training::wrap_phase;

use crate::commands::eval::to_fov;
use crate::manifest::CheckpointMeta;
use crate::outputs::fmt_float;

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Model checkpoint to export from.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// What to export: "phase-maps" or "field".
    #[arg(long)]
    pub what: String,
    /// Directory the exports are written into.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// IDX image file (field export input, paired with --labels).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// IDX label file (field export input, paired with --images).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory of PGM images (field export input).
    #[arg(long)]
    pub dir: Option<PathBuf>,
    /// Resize target for PGM inputs.
    #[arg(long)]
    pub resize: Option<usize>,
    /// Which dataset sample drives the field export.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Number of histogram bins for raw (unquantized) phase values.
    #[arg(long, default_value_t = 32)]
    pub raw_bins: usize,
}

/// Wrap a real phase grid in the complex field container (imaginary part 0).
fn phase_as_field(phases: &Array2<f64>) -> Array2<Complex64> {
    phases.mapv(|p| Complex64::new(p, 0.0))
}

fn export_phase_maps(args: &ExportArgs) -> Result<()> {
    let ckpt = read_checkpoint(&args.checkpoint)?;
    let lt_gamma = CheckpointMeta::read_for(&args.checkpoint)?.and_then(|m| m.lt_gamma());
    let net = network_from_checkpoint(&ckpt, lt_gamma)?;
    let geom = *net.geometry();
    std::fs::create_dir_all(&args.out_dir)?;

    let mut histograms = String::from("layer,kind,bin,value,count\n");
    let mut temperatures = String::from("layer,tau\n");
    let taus = net.temperatures();

    for (layer, tau) in taus.iter().enumerate() {
        let raw = net.phases()[layer].clone();
        let hard = net.effective_eval_phase(layer);
        write_field_dump(
            &args.out_dir.join(format!("layer{layer:02}_raw.cfld")),
            &phase_as_field(&raw),
            geom.pitch,
            geom.wavelength,
        )?;
        write_field_dump(
            &args.out_dir.join(format!("layer{layer:02}_hard.cfld")),
            &phase_as_field(&hard),
            geom.pitch,
            geom.wavelength,
        )?;

        // Level-occupancy histogram for quantized layers: one bin per level,
        // counted by exact value match against the hard surface.
        let rec = &ckpt.layers[layer];
        if rec.tag != TAG_FULL_PRECISION {
            let spec = QuantizerSpec::new(rec.lower, rec.upper, rec.levels)?;
            for i in 0..spec.levels {
                let level = spec.level(i);
                let count = hard
                    .iter()
                    .filter(|v| v.to_bits() == level.to_bits())
                    .count();
                let _ = writeln!(histograms, "{layer},level,{i},{},{count}", fmt_float(level));
            }
        }
        // Raw-phase histogram over [0, 2pi).
        let bins = args.raw_bins.max(1);
        let width = 2.0 * std::f64::consts::PI / bins as f64;
        let mut counts = vec![0usize; bins];
        for &p in raw.iter() {
            let idx = ((wrap_phase(p) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        for (i, count) in counts.iter().enumerate() {
            let center = (i as f64 + 0.5) * width;
            let _ = writeln!(histograms, "{layer},raw,{i},{},{count}", fmt_float(center));
        }

        // Temperature, where the layer has one.
        match tau {
            Some(tau) => {
                let _ = writeln!(temperatures, "{layer},{}", fmt_float(*tau));
            }
            None => {
                let _ = writeln!(temperatures, "{layer},");
            }
        }
    }
    std::fs::write(args.out_dir.join("histograms.csv"), histograms)?;
    std::fs::write(args.out_dir.join("temperatures.csv"), temperatures)?;
    Ok(())
}

fn export_field(args: &ExportArgs) -> Result<()> {
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
    let sample = dataset.get(args.index).ok_or_else(|| {
        Error::InvalidParam(format!(
            "sample index {} out of range (dataset has {} samples)",
            args.index,
            dataset.len()
        ))
    })?;
    let field = net.output_field(&to_fov(sample, &net)?)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let geom = net.geometry();
    write_field_dump(
        &args.out_dir.join(format!("field_{:04}.cfld", args.index)),
        &field,
        geom.pitch,
        geom.wavelength,
    )?;
    Ok(())
}

pub fn run(args: &ExportArgs) -> Result<ExitCode> {
    match args.what.as_str() {
        "phase-maps" => export_phase_maps(args)?,
        "field" => export_field(args)?,
        other => {
            return Err(Error::Config(format!(
                "unknown export target \"{other}\" (expected \"phase-maps\" or \"field\")"
            )))
        }
    }
    Ok(ExitCode::SUCCESS)
}
