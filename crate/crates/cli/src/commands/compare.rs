//! `compare`: merge the summaries of several completed runs into one table.

use clap::Args;
use std::path::PathBuf;
use std::process::ExitCode;

use diffract_qat::error::{Error, Result};

use crate::outputs::{compare_csv, Summary};

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories to merge (at least two completed ones).
    #[arg(required = true, num_args = 2..)]
    pub run_dirs: Vec<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &CompareArgs) -> Result<ExitCode> {
    let mut rows = Vec::new();
    for dir in &args.run_dirs {
        let summary_path = dir.join("summary.toml");
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        match Summary::read(&summary_path) {
            Ok(s) if s.completed => rows.push((name, s)),
            Ok(_) => eprintln!("warning: skipping {} (run not completed)", dir.display()),
            Err(e) => eprintln!("warning: skipping {} ({e})", dir.display()),
        }
    }
    if rows.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 completed runs to compare, found {}",
            rows.len()
        )));
    }
    let table = compare_csv(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, &table)?,
        None => print!("{table}"),
    }
    Ok(ExitCode::SUCCESS)
}
