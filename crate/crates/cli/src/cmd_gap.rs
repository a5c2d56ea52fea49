//! `gap`: frequency-gap report of explanation directories against a
//! gradient baseline directory, one summary row per directory.
//!
//! Constant maps carry no spectral content and are excluded from each
//! directory's batch statistic; `n_images` counts the maps actually scored.

use std::path::{Path, PathBuf};

use clap::Args;
use specxai::explain::Method;
use specxai::spectral::{batch_ef, EfReport};
use specxai::Tensor;

use crate::cmd_ef::{report_row, REPORT_HEADER};
use crate::support::{
    drop_constant_maps, ensure_parent_dir, load_smap_dir, write_csv_artifact, write_run_config,
    CliError, CliResult, Global,
};

#[derive(Args, Debug)]
pub struct GapArgs {
    /// Baseline map directory.
    #[arg(long)]
    pub vanilla: PathBuf,
    /// Comparison map directory; repeat for a multi-method table.
    #[arg(long, required = true)]
    pub method: Vec<PathBuf>,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Mean EF of a map directory, which must hold exactly one method; also
/// reports how many constant maps were set aside.
fn dir_ef(dir: &Path) -> CliResult<(Method, f64, usize, usize)> {
    let maps = load_smap_dir(dir)?;
    let method = maps[0].method;
    if let Some(bad) = maps.iter().find(|m| m.method != method) {
        return Err(CliError::Data(format!(
            "{}: mixes {} and {} maps",
            dir.display(),
            method.name(),
            bad.method.name()
        )));
    }
    let mut batch: Vec<Tensor> = maps.iter().map(|m| m.map.clone()).collect();
    let dropped = drop_constant_maps(&mut batch);
    if batch.is_empty() {
        return Err(CliError::Data(format!(
            "{}: all {dropped} maps are constant, EF is undefined",
            dir.display()
        )));
    }
    Ok((method, batch_ef(&batch)?, batch.len(), dropped))
}

pub fn run(args: &GapArgs, global: &Global) -> CliResult<()> {
    let (base_method, base_ef, base_n, base_dropped) = dir_ef(&args.vanilla)?;
    let mut reports = vec![EfReport::new(base_method.name(), base_ef, base_ef, base_n)?];
    let mut notes = Vec::new();
    if base_dropped > 0 {
        notes.push((base_method, base_dropped));
    }
    for dir in &args.method {
        let (method, ef, n, dropped) = dir_ef(dir)?;
        reports.push(EfReport::new(method.name(), base_ef, ef, n)?);
        if dropped > 0 {
            notes.push((method, dropped));
        }
    }
    let rows: Vec<_> = reports.iter().map(report_row).collect();
    ensure_parent_dir(&args.out)?;
    write_run_config(
        &args.out.with_extension("run-config.txt"),
        global.deterministic,
        &[
            ("command", "gap".into()),
            ("vanilla", args.vanilla.display().to_string()),
            (
                "method",
                args.method
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("out", args.out.display().to_string()),
            ("jobs", format!("{}", global.jobs)),
            ("deterministic", format!("{}", global.deterministic)),
        ],
    )?;
    write_csv_artifact(&args.out, &REPORT_HEADER, &rows, global.deterministic)?;
    for r in &reports {
        println!(
            "{:<10} n={:<4} ef {:.6} delta_ef {:.6}",
            r.method, r.n_images, r.ef_method, r.delta_ef
        );
    }
    for (method, dropped) in notes {
        println!("{}: {dropped} constant maps dropped", method.name());
    }
    Ok(())
}
