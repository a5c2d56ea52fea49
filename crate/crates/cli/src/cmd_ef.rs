//! `ef`: expected-frequency report for a directory of saliency maps.
//!
//! Constant maps carry no spectral content and are excluded from the batch
//! statistic; `n_images` counts the maps actually scored.

use std::path::PathBuf;

use clap::Args;
use specxai::data::report::Field;
use specxai::explain::Method;
use specxai::spectral::{batch_ef, EfReport};
use specxai::Tensor;

use crate::support::{
    drop_constant_maps, ensure_parent_dir, load_smap_dir, write_csv_artifact, write_run_config,
    CliError, CliResult, Global, LoadedMap,
};

#[derive(Args, Debug)]
pub struct EfArgs {
    /// Directory of .smap files.
    #[arg(long)]
    pub maps: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

pub const REPORT_HEADER: [&str; 5] = ["method", "n_images", "ef_vanilla", "ef_method", "delta_ef"];

pub fn report_row(r: &EfReport) -> Vec<Field> {
    vec![
        Field::Text(r.method.clone()),
        Field::Int(r.n_images as i64),
        Field::Float(r.ef_vanilla),
        Field::Float(r.ef_method),
        Field::Float(r.delta_ef),
    ]
}

/// Batch EF per method present in the directory, in method-id order, with
/// the count of scored maps and of constant maps set aside.
fn per_method_efs(maps: &[LoadedMap]) -> CliResult<Vec<(Method, f64, usize, usize)>> {
    let mut methods: Vec<Method> = Vec::new();
    for m in maps {
        if !methods.contains(&m.method) {
            methods.push(m.method);
        }
    }
    methods.sort_by_key(|m| m.id());
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let mut batch: Vec<Tensor> =
            maps.iter().filter(|m| m.method == method).map(|m| m.map.clone()).collect();
        let dropped = drop_constant_maps(&mut batch);
        if batch.is_empty() {
            return Err(CliError::Data(format!(
                "all {dropped} {} maps are constant, EF is undefined",
                method.name()
            )));
        }
        out.push((method, batch_ef(&batch)?, batch.len(), dropped));
    }
    Ok(out)
}

pub fn run(args: &EfArgs, global: &Global) -> CliResult<()> {
    let maps = load_smap_dir(&args.maps)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (method, ef, n, dropped) in per_method_efs(&maps)? {
        // A bare EF report has no external baseline, so each method is its
        // own reference and the gap column is identically zero.
        let report = EfReport::new(method.name(), ef, ef, n)?;
        let note =
            if dropped > 0 { format!(", {dropped} constant dropped") } else { String::new() };
        summary.push(format!("{} ef {:.6} ({} maps{note})", report.method, report.ef_method, n));
        rows.push(report_row(&report));
    }
    ensure_parent_dir(&args.out)?;
    write_run_config(
        &args.out.with_extension("run-config.txt"),
        global.deterministic,
        &[
            ("command", "ef".into()),
            ("maps", args.maps.display().to_string()),
            ("out", args.out.display().to_string()),
            ("jobs", format!("{}", global.jobs)),
            ("deterministic", format!("{}", global.deterministic)),
        ],
    )?;
    write_csv_artifact(&args.out, &REPORT_HEADER, &rows, global.deterministic)?;
    for line in summary {
        println!("{line}");
    }
    Ok(())
}
