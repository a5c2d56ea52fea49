//! `sweep`: the sharpness-versus-frequency grid. Trains one model per
//! `(beta, seed)` point, explains a held-out set with the raw gradient, and
//! reduces each point to one expected-frequency row.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use specxai::data::report::Field;
use specxai::explain::{explain_batch, ExplainOptions, Method};
use specxai::net::{he_init, save_model};
use specxai::spectral::{batch_ef, spearman};
use specxai::train::fit;

use crate::cmd_train::history_rows;
use crate::recipes::{self, Recipe};
use crate::support::{
    beta_label, ensure_out_dir, parse_beta_list, parse_seed_list, read_kv_file, seed_field,
    write_csv_artifact, write_run_config, CliResult, Global,
};

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Comma-separated sharpness values, `inf` allowed.
    #[arg(long)]
    pub betas: String,
    /// Comma-separated seeds; `a..b` ranges allowed.
    #[arg(long)]
    pub seeds: String,
    #[arg(long)]
    pub recipe: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy)]
struct PointData {
    ef: f64,
    epochs: usize,
    capped: bool,
    val_accuracy: f64,
}

/// A grid point is complete once its directory holds a parseable result
/// file that agrees with the point's coordinates.
fn read_cached(path: &Path, beta: f64, seed: u64) -> Option<PointData> {
    let mut ef = None;
    let mut epochs = None;
    let mut capped = None;
    let mut val_accuracy = None;
    let mut beta_ok = false;
    let mut seed_ok = false;
    for (key, value) in read_kv_file(path).ok()? {
        match key.as_str() {
            "beta" => beta_ok = value == beta_label(beta),
            "seed" => seed_ok = value.parse() == Ok(seed),
            "ef" => ef = value.parse().ok(),
            "epochs" => epochs = value.parse().ok(),
            "capped" => capped = value.parse().ok(),
            "val_accuracy" => val_accuracy = value.parse().ok(),
            _ => {}
        }
    }
    if !(beta_ok && seed_ok) {
        return None;
    }
    Some(PointData {
        ef: ef?,
        epochs: epochs?,
        capped: capped?,
        val_accuracy: val_accuracy?,
    })
}

fn run_point(
    recipe: &Recipe,
    beta: f64,
    seed: u64,
    dir: &Path,
    deterministic: bool,
) -> CliResult<PointData> {
    ensure_out_dir(dir)?;
    let cfg = recipe.model(beta);
    let params = he_init(&cfg, seed)?;
    let train = recipe.train_set(seed)?;
    let val = recipe.val_set(seed)?;
    let opts = recipe.train_options(recipe.cap, seed);
    let result = fit(&cfg, params, &train.images, &train.labels, &val.images, &val.labels, &opts)?;
    save_model(&dir.join("model.spxm"), &cfg, &result.params)?;
    write_csv_artifact(
        &dir.join("history.csv"),
        &["step", "train_loss", "val_accuracy"],
        &history_rows(&result.history),
        deterministic,
    )?;

    let eval = recipe.eval_set(seed, recipe.eval_n)?;
    let explain_opts = ExplainOptions { method: Method::Vanilla, seed, ..Default::default() };
    let maps = explain_batch(&cfg, &result.params, &eval.images, &explain_opts)?;
    let last = result.history.last().expect("at least one epoch");
    let point = PointData {
        ef: batch_ef(&maps)?,
        epochs: last.step,
        capped: result.capped,
        val_accuracy: last.val_accuracy,
    };

    // Floats are stored in shortest round-trip form so a resumed sweep
    // reproduces the fresh run's CSV bytes exactly.
    let result_path = dir.join("result.txt");
    std::fs::write(
        &result_path,
        format!(
            "beta = {}\nseed = {}\nef = {}\nepochs = {}\ncapped = {}\nval_accuracy = {}\n",
            beta_label(beta),
            seed,
            point.ef,
            point.epochs,
            point.capped,
            point.val_accuracy
        ),
    )
    .map_err(|e| {
        crate::support::CliError::Data(format!("cannot write {}: {e}", result_path.display()))
    })?;
    Ok(point)
}

pub fn run(args: &SweepArgs, global: &Global) -> CliResult<()> {
    let betas = parse_beta_list(&args.betas)?;
    let seeds = parse_seed_list(&args.seeds)?;
    let recipe = recipes::named(&args.recipe)?;
    ensure_out_dir(&args.out)?;
    write_run_config(
        &args.out.join("run-config.txt"),
        global.deterministic,
        &[
            ("command", "sweep".into()),
            ("recipe", recipe.name.into()),
            ("betas", betas.iter().map(|&b| beta_label(b)).collect::<Vec<_>>().join(",")),
            ("seeds", seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")),
            ("cap", format!("{}", recipe.cap)),
            ("eval_n", format!("{}", recipe.eval_n)),
            ("out", args.out.display().to_string()),
            ("jobs", format!("{}", global.jobs)),
            ("deterministic", format!("{}", global.deterministic)),
        ],
    )?;

    let grid: Vec<(f64, u64)> =
        betas.iter().flat_map(|&b| seeds.iter().map(move |&s| (b, s))).collect();
    let outcomes: Vec<CliResult<(PointData, bool)>> = grid
        .par_iter()
        .map(|&(beta, seed)| {
            let dir = args.out.join(format!("beta-{}-seed-{}", beta_label(beta), seed));
            if let Some(cached) = read_cached(&dir.join("result.txt"), beta, seed) {
                return Ok((cached, true));
            }
            let point = run_point(&recipe, beta, seed, &dir, global.deterministic)?;
            println!(
                "sweep point beta={} seed={}: ef {:.6} after {} epochs",
                beta_label(beta),
                seed,
                point.ef,
                point.epochs
            );
            Ok((point, false))
        })
        .collect();

    let mut points = Vec::with_capacity(grid.len());
    let mut reused = 0usize;
    for (&(beta, seed), outcome) in grid.iter().zip(outcomes) {
        let (data, cached) = outcome?;
        reused += usize::from(cached);
        points.push((beta, seed, data));
    }
    if reused > 0 {
        println!("reused {reused} of {} completed grid points", grid.len());
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let rows: Vec<Vec<Field>> = points
        .iter()
        .map(|&(beta, seed, d)| {
            vec![
                Field::Text(beta_label(beta)),
                seed_field(seed),
                Field::Float(d.ef),
                Field::Int(d.epochs as i64),
                Field::Int(d.capped as i64),
                Field::Float(d.val_accuracy),
            ]
        })
        .collect();
    write_csv_artifact(
        &args.out.join("sweep.csv"),
        &["beta", "seed", "ef", "epochs", "capped", "val_accuracy"],
        &rows,
        global.deterministic,
    )?;

    let mut distinct: Vec<f64> = betas.clone();
    distinct.sort_by(f64::total_cmp);
    let ranks: Vec<f64> = points
        .iter()
        .map(|&(beta, _, _)| distinct.iter().position(|&b| b == beta).unwrap_or(0) as f64)
        .collect();
    let efs: Vec<f64> = points.iter().map(|&(_, _, d)| d.ef).collect();
    let trend = if distinct.len() > 1 { spearman(&ranks, &efs).ok() } else { None };
    let trend_field = match trend {
        Some(rho) => Field::Float(rho),
        None => Field::Text("undefined".into()),
    };
    write_csv_artifact(
        &args.out.join("sweep-summary.csv"),
        &["n_points", "n_betas", "spearman_beta_rank_vs_ef"],
        &[vec![Field::Int(points.len() as i64), Field::Int(distinct.len() as i64), trend_field]],
        global.deterministic,
    )?;
    match trend {
        Some(rho) => println!(
            "sweep complete: {} points, spearman(beta rank, ef) = {rho:.4}",
            points.len()
        ),
        None => println!(
            "sweep complete: {} points, beta-trend statistic needs at least two sharpness values",
            points.len()
        ),
    }
    Ok(())
}
