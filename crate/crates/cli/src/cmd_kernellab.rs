//! `kernellab`: deterministic verification suites over the kernel bench,
//! exported as CSV with hard tolerance gates.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use specxai::data::report::Field;
use specxai::kernellab::{
    crossing_count, crossing_pair, gap_scaling, gaussian_psd, geometric_grid, laplace_psd,
    laplace_total_power, ntk_cutoff_experiment, psd_crossover, separated_pair,
    trajectory_gradient_spectrum, KernelFamily, KernelSpec,
};
use specxai::spectral::tail_slope;

use crate::support::{
    beta_label, ensure_out_dir, write_csv_artifact, write_run_config, CliError, CliResult, Global,
};

#[derive(Args, Debug)]
pub struct KernellabArgs {
    /// psd | ntk | trajectory | scaling
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// One gated measurement: passes when the value lands inside `[lo, hi]`.
struct Check {
    name: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
}

impl Check {
    fn new(name: &'static str, value: f64, lo: f64, hi: f64) -> Check {
        Check { name, value, lo, hi }
    }

    fn pass(&self) -> bool {
        self.value.is_finite() && self.value >= self.lo && self.value <= self.hi
    }
}

/// Writes the checks CSV, prints one line per check, and turns any failure
/// into a tolerance error after the artifacts are on disk.
fn finish(out: &Path, suite: &str, checks: &[Check], deterministic: bool) -> CliResult<()> {
    let rows: Vec<Vec<Field>> = checks
        .iter()
        .map(|c| {
            vec![
                Field::Text(c.name.into()),
                Field::Float(c.value),
                Field::Float(c.lo),
                Field::Float(c.hi),
                Field::Int(c.pass() as i64),
            ]
        })
        .collect();
    write_csv_artifact(
        &out.join(format!("{suite}-checks.csv")),
        &["check", "value", "lo", "hi", "pass"],
        &rows,
        deterministic,
    )?;
    let mut failed = 0;
    for c in checks {
        let verdict = if c.pass() { "pass" } else { "FAIL" };
        println!("{suite}: {:<38} {:>14.6e} in [{:.3e}, {:.3e}] {verdict}", c.name, c.value, c.lo, c.hi);
        failed += usize::from(!c.pass());
    }
    if failed > 0 {
        return Err(CliError::Tolerance(format!(
            "{failed} of {} checks failed in suite {suite}",
            checks.len()
        )));
    }
    println!("{suite}: all {} checks passed", checks.len());
    Ok(())
}

fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0.ln()).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in points {
        sxx += (x.ln() - mx) * (x.ln() - mx);
        sxy += (x.ln() - mx) * (y.ln() - my);
    }
    sxy / sxx
}

fn suite_psd(out: &Path, global: &Global) -> CliResult<()> {
    let curve_grid = geometric_grid(1e-2, 1e2, 81)?;
    let curve_rows: Vec<Vec<Field>> = curve_grid
        .iter()
        .map(|&omega| {
            Ok(vec![
                Field::Float(omega),
                Field::Float(laplace_psd(omega, 1.0)?),
                Field::Float(gaussian_psd(omega, 1.0)?),
            ])
        })
        .collect::<CliResult<_>>()?;
    write_csv_artifact(
        &out.join("psd-curves.csv"),
        &["omega", "laplace", "gaussian"],
        &curve_rows,
        global.deterministic,
    )?;

    let mut checks = Vec::new();
    for (name, b) in
        [("total_power_b_0.2", 0.2), ("total_power_b_1", 1.0), ("total_power_b_5", 5.0)]
    {
        checks.push(Check::new(name, laplace_total_power(b)?, 2.0 * PI - 1e-6, 2.0 * PI + 1e-6));
    }

    let tail_grid = geometric_grid(1e2, 1e4, 41)?;
    let tail_points: Vec<(f64, f64)> = tail_grid
        .iter()
        .map(|&omega| Ok((omega, laplace_psd(omega, 1.0)?)))
        .collect::<CliResult<_>>()?;
    checks.push(Check::new("laplace_tail_slope", log_log_slope(&tail_points), -2.05, -1.95));

    checks.push(Check::new("laplace_zero_frequency_b_0.7", laplace_psd(0.0, 0.7)?, 1.4 - 1e-12, 1.4 + 1e-12));
    checks.push(Check::new("laplace_unit_point", laplace_psd(1.0, 1.0)?, 1.0 - 1e-12, 1.0 + 1e-12));

    // The log of the Gaussian spectrum is exactly quadratic, so its second
    // difference at step h equals -(b*h)^2.
    let (b, omega0, h) = (1.3, 0.9, 0.37);
    let second_diff = gaussian_psd(omega0, b)?.ln() - 2.0 * gaussian_psd(omega0 + h, b)?.ln()
        + gaussian_psd(omega0 + 2.0 * h, b)?.ln();
    checks.push(Check::new(
        "gaussian_log_second_difference",
        second_diff + (b * h) * (b * h),
        -1e-9,
        1e-9,
    ));

    let cross = psd_crossover(1.0)?;
    checks.push(Check::new("crossover_b_1", cross, 2.0, 2.1));
    checks.push(Check::new(
        "crossover_ratio_residual",
        laplace_psd(cross, 1.0)? / gaussian_psd(cross, 1.0)? - 1.0,
        -1e-6,
        1e-6,
    ));

    finish(out, "psd", &checks, global.deterministic)
}

const NTK_BETAS: [f64; 4] = [0.9, 3.0, 7.0, f64::INFINITY];
const NTK_SEEDS: u64 = 10;

fn suite_ntk(out: &Path, global: &Global) -> CliResult<()> {
    let results: Vec<CliResult<Vec<usize>>> = (0..NTK_SEEDS)
        .into_par_iter()
        .map(|seed| Ok(ntk_cutoff_experiment(&NTK_BETAS, seed, 64, 256)?))
        .collect();
    let mut rows = Vec::new();
    let mut monotone = 0usize;
    for (seed, result) in results.into_iter().enumerate() {
        let cutoffs = result?;
        if cutoffs.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
        for (beta, cutoff) in NTK_BETAS.iter().zip(&cutoffs) {
            rows.push(vec![
                Field::Int(seed as i64),
                Field::Text(beta_label(*beta)),
                Field::Int(*cutoff as i64),
            ]);
        }
    }
    write_csv_artifact(
        &out.join("ntk-cutoffs.csv"),
        &["seed", "beta", "cutoff"],
        &rows,
        global.deterministic,
    )?;
    let checks = [Check::new(
        "cutoff_nondecreasing_seed_count",
        monotone as f64,
        8.0,
        NTK_SEEDS as f64,
    )];
    finish(out, "ntk", &checks, global.deterministic)
}

/// Fit band for trajectory spectra; sits below the curvature of the
/// sampled-jump spectrum near the fold.
const FIT_BAND: (f64, f64) = (0.04, 0.16);

fn suite_trajectory(out: &Path, global: &Global) -> CliResult<()> {
    let lap = KernelSpec::new(KernelFamily::Laplace, 1.0)?;
    let gau = KernelSpec::new(KernelFamily::Gaussian, 1.0)?;
    let lap_far = KernelSpec::new(KernelFamily::Laplace, 0.05)?;
    let gau_far = KernelSpec::new(KernelFamily::Gaussian, 0.3)?;
    let (xt1, xe1) = crossing_pair(256, 1)?;
    let (xt3, xe3) = crossing_pair(256, 3)?;
    let (xts, xes) = separated_pair(256)?;

    let cases = [
        ("laplace-single", &lap, &xt1, &xe1),
        ("laplace-triple", &lap, &xt3, &xe3),
        ("gaussian-single", &gau, &xt1, &xe1),
        ("laplace-separated", &lap_far, &xts, &xes),
        ("gaussian-separated", &gau_far, &xts, &xes),
    ];
    let mut rows = Vec::new();
    let mut spectra = Vec::new();
    for (name, kernel, xt, xe) in cases {
        let spectrum = trajectory_gradient_spectrum(kernel, xt, xe)?;
        for (&f, &p) in spectrum.freqs().iter().zip(spectrum.power()) {
            rows.push(vec![Field::Text(name.into()), Field::Float(f), Field::Float(p)]);
        }
        spectra.push(spectrum);
    }
    write_csv_artifact(
        &out.join("trajectory-spectra.csv"),
        &["case", "freq", "power"],
        &rows,
        global.deterministic,
    )?;

    let s_single = tail_slope(&spectra[0], FIT_BAND)?;
    let s_triple = tail_slope(&spectra[1], FIT_BAND)?;
    let checks = [
        Check::new("crossings_single", crossing_count(&xt1, &xe1)? as f64, 2.0, 2.0),
        Check::new("crossings_triple", crossing_count(&xt3, &xe3)? as f64, 6.0, 6.0),
        Check::new("crossings_separated", crossing_count(&xts, &xes)? as f64, 0.0, 0.0),
        Check::new("laplace_single_slope", s_single, -2.3, -1.7),
        Check::new("laplace_triple_slope", s_triple, -2.3, -1.7),
        Check::new("slope_crossing_sensitivity", (s_single - s_triple).abs(), 0.0, 0.3),
        Check::new(
            "gaussian_to_laplace_power_at_quarter",
            spectra[2].power()[64] / spectra[0].power()[64],
            0.0,
            1e-2,
        ),
        Check::new("laplace_separated_slope", tail_slope(&spectra[3], FIT_BAND)?, -1e9, -4.0),
        Check::new("gaussian_separated_slope", tail_slope(&spectra[4], FIT_BAND)?, -1e9, -4.0),
    ];
    finish(out, "trajectory", &checks, global.deterministic)
}

fn suite_scaling(out: &Path, global: &Global) -> CliResult<()> {
    let grid = geometric_grid(1e-2, 1e4, 25)?;
    let report = gap_scaling(&grid, (0.01, 1.0))?;
    let rows: Vec<Vec<Field>> = report
        .points
        .iter()
        .map(|&(b, gap)| vec![Field::Float(b), Field::Float(gap)])
        .collect();
    write_csv_artifact(
        &out.join("scaling-points.csv"),
        &["b", "delta_ef"],
        &rows,
        global.deterministic,
    )?;
    let checks = [
        Check::new("small_scale_slope", report.slope_small, 0.8, 1.2),
        Check::new("large_scale_slope", report.slope_large, -1.2, -0.8),
    ];
    finish(out, "scaling", &checks, global.deterministic)
}

pub fn run(args: &KernellabArgs, global: &Global) -> CliResult<()> {
    ensure_out_dir(&args.out)?;
    write_run_config(
        &args.out.join("run-config.txt"),
        global.deterministic,
        &[
            ("command", "kernellab".into()),
            ("suite", args.suite.clone()),
            ("out", args.out.display().to_string()),
            ("jobs", format!("{}", global.jobs)),
            ("deterministic", format!("{}", global.deterministic)),
        ],
    )?;
    match args.suite.as_str() {
        "psd" => suite_psd(&args.out, global),
        "ntk" => suite_ntk(&args.out, global),
        "trajectory" => suite_trajectory(&args.out, global),
        "scaling" => suite_scaling(&args.out, global),
        other => Err(CliError::Usage(format!(
            "unknown suite '{other}', expected psd, ntk, trajectory, or scaling"
        ))),
    }
}
