//! Shared plumbing: exit-coded errors, flag parsing, and artifact writers.

use std::fmt;
use std::path::{Path, PathBuf};

use specxai::data::report::{render_csv, Field};
use specxai::data::smap::read_smap;
use specxai::explain::Method;
use specxai::{Error, Tensor};

/// Error carrying its process exit code: 1 usage, 2 data, 3 tolerance.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Tolerance(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Tolerance(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Tolerance(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Global {
    pub jobs: usize,
    pub deterministic: bool,
}

/// Resolves the worker count (`SPECXAI_JOBS` beats `--jobs`) and sizes the
/// global pool when it is explicit. Zero means the library default.
pub fn init_jobs(flag_jobs: usize) -> CliResult<usize> {
    let jobs = match std::env::var("SPECXAI_JOBS") {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
            CliError::Usage(format!("SPECXAI_JOBS must be a non-negative integer, got '{v}'"))
        })?,
        _ => flag_jobs,
    };
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Data(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(jobs)
}

/// Parses a sharpness value; `inf` selects the exact-ReLU limit.
pub fn parse_beta(s: &str) -> CliResult<f64> {
    let beta: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse sharpness '{s}'")))?;
    if beta.is_nan() || beta <= 0.0 {
        return Err(CliError::Usage(format!("sharpness must be positive or inf, got '{s}'")));
    }
    Ok(beta)
}

/// Comma-separated sharpness values, duplicates dropped.
pub fn parse_beta_list(s: &str) -> CliResult<Vec<f64>> {
    let mut out: Vec<f64> = Vec::new();
    for item in s.split(',') {
        let beta = parse_beta(item)?;
        if !out.contains(&beta) {
            out.push(beta);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("empty sharpness list".into()));
    }
    Ok(out)
}

/// Comma-separated seeds; an item may be a half-open range `a..b`.
pub fn parse_seed_list(s: &str) -> CliResult<Vec<u64>> {
    let mut out: Vec<u64> = Vec::new();
    let mut push = |seed: u64| {
        if !out.contains(&seed) {
            out.push(seed);
        }
    };
    for item in s.split(',') {
        let item = item.trim();
        if let Some((a, b)) = item.split_once("..") {
            let lo: u64 = a
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot parse seed '{a}'")))?;
            let hi: u64 = b
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot parse seed '{b}'")))?;
            if hi <= lo {
                return Err(CliError::Usage(format!("empty seed range '{item}'")));
            }
            for seed in lo..hi {
                push(seed);
            }
        } else {
            push(
                item.parse()
                    .map_err(|_| CliError::Usage(format!("cannot parse seed '{item}'")))?,
            );
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("empty seed list".into()));
    }
    Ok(out)
}

/// Short printable form; infinity becomes `inf`, finite values keep their
/// shortest exact decimal form.
pub fn beta_label(beta: f64) -> String {
    if beta.is_infinite() {
        "inf".into()
    } else {
        format!("{beta}")
    }
}

pub fn ensure_out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn timestamp_line() -> String {
    format!("# timestamp: {}\n", chrono::Utc::now().to_rfc3339())
}

/// Writes CSV with an optional leading timestamp comment. Reruns with
/// `deterministic` set produce byte-identical files.
pub fn write_csv_artifact(
    path: &Path,
    header: &[&str],
    rows: &[Vec<Field>],
    deterministic: bool,
) -> CliResult<()> {
    let body = render_csv(header, rows)?;
    let mut text = String::new();
    if !deterministic {
        text.push_str(&timestamp_line());
    }
    text.push_str(&body);
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Records the fully resolved settings of a run. Commands whose output is a
/// directory write `run-config.txt` inside it; commands whose output is a
/// single CSV write a `<name>.run-config.txt` sibling.
pub fn write_run_config(
    path: &Path,
    deterministic: bool,
    entries: &[(&str, String)],
) -> CliResult<()> {
    let mut text = String::from("# resolved run configuration\n");
    if !deterministic {
        text.push_str(&timestamp_line());
    }
    for (key, value) in entries {
        text.push_str(&format!("{key} = {value}\n"));
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Creates the parent directory of a file output when it has one.
pub fn ensure_parent_dir(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_out_dir(parent)?;
    }
    Ok(())
}

/// Flat `key = value` lines with `#` comments; later keys win.
pub fn read_kv_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Data(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                ln + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// One saliency map read back from disk.
pub struct LoadedMap {
    pub file: String,
    pub map: Tensor,
    pub method: Method,
}

/// Reads every `.smap` in a directory in file-name order. Empty directories
/// and maps of mixed sizes are data errors.
pub fn load_smap_dir(dir: &Path) -> CliResult<Vec<LoadedMap>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry =
            entry.map_err(|e| CliError::Data(format!("cannot scan {}: {e}", dir.display())))?;
        let path = entry.path();
        if path.extension().and_then(|s| s.to_str()) == Some("smap") {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(CliError::Data(format!("no .smap files in {}", dir.display())));
    }
    files.sort();
    let mut maps = Vec::with_capacity(files.len());
    for path in files {
        let (map, method_id, _) = read_smap(&path)?;
        let method = Method::from_id(method_id)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let file = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        maps.push(LoadedMap { file, map, method });
    }
    let shape = maps[0].map.shape().to_vec();
    if let Some(bad) = maps.iter().find(|m| m.map.shape() != shape) {
        return Err(CliError::Data(format!(
            "{}: map {} is {:?} but {} is {:?}",
            dir.display(),
            bad.file,
            bad.map.shape(),
            maps[0].file,
            shape
        )));
    }
    Ok(maps)
}

/// Removes constant maps from a batch and returns how many were dropped.
///
/// A constant map has no spectral content and no defined expected frequency.
/// Rectified methods emit them legitimately — when every channel weight is
/// nonpositive the whole map rectifies to zero — so report statistics are
/// taken over the informative remainder, and `n_images` counts only those.
pub fn drop_constant_maps(batch: &mut Vec<Tensor>) -> usize {
    let before = batch.len();
    batch.retain(|map| {
        let first = map.data()[0];
        map.data().iter().any(|&v| v != first)
    });
    before - batch.len()
}

/// Lossless text form for a u64 CSV cell.
pub fn seed_field(seed: u64) -> Field {
    Field::Text(seed.to_string())
}
