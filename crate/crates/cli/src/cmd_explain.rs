//! `explain`: write saliency maps for a trained model over a chosen image
//! source, one `.smap` per image plus a manifest.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use specxai::data::idx::read_idx_images;
use specxai::data::report::Field;
use specxai::data::smap::write_smap;
use specxai::explain::{explain, ClassSource, ExplainOptions, Method};
use specxai::net::{forward, load_model, Mode};
use specxai::Tensor;

use crate::recipes;
use crate::support::{
    ensure_out_dir, seed_field, write_csv_artifact, write_run_config, CliError, CliResult, Global,
};

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Image source: `recipe:<name>` for a recipe's held-out stream, or
    /// `idx:<path>` for an IDX image file.
    #[arg(long)]
    pub data: String,
    /// vanilla | smoothgrad | intgrad | guidedbp | gradcam
    #[arg(long)]
    pub method: String,
    /// Number of images to explain.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Explain this logit instead of each image's predicted one.
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_images(spec: &str, n: usize, seed: u64) -> CliResult<Vec<Tensor>> {
    if let Some(name) = spec.strip_prefix("recipe:") {
        let recipe = recipes::named(name)?;
        return Ok(recipe.eval_set(seed, n)?.images);
    }
    if let Some(path) = spec.strip_prefix("idx:") {
        let images = read_idx_images(path.as_ref())?;
        if images.len() < n {
            return Err(CliError::Data(format!(
                "{path} holds {} images, need {n}",
                images.len()
            )));
        }
        return Ok(images.into_iter().take(n).collect());
    }
    Err(CliError::Usage(format!(
        "data spec '{spec}' must be recipe:<name> or idx:<path>"
    )))
}

fn argmax(logits: &Tensor) -> usize {
    let data = logits.data();
    let mut best = 0;
    for (i, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = i;
        }
    }
    best
}

pub fn run(args: &ExplainArgs, global: &Global) -> CliResult<()> {
    let method = Method::parse(&args.method).map_err(|e| CliError::Usage(e.to_string()))?;
    if args.n == 0 {
        return Err(CliError::Usage("need at least one image".into()));
    }
    let (cfg, params) = load_model(&args.model)?;
    let images = load_images(&args.data, args.n, args.seed)?;
    if images[0].shape() != cfg.input.as_slice() {
        return Err(CliError::Data(format!(
            "model expects {:?} inputs but the data is {:?}",
            cfg.input,
            images[0].shape()
        )));
    }
    let class_source = match args.class {
        Some(c) => ClassSource::Fixed(c),
        None => ClassSource::Argmax,
    };
    ensure_out_dir(&args.out)?;
    write_run_config(
        &args.out.join("run-config.txt"),
        global.deterministic,
        &[
            ("command", "explain".into()),
            ("model", args.model.display().to_string()),
            ("data", args.data.clone()),
            ("method", method.name().into()),
            ("n", format!("{}", args.n)),
            ("seed", format!("{}", args.seed)),
            (
                "class",
                match args.class {
                    Some(c) => format!("{c}"),
                    None => "argmax".into(),
                },
            ),
            ("out", args.out.display().to_string()),
            ("jobs", format!("{}", global.jobs)),
            ("deterministic", format!("{}", global.deterministic)),
        ],
    )?;

    // Each image gets its own seed so every map is independently
    // reproducible from its manifest row alone.
    let results: Vec<CliResult<(Tensor, usize, u64)>> = images
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let seed = args.seed.wrapping_add(i as u64);
            let opts = ExplainOptions { method, class_source, seed, ..Default::default() };
            let map = explain(&cfg, &params, x, &opts)?;
            let class = match class_source {
                ClassSource::Fixed(c) => c,
                ClassSource::Argmax => argmax(&forward(&cfg, &params, x, Mode::Eval)?.0),
            };
            Ok((map, class, seed))
        })
        .collect();

    let mut rows = Vec::with_capacity(args.n);
    for (i, result) in results.into_iter().enumerate() {
        let (map, class, seed) = result?;
        let file = format!("map-{i:05}.smap");
        write_smap(&args.out.join(&file), &map, method.id(), seed)?;
        rows.push(vec![
            Field::Int(i as i64),
            Field::Text(file),
            Field::Text(method.name().into()),
            Field::Int(class as i64),
            seed_field(seed),
        ]);
    }
    write_csv_artifact(
        &args.out.join("manifest.csv"),
        &["index", "file", "method", "class", "seed"],
        &rows,
        global.deterministic,
    )?;
    println!("explained {} images with {} into {}", args.n, method.name(), args.out.display());
    Ok(())
}
