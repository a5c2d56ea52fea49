//! `train`: fit one model on a bundled recipe and write the checkpoint plus
//! its training history.

use std::path::PathBuf;

use clap::Args;
use specxai::data::report::Field;
use specxai::net::{he_init, save_model};
use specxai::train::{fit, EpochRecord};

use crate::recipes;
use crate::support::{
    beta_label, ensure_out_dir, parse_beta, read_kv_file, write_csv_artifact, write_run_config,
    CliError, CliResult, Global,
};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat key=value run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundled recipe name.
    #[arg(long)]
    pub recipe: Option<String>,
    /// Activation sharpness, `inf` for exact ReLU.
    #[arg(long)]
    pub beta: Option<String>,
    /// Validation-accuracy cap in [0, 1]; defaults to the recipe's cap.
    #[arg(long)]
    pub cap: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// `--config` keys plus the flag overrides, collapsed to one setting set.
struct Resolved {
    recipe: recipes::Recipe,
    beta: f64,
    cap: f64,
    seed: u64,
}

fn resolve(args: &TrainArgs) -> CliResult<Resolved> {
    let mut recipe_name = args.recipe.clone();
    let mut beta_text = args.beta.clone();
    let mut cap = args.cap;
    let mut seed = args.seed;
    let mut epochs = None;
    let mut lr = None;
    let mut batch_size = None;

    if let Some(path) = &args.config {
        for (key, value) in read_kv_file(path)? {
            let bad = |what: &str| {
                CliError::Data(format!("{}: bad {what} value '{value}'", path.display()))
            };
            match key.as_str() {
                "recipe" => {
                    if args.recipe.is_none() {
                        recipe_name = Some(value);
                    }
                }
                "beta" => {
                    if args.beta.is_none() {
                        beta_text = Some(value);
                    }
                }
                "cap" => {
                    if args.cap.is_none() {
                        cap = Some(value.parse().map_err(|_| bad("cap"))?);
                    }
                }
                "seed" => {
                    if args.seed.is_none() {
                        seed = Some(value.parse().map_err(|_| bad("seed"))?);
                    }
                }
                "epochs" => epochs = Some(value.parse().map_err(|_| bad("epochs"))?),
                "lr" => lr = Some(value.parse().map_err(|_| bad("lr"))?),
                "batch_size" => batch_size = Some(value.parse().map_err(|_| bad("batch_size"))?),
                other => {
                    return Err(CliError::Data(format!(
                        "{}: unknown key '{other}'",
                        path.display()
                    )))
                }
            }
        }
    }

    let Some(name) = recipe_name else {
        return Err(CliError::Usage(
            "no recipe selected; pass --recipe or a config file with a recipe key".into(),
        ));
    };
    let mut recipe = recipes::named(&name)?;
    if let Some(e) = epochs {
        recipe.max_epochs = e;
    }
    if let Some(l) = lr {
        recipe.lr = l;
    }
    if let Some(b) = batch_size {
        recipe.batch_size = b;
    }
    let Some(beta_text) = beta_text else {
        return Err(CliError::Usage(
            "no sharpness given; pass --beta or a config file with a beta key".into(),
        ));
    };
    let beta = parse_beta(&beta_text)?;
    let cap = cap.unwrap_or(recipe.cap);
    if !(0.0..=1.0).contains(&cap) {
        return Err(CliError::Usage(format!("cap must be in [0, 1], got {cap}")));
    }
    Ok(Resolved { recipe, beta, cap, seed: seed.unwrap_or(0) })
}

pub fn history_rows(history: &[EpochRecord]) -> Vec<Vec<Field>> {
    history
        .iter()
        .map(|r| {
            vec![
                Field::Int(r.step as i64),
                Field::Float(r.train_loss),
                Field::Float(r.val_accuracy),
            ]
        })
        .collect()
}

pub fn run(args: &TrainArgs, global: &Global) -> CliResult<()> {
    let r = resolve(args)?;
    ensure_out_dir(&args.out)?;
    write_run_config(
        &args.out.join("run-config.txt"),
        global.deterministic,
        &[
            ("command", "train".into()),
            ("recipe", r.recipe.name.into()),
            ("beta", beta_label(r.beta)),
            ("cap", format!("{}", r.cap)),
            ("seed", format!("{}", r.seed)),
            ("epochs", format!("{}", r.recipe.max_epochs)),
            ("lr", format!("{}", r.recipe.lr)),
            ("batch_size", format!("{}", r.recipe.batch_size)),
            ("train_n", format!("{}", r.recipe.train_n)),
            ("val_n", format!("{}", r.recipe.val_n)),
            ("out", args.out.display().to_string()),
            ("jobs", format!("{}", global.jobs)),
            ("deterministic", format!("{}", global.deterministic)),
        ],
    )?;

    let cfg = r.recipe.model(r.beta);
    let params = he_init(&cfg, r.seed)?;
    let train = r.recipe.train_set(r.seed)?;
    let val = r.recipe.val_set(r.seed)?;
    let opts = r.recipe.train_options(r.cap, r.seed);
    let result = fit(&cfg, params, &train.images, &train.labels, &val.images, &val.labels, &opts)?;

    save_model(&args.out.join("model.spxm"), &cfg, &result.params)?;
    write_csv_artifact(
        &args.out.join("history.csv"),
        &["step", "train_loss", "val_accuracy"],
        &history_rows(&result.history),
        global.deterministic,
    )?;

    let last = result.history.last().expect("at least one epoch");
    println!(
        "trained {} beta={} seed={}: val_accuracy {:.4} after {} epochs ({})",
        r.recipe.name,
        beta_label(r.beta),
        r.seed,
        last.val_accuracy,
        last.step,
        if result.capped { "reached cap" } else { "cap not reached" }
    );
    Ok(())
}
