//! Bundled training recipes: random-field corpora at fixed sizes, matched
//! accuracy caps, and a small conv net parameterized by activation sharpness.
//!
//! The head is deliberately Flatten + Dense rather than global pooling: the
//! label is the sign of a fixed spatial template, which a shift-invariant
//! readout cannot express. A hidden layer sits between Flatten and the
//! logits; with a direct two-logit readout the trained rows become
//! anti-symmetric, every channel weight shares one sign, and rectified
//! channel-weighted saliency collapses to empty maps on one class.

use specxai::data::{gen_grf, Dataset};
use specxai::conv::Padding;
use specxai::net::{LayerSpec, ModelConfig};
use specxai::train::{Optimizer, TrainOptions};

use crate::support::{CliError, CliResult};

/// Disjoint child-stream blocks so the three splits of one seed never share
/// an image.
const VAL_STREAM: u64 = 1 << 32;
const EVAL_STREAM: u64 = 1 << 33;

pub const RECIPE_NAMES: [&str; 3] = ["raster-28", "raster-32", "synthetic-64"];

#[derive(Debug, Clone)]
pub struct Recipe {
    pub name: &'static str,
    /// Square image side.
    pub size: usize,
    /// Spectral decay of the training fields.
    pub alpha: f64,
    /// Default validation-accuracy cap.
    pub cap: f64,
    pub train_n: usize,
    pub val_n: usize,
    pub eval_n: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    conv_stages: usize,
}

pub fn named(name: &str) -> CliResult<Recipe> {
    let base = Recipe {
        name: "",
        size: 0,
        alpha: 2.5,
        cap: 0.0,
        train_n: 512,
        val_n: 128,
        eval_n: 256,
        max_epochs: 80,
        lr: 1.5e-3,
        batch_size: 32,
        conv_stages: 2,
    };
    match name {
        "raster-28" => Ok(Recipe { name: "raster-28", size: 28, cap: 0.80, ..base }),
        // Rougher fields than the other recipes: the sharpness sweep needs a
        // task hard enough that no net reaches the cap in its first epochs,
        // so every sharpness level sees comparable training exposure.
        "raster-32" => Ok(Recipe { name: "raster-32", size: 32, alpha: 1.5, cap: 0.70, ..base }),
        "synthetic-64" => Ok(Recipe {
            name: "synthetic-64",
            size: 64,
            alpha: 3.0,
            cap: 0.60,
            train_n: 384,
            max_epochs: 30,
            conv_stages: 3,
            ..base
        }),
        other => Err(CliError::Usage(format!(
            "unknown recipe '{other}', expected one of: {}",
            RECIPE_NAMES.join(", ")
        ))),
    }
}

impl Recipe {
    pub fn model(&self, beta: f64) -> ModelConfig {
        let mut layers = Vec::new();
        for _ in 0..self.conv_stages {
            layers.push(LayerSpec::Conv2D { out_channels: 6, kernel: 3, padding: Padding::Same });
            layers.push(LayerSpec::SPActivation { beta });
            layers.push(LayerSpec::AvgPool { stride: 2 });
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { out: 32 });
        layers.push(LayerSpec::SPActivation { beta });
        layers.push(LayerSpec::Dense { out: 2 });
        ModelConfig { input: [1, self.size, self.size], classes: 2, layers }
    }

    pub fn train_set(&self, seed: u64) -> CliResult<Dataset> {
        Ok(gen_grf(self.train_n, self.size, self.size, self.alpha, seed, 0)?)
    }

    pub fn val_set(&self, seed: u64) -> CliResult<Dataset> {
        Ok(gen_grf(self.val_n, self.size, self.size, self.alpha, seed, VAL_STREAM)?)
    }

    pub fn eval_set(&self, seed: u64, n: usize) -> CliResult<Dataset> {
        Ok(gen_grf(n, self.size, self.size, self.alpha, seed, EVAL_STREAM)?)
    }

    pub fn train_options(&self, cap: f64, seed: u64) -> TrainOptions {
        TrainOptions {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            accuracy_cap: Some(cap),
            optimizer: Optimizer::Adam,
            seed,
        }
    }
}
