//! Weight initialization.

use crate::error::Result;
use crate::net::{LayerParams, LayerSpec, ModelConfig, Params};
use crate::rng::{rng_fork, RngStream};
use crate::tensor::Tensor;

/// He-style initialization: weights drawn from `N(0, 2/fan_in)`, biases zero,
/// BatchNorm scale one and running variance one.
///
/// Each layer draws from its own child stream of `seed`, so inserting or
/// resizing one layer never disturbs another layer's draws, and activation
/// layers consume nothing: two configs differing only in sharpness get
/// bit-identical parameters from the same seed.
pub fn he_init(cfg: &ModelConfig, seed: u64) -> Result<Params> {
    let shapes = cfg.validate()?;
    let mut layers = Vec::with_capacity(cfg.layers.len());
    for (li, layer) in cfg.layers.iter().enumerate() {
        let mut stream = rng_fork(seed, li as u64);
        layers.push(init_layer(layer, &shapes[li], &mut stream));
    }
    Ok(Params { layers })
}

fn init_layer(layer: &LayerSpec, input: &[usize], stream: &mut RngStream) -> LayerParams {
    match layer {
        LayerSpec::Dense { out } => {
            let fan_in = input[0];
            let sd = (2.0 / fan_in as f64).sqrt();
            let w = Tensor::from_fn(&[*out, fan_in], |_| stream.normal_scaled(0.0, sd));
            LayerParams::Affine { w, b: Tensor::zeros(&[*out]) }
        }
        LayerSpec::Conv2D { out_channels, kernel, .. } => {
            let c = input[0];
            let fan_in = c * kernel * kernel;
            let sd = (2.0 / fan_in as f64).sqrt();
            let w = Tensor::from_fn(&[*out_channels, c, *kernel, *kernel], |_| {
                stream.normal_scaled(0.0, sd)
            });
            LayerParams::Affine { w, b: Tensor::zeros(&[*out_channels]) }
        }
        LayerSpec::BatchNorm { .. } => {
            let width = super::norm_width(input);
            LayerParams::Norm {
                gamma: Tensor::filled(&[width], 1.0),
                beta: Tensor::zeros(&[width]),
                run_mean: Tensor::zeros(&[width]),
                run_var: Tensor::filled(&[width], 1.0),
            }
        }
        LayerSpec::SkipBlock { inner } => {
            let mut cur = input.to_vec();
            let mut inner_params = Vec::with_capacity(inner.len());
            for (ii, l) in inner.iter().enumerate() {
                // Child lane per inner layer, independent of draw position.
                let mut sub = stream.fork(ii as u64);
                inner_params.push(init_layer(l, &cur, &mut sub));
                cur = super::infer_layer_shape(l, &cur).expect("validated config");
            }
            LayerParams::Block(inner_params)
        }
        LayerSpec::AvgPool { .. }
        | LayerSpec::MaxPool { .. }
        | LayerSpec::SPActivation { .. }
        | LayerSpec::GlobalAvgPool
        | LayerSpec::Flatten => LayerParams::Empty,
    }
}
