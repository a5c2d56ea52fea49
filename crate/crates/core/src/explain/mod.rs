//! Saliency methods.
//!
//! Every method answers the same question: which input pixels move the chosen
//! logit. They differ in how they tame the raw gradient, and those choices
//! are exactly what the spectral measurements downstream quantify:
//!
//! * vanilla: the gradient itself;
//! * smoothgrad: the gradient averaged under Gaussian input jitter;
//! * intgrad: gradients averaged along a straight path from a baseline,
//!   scaled by the displacement;
//! * guidedbp: the gradient with negative upstream signal clamped at every
//!   activation;
//! * gradcam: a channel-weighted sum of the last conv block's activations
//!   (after the normalization and activation that close the block),
//!   rectified and upsampled.
//!
//! All methods return a single-plane `[H, W]` map: multi-channel
//! attributions are averaged over channels after attribution, never before.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{
    forward, guided_input_gradient, input_gradient, LayerSpec, Mode, ModelConfig, Params,
};
use crate::rng::{rng_fork, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Vanilla,
    SmoothGrad,
    IntGrad,
    GuidedBp,
    GradCam,
}

impl Method {
    /// Stable numeric id, the one stored in saliency map files.
    #[must_use]
    pub fn id(self) -> u32 {
        match self {
            Method::Vanilla => 0,
            Method::SmoothGrad => 1,
            Method::IntGrad => 2,
            Method::GuidedBp => 3,
            Method::GradCam => 4,
        }
    }

    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::SmoothGrad => "smoothgrad",
            Method::IntGrad => "intgrad",
            Method::GuidedBp => "guidedbp",
            Method::GradCam => "gradcam",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "smoothgrad" => Ok(Method::SmoothGrad),
            "intgrad" => Ok(Method::IntGrad),
            "guidedbp" => Ok(Method::GuidedBp),
            "gradcam" => Ok(Method::GradCam),
            other => Err(Error::domain(format!(
                "unknown method '{other}', expected vanilla|smoothgrad|intgrad|guidedbp|gradcam"
            ))),
        }
    }

    pub fn from_id(id: u32) -> Result<Method> {
        match id {
            0 => Ok(Method::Vanilla),
            1 => Ok(Method::SmoothGrad),
            2 => Ok(Method::IntGrad),
            3 => Ok(Method::GuidedBp),
            4 => Ok(Method::GradCam),
            other => Err(Error::domain(format!("unknown method id {other}"))),
        }
    }
}

/// Which logit to explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSource {
    /// The model's own prediction, first maximal logit winning ties.
    Argmax,
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub method: Method,
    pub class_source: ClassSource,
    /// SmoothGrad noise scale, relative to the image's value range.
    pub sg_sigma_rel: f64,
    /// SmoothGrad sample count.
    pub sg_samples: usize,
    /// Path resolution for the integrated method.
    pub ig_steps: usize,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            method: Method::Vanilla,
            class_source: ClassSource::Argmax,
            sg_sigma_rel: 0.15,
            sg_samples: 32,
            ig_steps: 64,
            seed: 0,
        }
    }
}

/// Explains one image, returning an `[H, W]` map. Equivalent to index 0 of
/// [`explain_batch`] on a one-image slice.
pub fn explain(cfg: &ModelConfig, params: &Params, x: &Tensor, opts: &ExplainOptions) -> Result<Tensor> {
    let mut maps = explain_batch(cfg, params, std::slice::from_ref(x), opts)?;
    Ok(maps.pop().expect("one image in, one map out"))
}

/// Explains a batch in parallel. Image `i` uses the child stream
/// `rng_fork(seed, i)`, so results depend only on the seed and the image's
/// position, never on worker count or completion order.
pub fn explain_batch(
    cfg: &ModelConfig,
    params: &Params,
    xs: &[Tensor],
    opts: &ExplainOptions,
) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::domain("no images to explain"));
    }
    if opts.sg_samples == 0 || opts.ig_steps == 0 {
        return Err(Error::domain("sample and step counts must be at least 1"));
    }
    if !opts.sg_sigma_rel.is_finite() || opts.sg_sigma_rel < 0.0 {
        return Err(Error::domain(format!(
            "noise scale must be finite and nonnegative, got {}",
            opts.sg_sigma_rel
        )));
    }
    if let ClassSource::Fixed(c) = opts.class_source {
        if c >= cfg.classes {
            return Err(Error::domain(format!(
                "class {c} out of range for {} classes",
                cfg.classes
            )));
        }
    }
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let class = pick_class(cfg, params, x, opts.class_source)?;
            let raw = match opts.method {
                Method::Vanilla => input_gradient(cfg, params, x, class)?,
                Method::GuidedBp => guided_input_gradient(cfg, params, x, class)?,
                Method::SmoothGrad => {
                    let mut rng = rng_fork(opts.seed, i as u64);
                    smooth_grad(cfg, params, x, class, opts.sg_sigma_rel, opts.sg_samples, &mut rng)?
                }
                Method::IntGrad => {
                    integrated_gradients_raw(cfg, params, x, class, None, opts.ig_steps)?
                }
                Method::GradCam => return grad_cam(cfg, params, x, class),
            };
            Ok(channel_mean(&raw))
        })
        .collect()
}

fn pick_class(cfg: &ModelConfig, params: &Params, x: &Tensor, source: ClassSource) -> Result<usize> {
    match source {
        ClassSource::Fixed(c) => Ok(c),
        ClassSource::Argmax => {
            let (logits, _) = forward(cfg, params, x, Mode::Eval)?;
            let mut best = 0;
            for (i, &v) in logits.data().iter().enumerate().skip(1) {
                if v > logits.data()[best] {
                    best = i;
                }
            }
            Ok(best)
        }
    }
}

/// Mean over the channel axis: `[C,H,W] -> [H,W]`.
fn channel_mean(map: &Tensor) -> Tensor {
    let [c, h, w] = map.shape() else { panic!("attribution must be [C,H,W]") };
    let (c, h, w) = (*c, *h, *w);
    let plane = h * w;
    let inv = 1.0 / c as f64;
    Tensor::from_fn(&[h, w], |j| {
        (0..c).map(|ch| map.data()[ch * plane + j]).sum::<f64>() * inv
    })
}

/// Gradient averaged under Gaussian jitter with absolute scale
/// `sigma_rel * (max(x) - min(x))`. A constant image has zero range and
/// degenerates to the plain gradient.
pub fn smooth_grad(
    cfg: &ModelConfig,
    params: &Params,
    x: &Tensor,
    class: usize,
    sigma_rel: f64,
    samples: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let sigma = sigma_rel * (x.max() - x.min());
    let mut acc = Tensor::zeros(x.shape());
    let inv = 1.0 / samples as f64;
    for _ in 0..samples {
        let mut noisy = x.clone();
        for v in noisy.data_mut() {
            *v += rng.normal_scaled(0.0, sigma);
        }
        let g = input_gradient(cfg, params, &noisy, class)?;
        acc.add_scaled(&g, inv)?;
    }
    Ok(acc)
}

/// Raw integrated-gradients attribution `(x - baseline) * mean path
/// gradient`, without channel collapse, so the completeness identity
/// `sum(attribution) ~ f(x) - f(baseline)` can be checked directly.
///
/// Path gradients are taken at midpoints `(k + 0.5) / steps`, which halves
/// the quadrature error order compared to endpoint rules.
pub fn integrated_gradients_raw(
    cfg: &ModelConfig,
    params: &Params,
    x: &Tensor,
    class: usize,
    baseline: Option<&Tensor>,
    steps: usize,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::domain("need at least one path step"));
    }
    let zero;
    let base = match baseline {
        Some(b) => {
            if b.shape() != x.shape() {
                return Err(Error::shape(format!(
                    "baseline shape {:?} does not match input {:?}",
                    b.shape(),
                    x.shape()
                )));
            }
            b
        }
        None => {
            zero = Tensor::zeros(x.shape());
            &zero
        }
    };
    let mut mean_grad = Tensor::zeros(x.shape());
    let inv = 1.0 / steps as f64;
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) * inv;
        let point = Tensor::from_fn(x.shape(), |j| {
            base.data()[j] + alpha * (x.data()[j] - base.data()[j])
        });
        let g = input_gradient(cfg, params, &point, class)?;
        mean_grad.add_scaled(&g, inv)?;
    }
    let mut attr = mean_grad;
    for (a, (&xv, &bv)) in attr.data_mut().iter_mut().zip(x.data().iter().zip(base.data())) {
        *a *= xv - bv;
    }
    Ok(attr)
}

/// Finds the last top-level conv layer, weights its output channels by the
/// spatial mean of the logit gradient, rectifies the weighted sum, and
/// upsamples to input resolution.
fn grad_cam(cfg: &ModelConfig, params: &Params, x: &Tensor, class: usize) -> Result<Tensor> {
    let conv_idx = cfg
        .layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::Conv2D { .. }))
        .ok_or_else(|| Error::domain("gradcam needs a conv layer"))?;
    let (_, trace) = forward(cfg, params, x, Mode::Eval)?;
    // The saliency basis is the conv block's output: the feature maps after
    // any normalization and activation directly following the conv, so they
    // are nonnegative whenever a rectifying activation closes the block.
    // A block can never end the net (the head must end at a logit vector),
    // so a later layer whose input is that output always exists.
    let mut suffix = conv_idx + 1;
    while matches!(
        cfg.layers.get(suffix),
        Some(LayerSpec::SPActivation { .. } | LayerSpec::BatchNorm { .. })
    ) {
        suffix += 1;
    }
    let activations = trace.layers[suffix].input.clone();
    let mut seed = Tensor::zeros(&[cfg.classes]);
    if class >= cfg.classes {
        return Err(Error::domain(format!(
            "class {class} out of range for {} classes",
            cfg.classes
        )));
    }
    seed.set(&[class], 1.0);
    let mut grad_sink = Params { layers: params.layers[suffix..].to_vec() }.zeros_like();
    let g = crate::net::backward::backprop_stack(
        &cfg.layers[suffix..],
        &params.layers[suffix..],
        &trace.layers[suffix..],
        seed,
        false,
        &mut grad_sink.layers,
    )?;
    let [k, ah, aw] = activations.shape() else {
        return Err(Error::shape("conv output is not [K,H,W]"));
    };
    let (k, ah, aw) = (*k, *ah, *aw);
    let plane = ah * aw;
    let mut cam = vec![0.0; plane];
    for ch in 0..k {
        let weight =
            g.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (c, &a) in cam.iter_mut().zip(&activations.data()[ch * plane..(ch + 1) * plane]) {
            *c += weight * a;
        }
    }
    for c in &mut cam {
        *c = c.max(0.0);
    }
    let cam = Tensor::from_vec(&[ah, aw], cam)?;
    let [_, h, w] = cfg.input;
    Ok(bilinear_upsample(&cam, h, w))
}

/// Half-pixel-convention bilinear resampling of an `[H, W]` map.
pub(crate) fn bilinear_upsample(map: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [h, w] = map.shape() else { panic!("upsample input must be [H,W]") };
    let (h, w) = (*h, *w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Tensor::from_fn_idx(&[out_h, out_w], |idx| {
        let fy = ((idx[0] as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let fx = ((idx[1] as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let y0 = fy.floor() as usize;
        let x0 = fx.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let v00 = map.at(&[y0, x0]);
        let v01 = map.at(&[y0, x1]);
        let v10 = map.at(&[y1, x0]);
        let v11 = map.at(&[y1, x1]);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
    })
}
