//! Declarative feedforward networks with tunable activation sharpness.
//!
//! A model is a [`ModelConfig`]: an input shape, a class count, and a list of
//! [`LayerSpec`]s. Parameters live separately in [`Params`] so the same
//! architecture can carry different weights. The activation vocabulary is a
//! single family, softplus at sharpness `beta`, with `beta = inf` meaning
//! exact ReLU through a dedicated code path rather than a large-beta
//! approximation. That makes "the same net, smoother or sharper" a
//! one-parameter experiment.
//!
//! Configs have a canonical flat-text form (`key = value` lines, `#`
//! comments) used both by checkpoint files and by the CLI:
//!
//! ```text
//! input = 1x32x32
//! classes = 2
//! layer = conv 8 3 same
//! layer = sp inf
//! layer = avgpool 2
//! layer = flatten
//! layer = dense 2
//! ```
//!
//! Skip blocks nest with braces: `layer = skip { conv 8 3 same ; sp 2 }`.

pub(crate) mod backward;
mod checkpoint;
mod forward;
mod init;

pub use backward::{backward_from_seed, guided_input_gradient, input_gradient, param_gradient};
pub use checkpoint::{load_model, save_model};
pub use forward::{
    forward, forward_batch, update_running_stats, ForwardTrace, LayerTrace, Mode, TraceDetail,
};
pub use init::he_init;

use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BATCHNORM_DEFAULT_EPS: f64 = 1e-5;
pub const BATCHNORM_DEFAULT_MOMENTUM: f64 = 0.1;

/// Softplus at sharpness `beta`: `(1/beta) * ln(1 + exp(beta * x))`,
/// evaluated in the overflow-safe form `max(x, 0) + ln1p(exp(-|beta*x|))/beta`.
///
/// `beta = inf` is exact ReLU. As `beta` grows the curve tightens onto ReLU
/// from above; the gap is largest at the kink, where it equals `ln(2)/beta`.
#[must_use]
pub fn softplus(x: f64, beta: f64) -> f64 {
    if beta == f64::INFINITY {
        x.max(0.0)
    } else {
        x.max(0.0) + (-(beta * x).abs()).exp().ln_1p() / beta
    }
}

/// Derivative of [`softplus`] in `x`: the logistic `sigma(beta * x)`, or the
/// ReLU step for `beta = inf` with the subgradient at zero taken as 0.
#[must_use]
pub fn softplus_deriv(x: f64, beta: f64) -> f64 {
    if beta == f64::INFINITY {
        if x > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = beta * x;
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    }
}

/// One layer of the architecture vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Fully connected map to `out` features. Input must be rank 1.
    Dense { out: usize },
    /// `out_channels` square `kernel x kernel` filters at stride 1.
    Conv2D { out_channels: usize, kernel: usize, padding: Padding },
    /// Mean over non-overlapping `stride x stride` windows.
    AvgPool { stride: usize },
    /// Max over non-overlapping windows; ties go to the first maximal
    /// element in row-major order.
    MaxPool { stride: usize },
    /// Softplus activation at the given sharpness, `inf` for exact ReLU.
    SPActivation { beta: f64 },
    /// Per-channel normalization; batch statistics while training, running
    /// statistics (a fixed affine map) in eval mode.
    BatchNorm { eps: f64, momentum: f64 },
    /// Residual block: `x + inner(x)`. The inner stack must preserve shape.
    SkipBlock { inner: Vec<LayerSpec> },
    /// Spatial mean per channel: `[C,H,W] -> [C]`.
    GlobalAvgPool,
    /// `[C,H,W] -> [C*H*W]`.
    Flatten,
}

/// Architecture description: what the net looks like, not what it weighs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input shape `[C, H, W]`.
    pub input: [usize; 3],
    /// Number of output classes; the final layer must produce exactly this
    /// many logits.
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// Checks every shape and parameter constraint, returning the activation
    /// shape after each layer (starting with the input shape itself).
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.classes < 2 {
            return Err(Error::domain(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.input.contains(&0) {
            return Err(Error::shape(format!("input shape {:?} has a zero dim", self.input)));
        }
        let mut shapes = vec![self.input.to_vec()];
        let mut cur = self.input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            cur = infer_layer_shape(layer, &cur)
                .map_err(|e| Error::shape(format!("layer {li}: {e}")))?;
            shapes.push(cur.clone());
        }
        if cur != [self.classes] {
            return Err(Error::shape(format!(
                "final activation {cur:?} does not match [{}] logits",
                self.classes
            )));
        }
        Ok(shapes)
    }

    /// Canonical flat-text serialization; [`parse_config`] inverts it.
    #[must_use]
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("input = {}x{}x{}\n", self.input[0], self.input[1], self.input[2]));
        out.push_str(&format!("classes = {}\n", self.classes));
        for layer in &self.layers {
            out.push_str(&format!("layer = {}\n", layer_to_text(layer)));
        }
        out
    }
}

fn infer_layer_shape(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    match layer {
        LayerSpec::Dense { out } => {
            if *out == 0 {
                return Err(Error::domain("dense layer with 0 outputs"));
            }
            let [_d] = input else {
                return Err(Error::shape(format!(
                    "dense needs a flat input, got {input:?} (insert flatten or gap)"
                )));
            };
            Ok(vec![*out])
        }
        LayerSpec::Conv2D { out_channels, kernel, padding } => {
            if *out_channels == 0 || *kernel == 0 {
                return Err(Error::domain("conv layer with zero channels or kernel"));
            }
            let [_c, h, w] = input else {
                return Err(Error::shape(format!("conv needs [C,H,W], got {input:?}")));
            };
            match padding {
                Padding::Same => {
                    if kernel % 2 == 0 {
                        return Err(Error::domain(format!(
                            "same-padded conv needs an odd kernel, got {kernel}"
                        )));
                    }
                    Ok(vec![*out_channels, *h, *w])
                }
                Padding::Valid => {
                    if *kernel > *h || *kernel > *w {
                        return Err(Error::shape(format!(
                            "valid conv kernel {kernel} exceeds input {h}x{w}"
                        )));
                    }
                    Ok(vec![*out_channels, h - kernel + 1, w - kernel + 1])
                }
            }
        }
        LayerSpec::AvgPool { stride } | LayerSpec::MaxPool { stride } => {
            if *stride == 0 {
                return Err(Error::domain("pooling stride must be at least 1"));
            }
            let [c, h, w] = input else {
                return Err(Error::shape(format!("pooling needs [C,H,W], got {input:?}")));
            };
            let (oh, ow) = (h / stride, w / stride);
            if oh == 0 || ow == 0 {
                return Err(Error::shape(format!(
                    "pooling stride {stride} collapses input {h}x{w}"
                )));
            }
            Ok(vec![*c, oh, ow])
        }
        LayerSpec::SPActivation { beta } => {
            if !(*beta > 0.0) {
                return Err(Error::domain(format!(
                    "activation sharpness must be positive (or inf), got {beta}"
                )));
            }
            Ok(input.to_vec())
        }
        LayerSpec::BatchNorm { eps, momentum } => {
            if !(*eps > 0.0) || !eps.is_finite() {
                return Err(Error::domain(format!("batchnorm eps must be positive, got {eps}")));
            }
            if !(0.0..=1.0).contains(momentum) {
                return Err(Error::domain(format!(
                    "batchnorm momentum must lie in [0,1], got {momentum}"
                )));
            }
            Ok(input.to_vec())
        }
        LayerSpec::SkipBlock { inner } => {
            let mut cur = input.to_vec();
            for (li, l) in inner.iter().enumerate() {
                cur = infer_layer_shape(l, &cur)
                    .map_err(|e| Error::shape(format!("skip inner layer {li}: {e}")))?;
            }
            if cur != input {
                return Err(Error::shape(format!(
                    "skip inner stack maps {input:?} to {cur:?}, must preserve shape"
                )));
            }
            Ok(input.to_vec())
        }
        LayerSpec::GlobalAvgPool => {
            let [c, _h, _w] = input else {
                return Err(Error::shape(format!("gap needs [C,H,W], got {input:?}")));
            };
            Ok(vec![*c])
        }
        LayerSpec::Flatten => {
            let [c, h, w] = input else {
                return Err(Error::shape(format!("flatten needs [C,H,W], got {input:?}")));
            };
            Ok(vec![c * h * w])
        }
    }
}

/// Number of channels (rank 3) or features (rank 1) a BatchNorm layer
/// normalizes over for a given input shape.
pub(crate) fn norm_width(shape: &[usize]) -> usize {
    shape[0]
}

/// Parameters of one layer, mirroring [`LayerSpec`] by position.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    /// Activations, pooling, flatten, gap: nothing to learn.
    Empty,
    /// Dense (`w: [out, in]`) or conv (`w: [K, C, k, k]`), plus bias `[out]`.
    Affine { w: Tensor, b: Tensor },
    /// BatchNorm scale/shift plus running statistics. The running stats are
    /// state, not learnable parameters: their gradient entries are zero and
    /// optimizers leave them untouched.
    Norm { gamma: Tensor, beta: Tensor, run_mean: Tensor, run_var: Tensor },
    /// Parameters of a skip block's inner stack.
    Block(Vec<LayerParams>),
}

/// All parameters of a model, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    /// Visits every tensor in canonical (layer, field) order, running stats
    /// included. This order defines the checkpoint layout.
    pub fn visit(&self, f: &mut impl FnMut(&Tensor)) {
        fn walk(layers: &[LayerParams], f: &mut impl FnMut(&Tensor)) {
            for lp in layers {
                match lp {
                    LayerParams::Empty => {}
                    LayerParams::Affine { w, b } => {
                        f(w);
                        f(b);
                    }
                    LayerParams::Norm { gamma, beta, run_mean, run_var } => {
                        f(gamma);
                        f(beta);
                        f(run_mean);
                        f(run_var);
                    }
                    LayerParams::Block(inner) => walk(inner, f),
                }
            }
        }
        walk(&self.layers, f);
    }

    /// Mutable visit in the same canonical order as [`Params::visit`].
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        fn walk(layers: &mut [LayerParams], f: &mut impl FnMut(&mut Tensor)) {
            for lp in layers {
                match lp {
                    LayerParams::Empty => {}
                    LayerParams::Affine { w, b } => {
                        f(w);
                        f(b);
                    }
                    LayerParams::Norm { gamma, beta, run_mean, run_var } => {
                        f(gamma);
                        f(beta);
                        f(run_mean);
                        f(run_var);
                    }
                    LayerParams::Block(inner) => walk(inner, f),
                }
            }
        }
        walk(&mut self.layers, f);
    }

    /// All tensors in canonical order. Same order as [`Params::visit`].
    #[must_use]
    pub fn tensors(&self) -> Vec<&Tensor> {
        fn walk<'a>(layers: &'a [LayerParams], out: &mut Vec<&'a Tensor>) {
            for lp in layers {
                match lp {
                    LayerParams::Empty => {}
                    LayerParams::Affine { w, b } => out.extend([w, b]),
                    LayerParams::Norm { gamma, beta, run_mean, run_var } => {
                        out.extend([gamma, beta, run_mean, run_var]);
                    }
                    LayerParams::Block(inner) => walk(inner, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, &mut out);
        out
    }

    /// Mutable variant of [`Params::tensors`], for optimizers that walk
    /// several same-structured parameter trees in lockstep.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        fn walk<'a>(layers: &'a mut [LayerParams], out: &mut Vec<&'a mut Tensor>) {
            for lp in layers {
                match lp {
                    LayerParams::Empty => {}
                    LayerParams::Affine { w, b } => out.extend([w, b]),
                    LayerParams::Norm { gamma, beta, run_mean, run_var } => {
                        out.extend([gamma, beta, run_mean, run_var]);
                    }
                    LayerParams::Block(inner) => walk(inner, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&mut self.layers, &mut out);
        out
    }

    /// Total scalar count across all tensors, running stats included.
    #[must_use]
    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    /// Same-structure zero clone, used for gradient accumulators and
    /// optimizer state.
    #[must_use]
    pub fn zeros_like(&self) -> Params {
        fn walk(layers: &[LayerParams]) -> Vec<LayerParams> {
            layers
                .iter()
                .map(|lp| match lp {
                    LayerParams::Empty => LayerParams::Empty,
                    LayerParams::Affine { w, b } => LayerParams::Affine {
                        w: Tensor::zeros(w.shape()),
                        b: Tensor::zeros(b.shape()),
                    },
                    LayerParams::Norm { gamma, beta, run_mean, run_var } => LayerParams::Norm {
                        gamma: Tensor::zeros(gamma.shape()),
                        beta: Tensor::zeros(beta.shape()),
                        run_mean: Tensor::zeros(run_mean.shape()),
                        run_var: Tensor::zeros(run_var.shape()),
                    },
                    LayerParams::Block(inner) => LayerParams::Block(walk(inner)),
                })
                .collect()
        }
        Params { layers: walk(&self.layers) }
    }

    /// Adds `scale * other` tensor-by-tensor. Structures must match.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) -> Result<()> {
        let mut tensors = Vec::new();
        other.visit(&mut |t| tensors.push(t.clone()));
        let mut idx = 0;
        let mut failed = false;
        self.visit_mut(&mut |t| {
            if idx >= tensors.len() || t.add_scaled(&tensors[idx], scale).is_err() {
                failed = true;
            }
            idx += 1;
        });
        if failed || idx != tensors.len() {
            return Err(Error::shape("parameter structures do not match"));
        }
        Ok(())
    }

    /// Full-parameter inner product; the NTK Gram entries.
    pub fn dot(&self, other: &Params) -> Result<f64> {
        let mut tensors = Vec::new();
        other.visit(&mut |t| tensors.push(t.clone()));
        let mut idx = 0;
        let mut acc = 0.0;
        let mut failed = false;
        self.visit(&mut |t| {
            match tensors.get(idx).and_then(|o| t.dot(o).ok()) {
                Some(d) => acc += d,
                None => failed = true,
            }
            idx += 1;
        });
        if failed || idx != tensors.len() {
            return Err(Error::shape("parameter structures do not match"));
        }
        Ok(acc)
    }
}

/// Zero-valued parameters with the exact structure the config demands
/// (BatchNorm scale and running variance start at one). Used as the fill
/// target when loading checkpoints and as the structural reference when
/// validating parameters against a config.
pub(crate) fn param_template(cfg: &ModelConfig) -> Result<Params> {
    let shapes = cfg.validate()?;
    fn template_layer(layer: &LayerSpec, input: &[usize]) -> LayerParams {
        match layer {
            LayerSpec::Dense { out } => LayerParams::Affine {
                w: Tensor::zeros(&[*out, input[0]]),
                b: Tensor::zeros(&[*out]),
            },
            LayerSpec::Conv2D { out_channels, kernel, .. } => LayerParams::Affine {
                w: Tensor::zeros(&[*out_channels, input[0], *kernel, *kernel]),
                b: Tensor::zeros(&[*out_channels]),
            },
            LayerSpec::BatchNorm { .. } => {
                let width = norm_width(input);
                LayerParams::Norm {
                    gamma: Tensor::filled(&[width], 1.0),
                    beta: Tensor::zeros(&[width]),
                    run_mean: Tensor::zeros(&[width]),
                    run_var: Tensor::filled(&[width], 1.0),
                }
            }
            LayerSpec::SkipBlock { inner } => {
                let mut cur = input.to_vec();
                let mut out = Vec::with_capacity(inner.len());
                for l in inner {
                    out.push(template_layer(l, &cur));
                    cur = infer_layer_shape(l, &cur).expect("validated config");
                }
                LayerParams::Block(out)
            }
            _ => LayerParams::Empty,
        }
    }
    let layers = cfg
        .layers
        .iter()
        .enumerate()
        .map(|(li, l)| template_layer(l, &shapes[li]))
        .collect();
    Ok(Params { layers })
}

/// True when `params` has exactly the tensor structure `template` has.
pub(crate) fn same_structure(a: &Params, b: &Params) -> bool {
    fn eq(a: &[LayerParams], b: &[LayerParams]) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| match (x, y) {
                (LayerParams::Empty, LayerParams::Empty) => true,
                (LayerParams::Affine { w: w1, b: b1 }, LayerParams::Affine { w: w2, b: b2 }) => {
                    w1.shape() == w2.shape() && b1.shape() == b2.shape()
                }
                (
                    LayerParams::Norm { gamma: g1, .. },
                    LayerParams::Norm { gamma: g2, .. },
                ) => g1.shape() == g2.shape(),
                (LayerParams::Block(i1), LayerParams::Block(i2)) => eq(i1, i2),
                _ => false,
            })
    }
    eq(&a.layers, &b.layers)
}

fn layer_to_text(layer: &LayerSpec) -> String {
    match layer {
        LayerSpec::Dense { out } => format!("dense {out}"),
        LayerSpec::Conv2D { out_channels, kernel, padding } => {
            let pad = match padding {
                Padding::Same => "same",
                Padding::Valid => "valid",
            };
            format!("conv {out_channels} {kernel} {pad}")
        }
        LayerSpec::AvgPool { stride } => format!("avgpool {stride}"),
        LayerSpec::MaxPool { stride } => format!("maxpool {stride}"),
        LayerSpec::SPActivation { beta } => {
            if *beta == f64::INFINITY {
                "sp inf".into()
            } else {
                format!("sp {beta}")
            }
        }
        LayerSpec::BatchNorm { eps, momentum } => format!("batchnorm {eps} {momentum}"),
        LayerSpec::SkipBlock { inner } => {
            let parts: Vec<String> = inner.iter().map(layer_to_text).collect();
            format!("skip {{ {} }}", parts.join(" ; "))
        }
        LayerSpec::GlobalAvgPool => "gap".into(),
        LayerSpec::Flatten => "flatten".into(),
    }
}

/// Parses the flat-text model format produced by [`ModelConfig::to_text`].
///
/// Lines are `key = value`; `#` starts a comment; blank lines are skipped.
/// Keys other than `input`, `classes`, and `layer` are ignored, so a model
/// block can live inside a larger run configuration file. The parsed config
/// is validated before being returned.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut input: Option<[usize; 3]> = None;
    let mut classes: Option<usize> = None;
    let mut layers = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value", lineno + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "input" => {
                let dims: Vec<usize> = value
                    .split('x')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| {
                        Error::Config(format!("line {}: bad input shape '{value}'", lineno + 1))
                    })?;
                let [c, h, w] = dims[..] else {
                    return Err(Error::Config(format!(
                        "line {}: input shape must be CxHxW",
                        lineno + 1
                    )));
                };
                input = Some([c, h, w]);
            }
            "classes" => {
                classes = Some(value.parse().map_err(|_| {
                    Error::Config(format!("line {}: bad class count '{value}'", lineno + 1))
                })?);
            }
            "layer" => {
                layers.push(parse_layer(value).map_err(|e| {
                    Error::Config(format!("line {}: {e}", lineno + 1))
                })?);
            }
            _ => {}
        }
    }
    let cfg = ModelConfig {
        input: input.ok_or_else(|| Error::Config("missing 'input' line".into()))?,
        classes: classes.ok_or_else(|| Error::Config("missing 'classes' line".into()))?,
        layers,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_layer(text: &str) -> std::result::Result<LayerSpec, String> {
    // Braces and semicolons separate skip-block structure; everything else
    // splits on whitespace.
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '{' | '}' | ';' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    let mut pos = 0;
    let layer = parse_layer_tokens(&tokens, &mut pos)?;
    if pos != tokens.len() {
        return Err(format!("trailing tokens after layer spec '{text}'"));
    }
    Ok(layer)
}

fn parse_layer_tokens(tokens: &[String], pos: &mut usize) -> std::result::Result<LayerSpec, String> {
    let mut next = || -> std::result::Result<&str, String> {
        let t = tokens.get(*pos).ok_or("unexpected end of layer spec")?;
        *pos += 1;
        Ok(t.as_str())
    };
    let kind = next()?;
    match kind {
        "dense" => {
            let out = next()?.parse().map_err(|_| "bad dense width".to_string())?;
            Ok(LayerSpec::Dense { out })
        }
        "conv" => {
            let out_channels = next()?.parse().map_err(|_| "bad conv channels".to_string())?;
            let kernel = next()?.parse().map_err(|_| "bad conv kernel".to_string())?;
            let padding = match next()? {
                "same" => Padding::Same,
                "valid" => Padding::Valid,
                other => return Err(format!("unknown padding '{other}'")),
            };
            Ok(LayerSpec::Conv2D { out_channels, kernel, padding })
        }
        "avgpool" => {
            let stride = next()?.parse().map_err(|_| "bad avgpool stride".to_string())?;
            Ok(LayerSpec::AvgPool { stride })
        }
        "maxpool" => {
            let stride = next()?.parse().map_err(|_| "bad maxpool stride".to_string())?;
            Ok(LayerSpec::MaxPool { stride })
        }
        "sp" => {
            let raw = next()?;
            let beta = if raw == "inf" {
                f64::INFINITY
            } else {
                raw.parse().map_err(|_| format!("bad sharpness '{raw}'"))?
            };
            Ok(LayerSpec::SPActivation { beta })
        }
        "batchnorm" => {
            // Both numbers optional; defaults match the common convention.
            let mut eps = BATCHNORM_DEFAULT_EPS;
            let mut momentum = BATCHNORM_DEFAULT_MOMENTUM;
            if let Some(tok) = tokens.get(*pos) {
                if tok.parse::<f64>().is_ok() {
                    eps = tok.parse().unwrap();
                    *pos += 1;
                    if let Some(tok2) = tokens.get(*pos) {
                        if tok2.parse::<f64>().is_ok() {
                            momentum = tok2.parse().unwrap();
                            *pos += 1;
                        }
                    }
                }
            }
            Ok(LayerSpec::BatchNorm { eps, momentum })
        }
        "skip" => {
            if next()? != "{" {
                return Err("skip must be followed by '{'".into());
            }
            let mut inner = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some("}") => {
                        *pos += 1;
                        break;
                    }
                    Some(";") => {
                        *pos += 1;
                    }
                    Some(_) => inner.push(parse_layer_tokens(tokens, pos)?),
                    None => return Err("unterminated skip block".into()),
                }
            }
            if inner.is_empty() {
                return Err("skip block needs at least one inner layer".into());
            }
            Ok(LayerSpec::SkipBlock { inner })
        }
        "gap" => Ok(LayerSpec::GlobalAvgPool),
        "flatten" => Ok(LayerSpec::Flatten),
        other => Err(format!("unknown layer kind '{other}'")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            input: [1, 8, 8],
            classes: 2,
            layers: vec![
                LayerSpec::Conv2D { out_channels: 4, kernel: 3, padding: Padding::Same },
                LayerSpec::SPActivation { beta: 2.0 },
                LayerSpec::AvgPool { stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 2 },
            ],
        }
    }

    #[test]
    fn softplus_closed_forms() {
        assert_eq!(softplus(0.0, 1.0), std::f64::consts::LN_2);
        assert!((softplus(0.0, 4.0) - std::f64::consts::LN_2 / 4.0).abs() < 1e-15);
        // Large-argument behavior stays finite and tight.
        assert!((softplus(500.0, 1.0) - 500.0).abs() < 1e-12);
        assert!(softplus(-500.0, 1.0) >= 0.0);
        assert!(softplus(-500.0, 1.0) < 1e-200);
    }

    #[test]
    fn softplus_inf_is_exact_relu() {
        for x in [-3.0, -0.5, 0.0, 0.25, 7.0] {
            assert_eq!(softplus(x, f64::INFINITY), x.max(0.0));
            let step = if x > 0.0 { 1.0 } else { 0.0 };
            assert_eq!(softplus_deriv(x, f64::INFINITY), step);
        }
    }

    #[test]
    fn softplus_gap_to_relu_is_bounded_by_ln2_over_beta() {
        for beta in [0.9, 2.0, 7.0, 50.0] {
            let mut sup = 0.0_f64;
            for i in 0..=1000 {
                let x = -5.0 + 10.0 * i as f64 / 1000.0;
                sup = sup.max((softplus(x, beta) - x.max(0.0)).abs());
            }
            let bound = std::f64::consts::LN_2 / beta;
            assert!(sup <= bound + 1e-12, "beta {beta}: sup {sup} > {bound}");
            // The bound is attained at the kink.
            assert!((softplus(0.0, beta) - bound).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_tightens_monotonically_toward_relu() {
        let betas = [0.9, 3.0, 7.0, 40.0, f64::INFINITY];
        for i in 0..=100 {
            let x = -4.0 + 8.0 * i as f64 / 100.0;
            for pair in betas.windows(2) {
                assert!(
                    softplus(x, pair[0]) >= softplus(x, pair[1]) - 1e-15,
                    "x {x}: beta {} below beta {}",
                    pair[0],
                    pair[1]
                );
            }
            assert!(softplus(x, 0.9) >= x.max(0.0));
        }
    }

    #[test]
    fn softplus_deriv_is_logistic() {
        for (x, beta) in [(0.3_f64, 2.0_f64), (-1.5, 0.9), (4.0, 7.0)] {
            let expect = 1.0 / (1.0 + (-beta * x).exp());
            assert!((softplus_deriv(x, beta) - expect).abs() < 1e-15);
        }
        assert_eq!(softplus_deriv(0.0, 3.0), 0.5);
        assert_eq!(softplus_deriv(-800.0, 1.0), 0.0);
        assert_eq!(softplus_deriv(800.0, 1.0), 1.0);
    }

    #[test]
    fn validate_tracks_shapes_through_the_stack() {
        let shapes = small_cfg().validate().unwrap();
        assert_eq!(
            shapes,
            vec![
                vec![1, 8, 8],
                vec![4, 8, 8],
                vec![4, 8, 8],
                vec![4, 4, 4],
                vec![64],
                vec![2]
            ]
        );
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = small_cfg();
        cfg.layers[4] = LayerSpec::Dense { out: 3 };
        assert!(cfg.validate().is_err(), "head width must match classes");

        let mut cfg = small_cfg();
        cfg.layers[1] = LayerSpec::SPActivation { beta: 0.0 };
        assert!(cfg.validate().is_err(), "beta must be positive");

        let mut cfg = small_cfg();
        cfg.layers[1] = LayerSpec::SPActivation { beta: -2.0 };
        assert!(cfg.validate().is_err());

        let mut cfg = small_cfg();
        cfg.layers.insert(0, LayerSpec::Dense { out: 4 });
        assert!(cfg.validate().is_err(), "dense on rank-3 input");

        let mut cfg = small_cfg();
        cfg.layers[0] = LayerSpec::Conv2D { out_channels: 4, kernel: 4, padding: Padding::Same };
        assert!(cfg.validate().is_err(), "even kernel with same padding");

        let mut cfg = small_cfg();
        cfg.layers.insert(
            0,
            LayerSpec::SkipBlock { inner: vec![LayerSpec::Flatten] },
        );
        assert!(cfg.validate().is_err(), "skip inner must preserve shape");
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = ModelConfig {
            input: [3, 16, 16],
            classes: 4,
            layers: vec![
                LayerSpec::Conv2D { out_channels: 8, kernel: 3, padding: Padding::Same },
                LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
                LayerSpec::SPActivation { beta: 0.9 },
                LayerSpec::SkipBlock {
                    inner: vec![
                        LayerSpec::Conv2D { out_channels: 8, kernel: 3, padding: Padding::Same },
                        LayerSpec::SPActivation { beta: f64::INFINITY },
                    ],
                },
                LayerSpec::MaxPool { stride: 2 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 4 },
            ],
        };
        let text = cfg.to_text();
        let parsed = parse_config(&text).unwrap();
        assert_eq!(parsed, cfg);
        // And the serialization itself is stable.
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn parse_accepts_comments_and_ignores_foreign_keys() {
        let text = "\
# a run file
seed = 7
input = 1x4x4   # trailing comment
lr = 0.003
classes = 2
layer = flatten
layer = dense 2
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.input, [1, 4, 4]);
        assert_eq!(cfg.layers.len(), 2);
    }

    #[test]
    fn parse_rejects_malformed_layers() {
        let base = "input = 1x4x4\nclasses = 2\nlayer = flatten\nlayer = dense 2\n";
        assert!(parse_config(&format!("{base}layer = dense")).is_err());
        assert!(parse_config(&format!("{base}layer = conv 4 3 donut")).is_err());
        assert!(parse_config(&format!("{base}layer = warp 9")).is_err());
        assert!(parse_config(&format!("{base}layer = skip {{ flatten")).is_err());
        assert!(parse_config("classes = 2\nlayer = flatten\n").is_err(), "missing input");
    }

    #[test]
    fn nested_skip_blocks_parse_and_validate() {
        let text = "\
input = 2x6x6
classes = 2
layer = skip { conv 2 3 same ; skip { sp 1.5 } ; sp inf }
layer = gap
layer = dense 2
";
        let cfg = parse_config(text).unwrap();
        let LayerSpec::SkipBlock { inner } = &cfg.layers[0] else {
            panic!("expected skip block");
        };
        assert!(matches!(inner[1], LayerSpec::SkipBlock { .. }));
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn sharpness_round_trips_through_text_exactly() {
        for beta in [0.9, 3.0, 7.0, 1.0 / 3.0, f64::INFINITY] {
            let cfg = ModelConfig {
                input: [1, 2, 2],
                classes: 2,
                layers: vec![
                    LayerSpec::SPActivation { beta },
                    LayerSpec::Flatten,
                    LayerSpec::Dense { out: 2 },
                ],
            };
            let parsed = parse_config(&cfg.to_text()).unwrap();
            let LayerSpec::SPActivation { beta: got } = parsed.layers[0] else {
                panic!("expected activation");
            };
            assert_eq!(got.to_bits(), beta.to_bits());
        }
    }
}
