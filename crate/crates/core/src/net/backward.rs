//! Reverse-mode differentiation over forward traces.
//!
//! One engine serves three callers: input gradients for saliency maps,
//! parameter gradients for training and tangent-kernel rows, and the guided
//! variant that clamps the upstream signal to be nonnegative at every
//! activation before gating.
//!
//! BatchNorm is differentiated with its statistics frozen at the values the
//! forward pass recorded. For eval mode that is exact (the layer is affine);
//! for train mode it ignores the dependence of the batch statistics on the
//! sample, which is the usual small-batch shortcut.

use crate::conv::Padding;
use crate::error::{Error, Result};
use crate::net::{softplus_deriv, LayerParams, LayerSpec, ModelConfig, Params};
use crate::net::forward::{forward, ForwardTrace, LayerTrace, Mode, TraceDetail};
use crate::tensor::Tensor;

/// Gradient of `logits[class]` with respect to the input, in eval mode.
pub fn input_gradient(cfg: &ModelConfig, params: &Params, x: &Tensor, class: usize) -> Result<Tensor> {
    let (_, trace) = forward(cfg, params, x, Mode::Eval)?;
    let seed = onehot(cfg, class)?;
    let (gx, _) = backward_from_seed(cfg, params, &trace, &seed, false)?;
    Ok(gx)
}

/// Guided variant of [`input_gradient`]: at every activation layer the
/// incoming gradient is clamped to be nonnegative before the usual gate is
/// applied, so only positively contributing paths survive.
pub fn guided_input_gradient(
    cfg: &ModelConfig,
    params: &Params,
    x: &Tensor,
    class: usize,
) -> Result<Tensor> {
    let (_, trace) = forward(cfg, params, x, Mode::Eval)?;
    let seed = onehot(cfg, class)?;
    let (gx, _) = backward_from_seed(cfg, params, &trace, &seed, true)?;
    Ok(gx)
}

/// Gradient of `logits[class]` with respect to every parameter, in eval mode.
/// Running statistics get zero gradient.
pub fn param_gradient(cfg: &ModelConfig, params: &Params, x: &Tensor, class: usize) -> Result<Params> {
    let (_, trace) = forward(cfg, params, x, Mode::Eval)?;
    let seed = onehot(cfg, class)?;
    let (_, gp) = backward_from_seed(cfg, params, &trace, &seed, false)?;
    Ok(gp)
}

fn onehot(cfg: &ModelConfig, class: usize) -> Result<Tensor> {
    if class >= cfg.classes {
        return Err(Error::domain(format!(
            "class {class} out of range for {} classes",
            cfg.classes
        )));
    }
    let mut seed = Tensor::zeros(&[cfg.classes]);
    seed.set(&[class], 1.0);
    Ok(seed)
}

/// Backpropagates an arbitrary logit-space gradient through a recorded trace,
/// returning the input gradient and the parameter gradients.
///
/// `seed` must have shape `[classes]`. This is the shared engine: training
/// seeds it with the loss gradient, attribution seeds it with a one-hot.
pub fn backward_from_seed(
    cfg: &ModelConfig,
    params: &Params,
    trace: &ForwardTrace,
    seed: &Tensor,
    guided: bool,
) -> Result<(Tensor, Params)> {
    if seed.shape() != [cfg.classes] {
        return Err(Error::shape(format!(
            "seed gradient shape {:?} must be [{}]",
            seed.shape(),
            cfg.classes
        )));
    }
    if trace.layers.len() != cfg.layers.len() {
        return Err(Error::shape("trace does not match config"));
    }
    let mut grads = params.zeros_like();
    let gx = backprop_stack(
        &cfg.layers,
        &params.layers,
        &trace.layers,
        seed.clone(),
        guided,
        &mut grads.layers,
    )?;
    Ok((gx, grads))
}

pub(crate) fn backprop_stack(
    layers: &[LayerSpec],
    params: &[LayerParams],
    traces: &[LayerTrace],
    mut g: Tensor,
    guided: bool,
    grads: &mut [LayerParams],
) -> Result<Tensor> {
    for li in (0..layers.len()).rev() {
        let x = &traces[li].input;
        g = match (&layers[li], &params[li], &mut grads[li]) {
            (LayerSpec::Dense { .. }, LayerParams::Affine { w, .. }, LayerParams::Affine { w: gw, b: gb }) => {
                dense_backward(w, x, &g, gw, gb)
            }
            (
                LayerSpec::Conv2D { kernel, padding, .. },
                LayerParams::Affine { w, .. },
                LayerParams::Affine { w: gw, b: gb },
            ) => conv_backward(w, x, &g, *kernel, *padding, gw, gb),
            (LayerSpec::AvgPool { stride }, _, _) => avgpool_backward(x, &g, *stride),
            (LayerSpec::MaxPool { stride }, _, _) => maxpool_backward(x, &g, *stride),
            (LayerSpec::SPActivation { beta }, _, _) => {
                let gate = if guided { g.map(|v| v.max(0.0)) } else { g };
                let mut out = gate;
                for (gv, &xv) in out.data_mut().iter_mut().zip(x.data()) {
                    *gv *= softplus_deriv(xv, *beta);
                }
                out
            }
            (
                LayerSpec::BatchNorm { eps, .. },
                LayerParams::Norm { gamma, .. },
                LayerParams::Norm { gamma: ggamma, beta: gbeta, .. },
            ) => {
                let TraceDetail::Norm { mean, var } = &traces[li].detail else {
                    return Err(Error::shape("trace does not match config"));
                };
                bn_backward(x, &g, gamma, mean, var, *eps, ggamma, gbeta)
            }
            (LayerSpec::SkipBlock { inner }, LayerParams::Block(ip), LayerParams::Block(ig)) => {
                let TraceDetail::Block(itr) = &traces[li].detail else {
                    return Err(Error::shape("trace does not match config"));
                };
                let g_inner = backprop_stack(inner, ip, itr, g.clone(), guided, ig)?;
                let mut out = g;
                out.add_scaled(&g_inner, 1.0)?;
                out
            }
            (LayerSpec::GlobalAvgPool, _, _) => {
                let [c, h, w] = x.shape() else { unreachable!() };
                let inv = 1.0 / ((h * w) as f64);
                let (c, h, w) = (*c, *h, *w);
                Tensor::from_fn_idx(&[c, h, w], |idx| g.data()[idx[0]] * inv)
            }
            (LayerSpec::Flatten, _, _) => g.reshape(x.shape())?,
            _ => return Err(Error::shape(format!("layer {li}: params do not match config"))),
        };
    }
    Ok(g)
}

fn dense_backward(w: &Tensor, x: &Tensor, g: &Tensor, gw: &mut Tensor, gb: &mut Tensor) -> Tensor {
    let [out, inp] = w.shape() else { panic!("dense weight must be [out, in]") };
    let (out, inp) = (*out, *inp);
    let mut gx = Tensor::zeros(&[inp]);
    for o in 0..out {
        let gv = g.data()[o];
        gb.data_mut()[o] += gv;
        if gv == 0.0 {
            continue;
        }
        let row = &w.data()[o * inp..(o + 1) * inp];
        let grow = &mut gw.data_mut()[o * inp..(o + 1) * inp];
        let gxd = gx.data_mut();
        for i in 0..inp {
            grow[i] += gv * x.data()[i];
            gxd[i] += gv * row[i];
        }
    }
    gx
}

fn conv_backward(
    w: &Tensor,
    x: &Tensor,
    g: &Tensor,
    kernel: usize,
    padding: Padding,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Tensor {
    let [c, h, wd] = x.shape() else { panic!("conv input must be [C,H,W]") };
    let (c, h, wd) = (*c, *h, *wd);
    let [k, oh, ow] = g.shape() else { panic!("conv gradient must be [K,H,W]") };
    let (k, oh, ow) = (*k, *oh, *ow);
    let pad = match padding {
        Padding::Same => (kernel - 1) / 2,
        Padding::Valid => 0,
    };
    let mut gx = Tensor::zeros(&[c, h, wd]);
    for ko in 0..k {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g.at(&[ko, oy, ox]);
                gb.data_mut()[ko] += gv;
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    for dy in 0..kernel {
                        let iy = (oy + dy).wrapping_sub(pad);
                        if iy >= h {
                            continue;
                        }
                        for dx in 0..kernel {
                            let ix = (ox + dx).wrapping_sub(pad);
                            if ix >= wd {
                                continue;
                            }
                            let widx = [ko, ci, dy, dx];
                            let xidx = [ci, iy, ix];
                            let wv = w.at(&widx);
                            let xv = x.at(&xidx);
                            let wo = offset4(gw, &widx);
                            gw.data_mut()[wo] += gv * xv;
                            let o = offset3(&gx, &xidx);
                            gx.data_mut()[o] += gv * wv;
                        }
                    }
                }
            }
        }
    }
    gx
}

fn offset3(t: &Tensor, idx: &[usize; 3]) -> usize {
    let s = t.shape();
    (idx[0] * s[1] + idx[1]) * s[2] + idx[2]
}

fn offset4(t: &Tensor, idx: &[usize; 4]) -> usize {
    let s = t.shape();
    ((idx[0] * s[1] + idx[1]) * s[2] + idx[2]) * s[3] + idx[3]
}

fn avgpool_backward(x: &Tensor, g: &Tensor, s: usize) -> Tensor {
    let [c, h, w] = x.shape() else { panic!("pooling input must be [C,H,W]") };
    let (c, h, w) = (*c, *h, *w);
    let [_, oh, ow] = g.shape() else { panic!("pooling gradient must be [C,H,W]") };
    let (oh, ow) = (*oh, *ow);
    let inv = 1.0 / ((s * s) as f64);
    let mut gx = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g.at(&[ch, oy, ox]) * inv;
                for dy in 0..s {
                    for dx in 0..s {
                        let o = offset3(&gx, &[ch, oy * s + dy, ox * s + dx]);
                        gx.data_mut()[o] += gv;
                    }
                }
            }
        }
    }
    gx
}

fn maxpool_backward(x: &Tensor, g: &Tensor, s: usize) -> Tensor {
    let [c, h, w] = x.shape() else { panic!("pooling input must be [C,H,W]") };
    let (c, h, w) = (*c, *h, *w);
    let [_, oh, ow] = g.shape() else { panic!("pooling gradient must be [C,H,W]") };
    let (oh, ow) = (*oh, *ow);
    let mut gx = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                // Recompute the argmax with the forward pass's scan order:
                // strictly-greater comparison keeps the first maximal entry.
                let mut best = f64::NEG_INFINITY;
                let mut at = (0, 0);
                for dy in 0..s {
                    for dx in 0..s {
                        let v = x.at(&[ch, oy * s + dy, ox * s + dx]);
                        if v > best {
                            best = v;
                            at = (oy * s + dy, ox * s + dx);
                        }
                    }
                }
                let o = offset3(&gx, &[ch, at.0, at.1]);
                gx.data_mut()[o] += g.at(&[ch, oy, ox]);
            }
        }
    }
    gx
}

#[allow(clippy::too_many_arguments)]
fn bn_backward(
    x: &Tensor,
    g: &Tensor,
    gamma: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
    ggamma: &mut Tensor,
    gbeta: &mut Tensor,
) -> Tensor {
    let plane = match x.shape() {
        [_c, h, w] => h * w,
        [_d] => 1,
        _ => panic!("batchnorm input must be rank 1 or 3"),
    };
    let mut gx = x.clone();
    for ch in 0..mean.len() {
        let inv_sd = 1.0 / (var[ch] + eps).sqrt();
        let scale = gamma.data()[ch] * inv_sd;
        let mut sum_g = 0.0;
        let mut sum_gxhat = 0.0;
        for p in ch * plane..(ch + 1) * plane {
            let gv = g.data()[p];
            sum_g += gv;
            sum_gxhat += gv * (x.data()[p] - mean[ch]) * inv_sd;
            gx.data_mut()[p] = gv * scale;
        }
        ggamma.data_mut()[ch] += sum_gxhat;
        gbeta.data_mut()[ch] += sum_g;
    }
    gx
}
