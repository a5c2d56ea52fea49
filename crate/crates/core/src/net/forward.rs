//! Forward evaluation with full traces for later backward passes.

use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::net::{softplus, LayerParams, LayerSpec, ModelConfig, Params};
use crate::tensor::Tensor;

/// Whether BatchNorm uses batch statistics (`Train`) or running statistics
/// (`Eval`). Everything else behaves identically in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train,
}

/// Per-layer record of one sample's forward pass: the tensor that entered
/// the layer, plus whatever the backward pass will need beyond it.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub input: Tensor,
    pub detail: TraceDetail,
}

#[derive(Debug, Clone)]
pub enum TraceDetail {
    None,
    /// The normalization statistics actually applied (batch stats in train
    /// mode, running stats in eval mode), one entry per channel or feature.
    Norm { mean: Vec<f64>, var: Vec<f64> },
    /// Traces of a skip block's inner stack.
    Block(Vec<LayerTrace>),
}

/// Everything recorded during one sample's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub logits: Tensor,
}

/// Runs one sample through the net, returning logits and the trace.
pub fn forward(
    cfg: &ModelConfig,
    params: &Params,
    x: &Tensor,
    mode: Mode,
) -> Result<(Tensor, ForwardTrace)> {
    let mut out = forward_batch(cfg, params, std::slice::from_ref(x), mode)?;
    Ok(out.pop().expect("one sample in, one result out"))
}

/// Runs a batch through the net layer by layer, so train-mode BatchNorm sees
/// statistics of the whole batch. Results are in input order; eval mode gives
/// the same numbers as running each sample alone.
pub fn forward_batch(
    cfg: &ModelConfig,
    params: &Params,
    xs: &[Tensor],
    mode: Mode,
) -> Result<Vec<(Tensor, ForwardTrace)>> {
    cfg.validate()?;
    if xs.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    if params.layers.len() != cfg.layers.len() {
        return Err(Error::shape(format!(
            "config has {} layers but params have {}",
            cfg.layers.len(),
            params.layers.len()
        )));
    }
    for x in xs {
        if x.shape() != cfg.input {
            return Err(Error::shape(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                cfg.input
            )));
        }
        if !x.all_finite() {
            return Err(Error::domain("input contains a non-finite value"));
        }
    }
    let states: Vec<Tensor> = xs.to_vec();
    let mut traces: Vec<Vec<LayerTrace>> = vec![Vec::with_capacity(cfg.layers.len()); xs.len()];
    let states = run_stack(&cfg.layers, &params.layers, states, mode, &mut traces)?;
    Ok(states
        .into_iter()
        .zip(traces)
        .map(|(logits, layers)| {
            let trace = ForwardTrace { layers, logits: logits.clone() };
            (logits, trace)
        })
        .collect())
}

/// Folds a batch's freshly computed normalization statistics into the running
/// statistics: `running <- (1 - momentum) * running + momentum * batch`.
///
/// The statistics are read from `trace` (any one sample's trace of the batch;
/// they are shared), so this is a no-op in structure for nets without
/// BatchNorm. Call once per optimization step after a train-mode forward.
pub fn update_running_stats(cfg: &ModelConfig, params: &mut Params, trace: &ForwardTrace) -> Result<()> {
    update_stack(&cfg.layers, &mut params.layers, &trace.layers)
}

fn update_stack(
    layers: &[LayerSpec],
    params: &mut [LayerParams],
    traces: &[LayerTrace],
) -> Result<()> {
    if layers.len() != traces.len() {
        return Err(Error::shape("trace does not match config"));
    }
    for (li, layer) in layers.iter().enumerate() {
        match (layer, &mut params[li], &traces[li].detail) {
            (
                LayerSpec::BatchNorm { momentum, .. },
                LayerParams::Norm { run_mean, run_var, .. },
                TraceDetail::Norm { mean, var },
            ) => {
                for (rm, &m) in run_mean.data_mut().iter_mut().zip(mean) {
                    *rm = (1.0 - momentum) * *rm + momentum * m;
                }
                for (rv, &v) in run_var.data_mut().iter_mut().zip(var) {
                    *rv = (1.0 - momentum) * *rv + momentum * v;
                }
            }
            (LayerSpec::SkipBlock { inner }, LayerParams::Block(inner_params), TraceDetail::Block(inner_trace)) => {
                update_stack(inner, inner_params, inner_trace)?;
            }
            (LayerSpec::SkipBlock { .. } | LayerSpec::BatchNorm { .. }, _, _) => {
                return Err(Error::shape("trace does not match config"));
            }
            _ => {}
        }
    }
    Ok(())
}

fn run_stack(
    layers: &[LayerSpec],
    params: &[LayerParams],
    mut states: Vec<Tensor>,
    mode: Mode,
    traces: &mut [Vec<LayerTrace>],
) -> Result<Vec<Tensor>> {
    for (li, layer) in layers.iter().enumerate() {
        let lp = &params[li];
        match layer {
            LayerSpec::BatchNorm { eps, .. } => {
                let LayerParams::Norm { gamma, beta, run_mean, run_var } = lp else {
                    return Err(Error::shape(format!("layer {li}: params are not norm params")));
                };
                let (mean, var) = match mode {
                    Mode::Train => batch_stats(&states),
                    Mode::Eval => (run_mean.data().to_vec(), run_var.data().to_vec()),
                };
                for (si, state) in states.iter_mut().enumerate() {
                    traces[si].push(LayerTrace {
                        input: state.clone(),
                        detail: TraceDetail::Norm { mean: mean.clone(), var: var.clone() },
                    });
                    *state = bn_apply(state, gamma, beta, &mean, &var, *eps);
                }
            }
            LayerSpec::SkipBlock { inner } => {
                let LayerParams::Block(inner_params) = lp else {
                    return Err(Error::shape(format!("layer {li}: params are not a block")));
                };
                let mut inner_traces: Vec<Vec<LayerTrace>> =
                    vec![Vec::with_capacity(inner.len()); states.len()];
                let inner_out =
                    run_stack(inner, inner_params, states.clone(), mode, &mut inner_traces)?;
                for (si, state) in states.iter_mut().enumerate() {
                    let input = state.clone();
                    let mut summed = inner_out[si].clone();
                    summed.add_scaled(state, 1.0)?;
                    traces[si].push(LayerTrace {
                        input,
                        detail: TraceDetail::Block(std::mem::take(&mut inner_traces[si])),
                    });
                    *state = summed;
                }
            }
            _ => {
                for (si, state) in states.iter_mut().enumerate() {
                    traces[si].push(LayerTrace { input: state.clone(), detail: TraceDetail::None });
                    *state = apply_simple(layer, lp, state, li)?;
                }
            }
        }
    }
    Ok(states)
}

fn apply_simple(layer: &LayerSpec, lp: &LayerParams, x: &Tensor, li: usize) -> Result<Tensor> {
    match layer {
        LayerSpec::Dense { .. } => {
            let LayerParams::Affine { w, b } = lp else {
                return Err(Error::shape(format!("layer {li}: params are not dense params")));
            };
            Ok(dense_forward(w, b, x))
        }
        LayerSpec::Conv2D { padding, .. } => {
            let LayerParams::Affine { w, b } = lp else {
                return Err(Error::shape(format!("layer {li}: params are not conv params")));
            };
            let mut out = conv2d(x, w, *padding)?;
            let [k, oh, ow] = out.shape() else { unreachable!() };
            let (k, oh, ow) = (*k, *oh, *ow);
            let plane = oh * ow;
            let data = out.data_mut();
            for ch in 0..k {
                let bias = b.data()[ch];
                for v in &mut data[ch * plane..(ch + 1) * plane] {
                    *v += bias;
                }
            }
            Ok(out)
        }
        LayerSpec::AvgPool { stride } => Ok(avgpool_forward(x, *stride)),
        LayerSpec::MaxPool { stride } => Ok(maxpool_forward(x, *stride)),
        LayerSpec::SPActivation { beta } => Ok(x.map(|v| softplus(v, *beta))),
        LayerSpec::GlobalAvgPool => Ok(gap_forward(x)),
        LayerSpec::Flatten => {
            let n = x.len();
            x.reshape(&[n])
        }
        LayerSpec::BatchNorm { .. } | LayerSpec::SkipBlock { .. } => {
            unreachable!("handled in run_stack")
        }
    }
}

fn dense_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Tensor {
    let [out, inp] = w.shape() else { panic!("dense weight must be [out, in]") };
    let (out, inp) = (*out, *inp);
    let mut y = b.clone();
    let ydata = y.data_mut();
    let xdata = x.data();
    let wdata = w.data();
    for o in 0..out {
        let row = &wdata[o * inp..(o + 1) * inp];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(xdata) {
            acc += wv * xv;
        }
        ydata[o] += acc;
    }
    y
}

fn avgpool_forward(x: &Tensor, s: usize) -> Tensor {
    let [c, h, w] = x.shape() else { panic!("pooling needs [C,H,W]") };
    let (c, h, w) = (*c, *h, *w);
    let (oh, ow) = (h / s, w / s);
    let inv = 1.0 / (s * s) as f64;
    Tensor::from_fn_idx(&[c, oh, ow], |idx| {
        let (ch, oy, ox) = (idx[0], idx[1], idx[2]);
        let mut acc = 0.0;
        for dy in 0..s {
            for dx in 0..s {
                acc += x.at(&[ch, oy * s + dy, ox * s + dx]);
            }
        }
        acc * inv
    })
}

fn maxpool_forward(x: &Tensor, s: usize) -> Tensor {
    let [c, h, w] = x.shape() else { panic!("pooling needs [C,H,W]") };
    let (c, _h, _w) = (*c, *h, *w);
    let (oh, ow) = (x.shape()[1] / s, x.shape()[2] / s);
    Tensor::from_fn_idx(&[c, oh, ow], |idx| {
        let (ch, oy, ox) = (idx[0], idx[1], idx[2]);
        let mut best = f64::NEG_INFINITY;
        for dy in 0..s {
            for dx in 0..s {
                let v = x.at(&[ch, oy * s + dy, ox * s + dx]);
                if v > best {
                    best = v;
                }
            }
        }
        best
    })
}

fn gap_forward(x: &Tensor) -> Tensor {
    let [c, h, w] = x.shape() else { panic!("gap needs [C,H,W]") };
    let (c, h, w) = (*c, *h, *w);
    let plane = h * w;
    let inv = 1.0 / plane as f64;
    Tensor::from_fn_idx(&[c], |idx| {
        let ch = idx[0];
        x.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>() * inv
    })
}

/// Per-channel (rank 3) or per-feature (rank 1) mean and biased variance
/// across the whole batch.
fn batch_stats(states: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let shape = states[0].shape();
    let (width, plane) = match shape {
        [c, h, w] => (*c, h * w),
        [d] => (*d, 1),
        _ => panic!("batchnorm input must be rank 1 or 3"),
    };
    let n = (states.len() * plane) as f64;
    let mut mean = vec![0.0; width];
    let mut var = vec![0.0; width];
    for state in states {
        for ch in 0..width {
            for &v in &state.data()[ch * plane..(ch + 1) * plane] {
                mean[ch] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for state in states {
        for ch in 0..width {
            for &v in &state.data()[ch * plane..(ch + 1) * plane] {
                let d = v - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

fn bn_apply(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], var: &[f64], eps: f64) -> Tensor {
    let plane = match x.shape() {
        [_c, h, w] => h * w,
        [_d] => 1,
        _ => panic!("batchnorm input must be rank 1 or 3"),
    };
    let mut out = x.clone();
    let data = out.data_mut();
    for ch in 0..mean.len() {
        let scale = gamma.data()[ch] / (var[ch] + eps).sqrt();
        let shift = beta.data()[ch] - mean[ch] * scale;
        for v in &mut data[ch * plane..(ch + 1) * plane] {
            *v = *v * scale + shift;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::Padding;
    use crate::net::he_init;

    fn dense_net(beta: f64) -> (ModelConfig, Params) {
        let cfg = ModelConfig {
            input: [1, 1, 3],
            classes: 2,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 4 },
                LayerSpec::SPActivation { beta },
                LayerSpec::Dense { out: 2 },
            ],
        };
        let params = he_init(&cfg, 21).unwrap();
        (cfg, params)
    }

    #[test]
    fn zero_weights_give_bias_logits() {
        let (cfg, params) = dense_net(2.0);
        let mut params = params.zeros_like();
        if let LayerParams::Affine { b, .. } = &mut params.layers[3] {
            b.data_mut().copy_from_slice(&[0.4, -1.1]);
        }
        let x = Tensor::filled(&[1, 1, 3], 0.7);
        let (logits, _) = forward(&cfg, &params, &x, Mode::Eval).unwrap();
        // With zero weights the hidden layer is softplus(0), but the zeroed
        // head wipes it out, leaving exactly the bias.
        assert_eq!(logits.data(), &[0.4, -1.1]);
    }

    #[test]
    fn dense_stack_matches_straight_line_oracle() {
        let (cfg, params) = dense_net(1.7);
        let x = Tensor::from_vec(&[1, 1, 3], vec![0.3, -0.8, 1.2]).unwrap();
        let (logits, _) = forward(&cfg, &params, &x, Mode::Eval).unwrap();

        let LayerParams::Affine { w: w1, b: b1 } = &params.layers[1] else { panic!() };
        let LayerParams::Affine { w: w2, b: b2 } = &params.layers[3] else { panic!() };
        let mut hidden = [0.0; 4];
        for o in 0..4 {
            let mut acc = b1.data()[o];
            for i in 0..3 {
                acc += w1.at(&[o, i]) * x.data()[i];
            }
            hidden[o] = (1.0 / 1.7) * (1.7 * acc).exp().ln_1p();
        }
        for o in 0..2 {
            let mut acc = b2.data()[o];
            for i in 0..4 {
                acc += w2.at(&[o, i]) * hidden[i];
            }
            assert!((logits.data()[o] - acc).abs() < 1e-12, "logit {o}");
        }
    }

    #[test]
    fn forward_is_deterministic_and_trace_carries_logits() {
        let cfg = ModelConfig {
            input: [2, 6, 6],
            classes: 3,
            layers: vec![
                LayerSpec::Conv2D { out_channels: 4, kernel: 3, padding: Padding::Same },
                LayerSpec::SPActivation { beta: 3.0 },
                LayerSpec::MaxPool { stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 3 },
            ],
        };
        let params = he_init(&cfg, 4).unwrap();
        let x = Tensor::from_fn_idx(&[2, 6, 6], |idx| (idx[0] + 2 * idx[1] + 3 * idx[2]) as f64 * 0.05 - 0.4);
        let (a, trace_a) = forward(&cfg, &params, &x, Mode::Eval).unwrap();
        let (b, _) = forward(&cfg, &params, &x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(trace_a.logits.data(), a.data());
        assert_eq!(trace_a.layers.len(), cfg.layers.len());
    }

    #[test]
    fn pooling_and_gap_values() {
        let x = Tensor::from_vec(
            &[1, 2, 4],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        )
        .unwrap();
        let avg = avgpool_forward(&x, 2);
        assert_eq!(avg.shape(), &[1, 1, 2]);
        assert_eq!(avg.data(), &[(1.0 + 2.0 + 5.0 + 6.0) / 4.0, (3.0 + 4.0 + 7.0 + 8.0) / 4.0]);
        let max = maxpool_forward(&x, 2);
        assert_eq!(max.data(), &[6.0, 8.0]);
        let gap = gap_forward(&x);
        assert_eq!(gap.data(), &[4.5]);
    }

    #[test]
    fn eval_batchnorm_is_the_expected_affine_map() {
        let cfg = ModelConfig {
            input: [2, 2, 2],
            classes: 2,
            layers: vec![
                LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 2 },
            ],
        };
        let mut params = he_init(&cfg, 8).unwrap();
        if let LayerParams::Norm { gamma, beta, run_mean, run_var } = &mut params.layers[0] {
            gamma.data_mut().copy_from_slice(&[1.5, 0.5]);
            beta.data_mut().copy_from_slice(&[0.25, -1.0]);
            run_mean.data_mut().copy_from_slice(&[0.3, -0.2]);
            run_var.data_mut().copy_from_slice(&[2.0, 0.5]);
        }
        let x = Tensor::from_fn_idx(&[2, 2, 2], |idx| idx[2] as f64 - 0.5 * idx[0] as f64);
        let (_, trace) = forward(&cfg, &params, &x, Mode::Eval).unwrap();
        // Check the normalized activation entering the gap layer.
        let normed = &trace.layers[1].input;
        for i in 0..4 {
            let v0 = x.data()[i];
            let expect0 = 1.5 * (v0 - 0.3) / (2.0_f64 + 1e-5).sqrt() + 0.25;
            assert!((normed.data()[i] - expect0).abs() < 1e-12);
            let v1 = x.data()[4 + i];
            let expect1 = 0.5 * (v1 + 0.2) / (0.5_f64 + 1e-5).sqrt() - 1.0;
            assert!((normed.data()[4 + i] - expect1).abs() < 1e-12);
        }
    }

    #[test]
    fn train_batchnorm_uses_whole_batch_statistics() {
        let cfg = ModelConfig {
            input: [1, 1, 2],
            classes: 2,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
                LayerSpec::Dense { out: 2 },
            ],
        };
        let params = he_init(&cfg, 1).unwrap();
        let xs = vec![
            Tensor::from_vec(&[1, 1, 2], vec![1.0, 10.0]).unwrap(),
            Tensor::from_vec(&[1, 1, 2], vec![3.0, 20.0]).unwrap(),
        ];
        let out = forward_batch(&cfg, &params, &xs, Mode::Train).unwrap();
        let TraceDetail::Norm { mean, var } = &out[0].1.layers[1].detail else {
            panic!("expected norm detail");
        };
        assert_eq!(mean, &[2.0, 15.0]);
        assert_eq!(var, &[1.0, 25.0]);
        // Normalized features: sample 0 is one sd below the mean in both.
        let normed = &out[0].1.layers[2].input;
        assert!((normed.data()[0] + 1.0).abs() < 1e-4);
        assert!((normed.data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let cfg = ModelConfig {
            input: [1, 1, 2],
            classes: 2,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.25 },
                LayerSpec::Dense { out: 2 },
            ],
        };
        let mut params = he_init(&cfg, 1).unwrap();
        let xs = vec![
            Tensor::from_vec(&[1, 1, 2], vec![1.0, 10.0]).unwrap(),
            Tensor::from_vec(&[1, 1, 2], vec![3.0, 20.0]).unwrap(),
        ];
        let out = forward_batch(&cfg, &params, &xs, Mode::Train).unwrap();
        update_running_stats(&cfg, &mut params, &out[0].1).unwrap();
        let LayerParams::Norm { run_mean, run_var, .. } = &params.layers[1] else { panic!() };
        // Started at mean 0, var 1; batch stats are (2, 15) and (1, 25).
        assert_eq!(run_mean.data(), &[0.25 * 2.0, 0.25 * 15.0]);
        assert_eq!(run_var.data(), &[0.75 + 0.25 * 1.0, 0.75 + 0.25 * 25.0]);
    }

    #[test]
    fn skip_block_adds_inner_output() {
        let cfg = ModelConfig {
            input: [1, 1, 3],
            classes: 3,
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::SkipBlock { inner: vec![LayerSpec::SPActivation { beta: 1.0 }] },
                LayerSpec::Dense { out: 3 },
            ],
        };
        let mut params = he_init(&cfg, 2).unwrap();
        // Identity head to read the skip output directly.
        if let LayerParams::Affine { w, .. } = &mut params.layers[2] {
            w.fill(0.0);
            for i in 0..3 {
                w.set(&[i, i], 1.0);
            }
        }
        let x = Tensor::from_vec(&[1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (logits, trace) = forward(&cfg, &params, &x, Mode::Eval).unwrap();
        for i in 0..3 {
            let v = x.data()[i];
            let expect = v + (1.0 + v.exp()).ln();
            assert!((logits.data()[i] - expect).abs() < 1e-12);
        }
        assert!(matches!(trace.layers[1].detail, TraceDetail::Block(ref inner) if inner.len() == 1));
    }

    #[test]
    fn batch_results_match_single_sample_eval() {
        let cfg = ModelConfig {
            input: [1, 4, 4],
            classes: 2,
            layers: vec![
                LayerSpec::Conv2D { out_channels: 3, kernel: 3, padding: Padding::Valid },
                LayerSpec::SPActivation { beta: f64::INFINITY },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 2 },
            ],
        };
        let params = he_init(&cfg, 13).unwrap();
        let xs: Vec<Tensor> = (0..4)
            .map(|s| Tensor::from_fn_idx(&[1, 4, 4], |idx| ((s + idx[1] * 4 + idx[2]) as f64).sin()))
            .collect();
        let batched = forward_batch(&cfg, &params, &xs, Mode::Eval).unwrap();
        for (x, (logits, _)) in xs.iter().zip(&batched) {
            let (single, _) = forward(&cfg, &params, x, Mode::Eval).unwrap();
            assert_eq!(single.data(), logits.data());
        }
    }

    #[test]
    fn shape_mismatch_and_empty_batch_are_rejected() {
        let (cfg, params) = dense_net(1.0);
        let bad = Tensor::zeros(&[1, 1, 4]);
        assert!(forward(&cfg, &params, &bad, Mode::Eval).is_err());
        assert!(forward_batch(&cfg, &params, &[], Mode::Eval).is_err());
        let nan = Tensor::filled(&[1, 1, 3], f64::NAN);
        assert!(forward(&cfg, &params, &nan, Mode::Eval).is_err());
    }
}
