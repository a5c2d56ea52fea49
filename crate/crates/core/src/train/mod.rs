//! Minibatch training with cross-entropy loss and accuracy-capped stopping.
//!
//! The trainer exists to produce models at a *controlled* skill level: runs
//! stop the moment validation accuracy reaches the cap, so differently
//! configured nets can be compared at matched accuracy instead of matched
//! epochs. Everything is bit-deterministic given the seed: shuffles come from
//! per-epoch child streams, and no parallelism touches the update order.

use crate::error::{Error, Result};
use crate::net::{
    backward_from_seed, forward_batch, update_running_stats, Mode, ModelConfig, Params,
};
use crate::rng::rng_fork;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop as soon as end-of-epoch validation accuracy reaches this value.
    /// `None` always runs the full `max_epochs`.
    pub accuracy_cap: Option<f64>,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 3e-3,
            batch_size: 32,
            max_epochs: 50,
            accuracy_cap: None,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

/// One history row, written after the evaluation that closes an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based index of the completed epoch.
    pub step: usize,
    /// Mean training loss over the epoch's samples.
    pub train_loss: f64,
    /// Validation accuracy measured after the epoch.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: Params,
    pub history: Vec<EpochRecord>,
    /// True when the accuracy cap ended the run before `max_epochs`.
    pub capped: bool,
}

/// Trains `params` in place and evaluates at the end of every epoch.
///
/// The evaluation cadence is part of the contract: no evaluation happens
/// before the first epoch, one happens after every epoch, and the run ends
/// immediately when one meets the cap, so a cap of `0.0` yields exactly one
/// epoch of training and one history row.
pub fn fit(
    cfg: &ModelConfig,
    mut params: Params,
    train_x: &[Tensor],
    train_y: &[usize],
    val_x: &[Tensor],
    val_y: &[usize],
    opts: &TrainOptions,
) -> Result<TrainResult> {
    cfg.validate()?;
    check_split(cfg, train_x, train_y, "training")?;
    check_split(cfg, val_x, val_y, "validation")?;
    if opts.lr <= 0.0 || !opts.lr.is_finite() {
        return Err(Error::domain(format!("learning rate must be positive, got {}", opts.lr)));
    }
    if opts.batch_size == 0 {
        return Err(Error::domain("batch size must be at least 1"));
    }
    if opts.max_epochs == 0 {
        return Err(Error::domain("need at least one epoch"));
    }

    let mut opt_state = OptState::new(&params, opts.optimizer);
    let mut history = Vec::new();
    let mut capped = false;
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 0..opts.max_epochs {
        let mut shuffle_rng = rng_fork(opts.seed, epoch as u64);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let xs: Vec<Tensor> = batch.iter().map(|&i| train_x[i].clone()).collect();
            let outs = forward_batch(cfg, &params, &xs, Mode::Train)?;
            update_running_stats(cfg, &mut params, &outs[0].1)?;

            let mut grad_sum = params.zeros_like();
            let inv = 1.0 / batch.len() as f64;
            for (bi, &i) in batch.iter().enumerate() {
                let (logits, trace) = &outs[bi];
                let (loss, mut seed) = cross_entropy(logits, train_y[i])?;
                loss_sum += loss;
                seed.scale(inv);
                let (_, gp) = backward_from_seed(cfg, &params, trace, &seed, false)?;
                grad_sum.add_scaled(&gp, 1.0)?;
            }
            opt_state.step(&mut params, &grad_sum, opts.lr)?;
        }

        let (_, accuracy) = evaluate(cfg, &params, val_x, val_y)?;
        history.push(EpochRecord {
            step: epoch + 1,
            train_loss: loss_sum / train_x.len() as f64,
            val_accuracy: accuracy,
        });
        if opts.accuracy_cap.is_some_and(|cap| accuracy >= cap) {
            capped = true;
            break;
        }
    }
    Ok(TrainResult { params, history, capped })
}

/// Mean cross-entropy loss and accuracy over a labeled set, in eval mode.
/// Accuracy counts `argmax(logits) == label`, first maximal logit winning
/// ties, so an all-constant model scores exactly the frequency of class 0.
pub fn evaluate(
    cfg: &ModelConfig,
    params: &Params,
    xs: &[Tensor],
    ys: &[usize],
) -> Result<(f64, f64)> {
    check_split(cfg, xs, ys, "evaluation")?;
    let mut loss_sum = 0.0;
    let mut hits = 0usize;
    for (x, &y) in xs.iter().zip(ys) {
        let outs = forward_batch(cfg, params, std::slice::from_ref(x), Mode::Eval)?;
        let logits = &outs[0].0;
        let (loss, _) = cross_entropy(logits, y)?;
        loss_sum += loss;
        if argmax(logits.data()) == y {
            hits += 1;
        }
    }
    Ok((loss_sum / xs.len() as f64, hits as f64 / xs.len() as f64))
}

fn check_split(cfg: &ModelConfig, xs: &[Tensor], ys: &[usize], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::domain(format!("{what} set is empty")));
    }
    if xs.len() != ys.len() {
        return Err(Error::shape(format!(
            "{what} set has {} images but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    if let Some(&bad) = ys.iter().find(|&&y| y >= cfg.classes) {
        return Err(Error::domain(format!(
            "{what} label {bad} out of range for {} classes",
            cfg.classes
        )));
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss and its logit-space gradient (`softmax - onehot`) for one sample,
/// computed through log-sum-exp so large logits cannot overflow.
fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let l = logits.data();
    if label >= l.len() {
        return Err(Error::domain(format!("label {label} out of range")));
    }
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = l.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + z.ln();
    let loss = lse - l[label];
    let mut grad = logits.map(|v| (v - lse).exp());
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

enum OptState {
    Sgd,
    Adam { m: Params, v: Params, t: u64 },
}

impl OptState {
    fn new(params: &Params, kind: Optimizer) -> OptState {
        match kind {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => OptState::Adam {
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) -> Result<()> {
        match self {
            OptState::Sgd => params.add_scaled(grads, -lr),
            OptState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t as i32);
                let c2 = 1.0 - B2.powi(*t as i32);
                let mut pts = params.tensors_mut();
                let mut mts = m.tensors_mut();
                let mut vts = v.tensors_mut();
                let gts = grads.tensors();
                if pts.len() != gts.len() {
                    return Err(Error::shape("parameter structures do not match"));
                }
                for i in 0..pts.len() {
                    let p = pts[i].data_mut();
                    let mm = mts[i].data_mut();
                    let vv = vts[i].data_mut();
                    let g = gts[i].data();
                    if p.len() != g.len() {
                        return Err(Error::shape("parameter structures do not match"));
                    }
                    for j in 0..p.len() {
                        mm[j] = B1 * mm[j] + (1.0 - B1) * g[j];
                        vv[j] = B2 * vv[j] + (1.0 - B2) * g[j] * g[j];
                        let mhat = mm[j] / c1;
                        let vhat = vv[j] / c2;
                        p[j] -= lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{he_init, LayerSpec};
    use crate::rng::rng_fork;

    /// Two well-separated Gaussian blobs as `[2,1,1]` feature tensors.
    fn blobs(n_per_class: usize, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
        let mut rng = rng_fork(seed, 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let center = if class == 0 { 0.3 } else { 0.7 };
            let a = (center + rng.normal_scaled(0.0, 0.08)).clamp(0.0, 1.0);
            let b = (center + rng.normal_scaled(0.0, 0.08)).clamp(0.0, 1.0);
            xs.push(Tensor::from_vec(&[2, 1, 1], vec![a, b]).unwrap());
            ys.push(class);
        }
        (xs, ys)
    }

    fn blob_cfg() -> ModelConfig {
        ModelConfig {
            input: [2, 1, 1],
            classes: 2,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out: 2 }],
        }
    }

    #[test]
    fn constant_model_scores_the_class_frequency_exactly() {
        let cfg = ModelConfig {
            input: [1, 1, 4],
            classes: 10,
            layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out: 10 }],
        };
        let params = he_init(&cfg, 0).unwrap().zeros_like();
        let mut rng = rng_fork(1, 0);
        let xs: Vec<Tensor> = (0..100)
            .map(|_| Tensor::from_fn(&[1, 1, 4], |_| rng.uniform()))
            .collect();
        let ys: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let (loss, acc) = evaluate(&cfg, &params, &xs, &ys).unwrap();
        // All logits are zero, so argmax is always class 0, which is exactly
        // a tenth of this balanced set, and the loss is ln(10) exactly.
        assert_eq!(acc, 0.10);
        assert!((loss - (10.0_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cap_zero_stops_after_exactly_one_epoch() {
        let (xs, ys) = blobs(20, 3);
        let cfg = blob_cfg();
        let params = he_init(&cfg, 3).unwrap();
        let opts = TrainOptions {
            accuracy_cap: Some(0.0),
            max_epochs: 50,
            optimizer: Optimizer::Sgd,
            lr: 0.1,
            batch_size: 8,
            seed: 3,
        };
        let result = fit(&cfg, params, &xs, &ys, &xs, &ys, &opts).unwrap();
        assert_eq!(result.history.len(), 1);
        assert_eq!(result.history[0].step, 1);
        assert!(result.capped);
    }

    #[test]
    fn no_cap_runs_all_epochs() {
        let (xs, ys) = blobs(10, 5);
        let cfg = blob_cfg();
        let params = he_init(&cfg, 5).unwrap();
        let opts = TrainOptions {
            accuracy_cap: None,
            max_epochs: 4,
            optimizer: Optimizer::Sgd,
            lr: 0.1,
            batch_size: 4,
            seed: 5,
        };
        let result = fit(&cfg, params, &xs, &ys, &xs, &ys, &opts).unwrap();
        assert_eq!(result.history.len(), 4);
        assert_eq!(result.history.last().unwrap().step, 4);
        assert!(!result.capped);
    }

    #[test]
    fn separable_blobs_reach_a_high_cap_quickly() {
        let (train_x, train_y) = blobs(40, 7);
        let (val_x, val_y) = blobs(40, 8);
        let cfg = blob_cfg();
        let params = he_init(&cfg, 7).unwrap();
        let opts = TrainOptions {
            accuracy_cap: Some(0.95),
            max_epochs: 20,
            optimizer: Optimizer::Sgd,
            lr: 0.5,
            batch_size: 8,
            seed: 7,
        };
        let result = fit(&cfg, params, &train_x, &train_y, &val_x, &val_y, &opts).unwrap();
        assert!(result.capped, "cap not reached in 20 epochs: {:?}", result.history);
        assert!(result.history.last().unwrap().val_accuracy >= 0.95);
        // No training happens after the cap is met, so the history ends at
        // the capping epoch.
        assert!(result.history.len() <= 20);
    }

    #[test]
    fn adam_reaches_the_cap_too() {
        let (train_x, train_y) = blobs(40, 11);
        let cfg = blob_cfg();
        let params = he_init(&cfg, 11).unwrap();
        let opts = TrainOptions {
            accuracy_cap: Some(0.95),
            max_epochs: 30,
            optimizer: Optimizer::Adam,
            lr: 0.05,
            batch_size: 8,
            seed: 11,
        };
        let result = fit(&cfg, params, &train_x, &train_y, &train_x, &train_y, &opts).unwrap();
        assert!(result.capped, "history: {:?}", result.history);
    }

    #[test]
    fn training_loss_falls() {
        let (xs, ys) = blobs(30, 13);
        let cfg = blob_cfg();
        let params = he_init(&cfg, 13).unwrap();
        let opts = TrainOptions {
            accuracy_cap: None,
            max_epochs: 10,
            optimizer: Optimizer::Sgd,
            lr: 0.3,
            batch_size: 10,
            seed: 13,
        };
        let result = fit(&cfg, params, &xs, &ys, &xs, &ys, &opts).unwrap();
        let first = result.history.first().unwrap().train_loss;
        let last = result.history.last().unwrap().train_loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn training_is_bit_deterministic_in_the_seed() {
        let (xs, ys) = blobs(15, 17);
        let cfg = blob_cfg();
        let opts = TrainOptions {
            accuracy_cap: None,
            max_epochs: 3,
            optimizer: Optimizer::Adam,
            lr: 0.01,
            batch_size: 4,
            seed: 17,
        };
        let run = |seed: u64| {
            let params = he_init(&cfg, 21).unwrap();
            let mut o = opts.clone();
            o.seed = seed;
            fit(&cfg, params, &xs, &ys, &xs, &ys, &o).unwrap()
        };
        let a = run(17);
        let b = run(17);
        let c = run(18);
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert!(a.params != c.params, "different shuffle seeds must diverge");
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (xs, ys) = blobs(5, 0);
        let cfg = blob_cfg();
        let params = he_init(&cfg, 0).unwrap();
        let opts = TrainOptions::default();
        assert!(fit(&cfg, params.clone(), &[], &[], &xs, &ys, &opts).is_err());
        assert!(fit(&cfg, params.clone(), &xs, &ys[..4], &xs, &ys, &opts).is_err());
        let bad_labels = vec![9; xs.len()];
        assert!(evaluate(&cfg, &params, &xs, &bad_labels).is_err());
        let mut o = opts.clone();
        o.lr = 0.0;
        assert!(fit(&cfg, params, &xs, &ys, &xs, &ys, &o).is_err());
    }

    #[test]
    fn cross_entropy_is_stable_at_extreme_logits() {
        let logits = Tensor::from_vec(&[2], vec![1000.0, -1000.0]).unwrap();
        let (loss, grad) = cross_entropy(&logits, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.all_finite());
        let (loss_wrong, _) = cross_entropy(&logits, 1).unwrap();
        assert!((loss_wrong - 2000.0).abs() < 1e-9);
    }
}
