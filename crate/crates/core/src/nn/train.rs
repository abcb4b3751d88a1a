//! Loss, gradients and the training loop.
//!
//! The loss is
//!
//! ```text
//! (1/B) Σ_j ‖y_j − ŷ_j‖² + λ_w Σ_k ‖W_k‖²_F + β_s Σ_{logsig hidden units} KL(ρ* ‖ ρ̂)
//! ```
//!
//! where `ρ̂` is a unit's mean activation over the batch. Batches are processed
//! in fixed column chunks so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, FeedforwardNet, ForwardPass, Gradients, Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::exec::{chunks, Exec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// AdaBound's limiting step size.
    pub final_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub sparsity_weight: f64,
    pub sparsity_target: f64,
    /// Drop probability on hidden-layer outputs; 0 disables dropout.
    pub dropout: f64,
    pub rng_seed: u64,
    /// Full batch only: reject steps that raise the data loss and halve the
    /// learning rate instead.
    pub monotone: bool,
    /// Stop when the loss has not improved by `plateau_tol` (relative) for
    /// this many epochs; 0 disables early stopping.
    pub plateau_window: usize,
    pub plateau_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adabound,
            learning_rate: 1e-3,
            final_lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 5000,
            batch_size: 0,
            weight_decay: 0.0,
            sparsity_weight: 0.0,
            sparsity_target: 0.05,
            dropout: 0.0,
            rng_seed: 0,
            monotone: false,
            plateau_window: 500,
            plateau_tol: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) || !positive(self.epsilon) {
            return Err(Error::invalid("learning rate and epsilon must be positive"));
        }
        if self.optimizer == OptimizerKind::Adabound && !positive(self.final_lr) {
            return Err(Error::invalid("AdaBound final_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.sparsity_weight < 0.0 {
            return Err(Error::invalid("regularization weights must be nonnegative"));
        }
        if self.sparsity_weight > 0.0 && !(self.sparsity_target > 0.0 && self.sparsity_target < 1.0) {
            return Err(Error::invalid("sparsity target must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout probability must lie in [0, 1)"));
        }
        if self.monotone && (self.batch_size != 0 || self.dropout > 0.0) {
            return Err(Error::invalid(
                "monotone descent needs full-batch training without dropout",
            ));
        }
        Ok(())
    }

    fn optimizer(&self, n_params: usize) -> Optimizer {
        Optimizer::new(
            self.optimizer,
            n_params,
            self.learning_rate,
            self.final_lr,
            self.beta1,
            self.beta2,
            self.epsilon,
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub weight: f64,
    pub sparsity: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.weight + self.sparsity
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Total loss per epoch, before that epoch's update.
    pub losses: Vec<f64>,
    /// Data term per epoch.
    pub data_losses: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub rejected_steps: usize,
    /// Loss of the returned parameters on the full data, without dropout.
    pub final_loss: LossBreakdown,
}

/// `KL(ρ* ‖ ρ̂)` for Bernoulli means, with `ρ̂` clamped away from 0 and 1.
pub(crate) fn kl_divergence(target: f64, mean: f64) -> f64 {
    let m = mean.clamp(1e-12, 1.0 - 1e-12);
    target * (target / m).ln() + (1.0 - target) * ((1.0 - target) / (1.0 - m)).ln()
}

fn kl_slope(target: f64, mean: f64) -> f64 {
    let m = mean.clamp(1e-12, 1.0 - 1e-12);
    -target / m + (1.0 - target) / (1.0 - m)
}

/// Layers whose mean activation is penalized: hidden logsig layers.
fn sparse_layers(net: &FeedforwardNet) -> Vec<usize> {
    let depth = net.layers().len();
    (0..depth.saturating_sub(1))
        .filter(|&k| net.layers()[k].activation == Activation::Logsig)
        .collect()
}

fn weight_penalty(net: &FeedforwardNet, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * net.layers().iter().map(|l| l.weights.norm_squared()).sum::<f64>()
}

fn check_data(net: &FeedforwardNet, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() != net.input_dim() || targets.nrows() != net.output_dim() {
        return Err(Error::dim(format!(
            "network maps {} -> {}, data is {} -> {}",
            net.input_dim(),
            net.output_dim(),
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if inputs.ncols() != targets.ncols() || inputs.ncols() == 0 {
        return Err(Error::dim("inputs and targets need the same nonzero number of columns"));
    }
    Ok(())
}

fn slice_masks(masks: Option<&[Option<DMatrix<f64>>]>, start: usize, width: usize) -> Option<Vec<Option<DMatrix<f64>>>> {
    masks.map(|ms| {
        ms.iter()
            .map(|m| m.as_ref().map(|m| m.columns(start, width).into_owned()))
            .collect()
    })
}

fn loss_impl(
    net: &FeedforwardNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
    exec: Exec,
    masks: Option<&[Option<DMatrix<f64>>]>,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    check_data(net, inputs, targets)?;
    let batch = inputs.ncols();
    let bf = batch as f64;
    let parts = chunks(batch);
    let passes: Vec<ForwardPass> = exec.try_map(parts.len(), |c| {
        let (start, width) = parts[c];
        let local = slice_masks(masks, start, width);
        net.forward_masked(&inputs.columns(start, width).into_owned(), local.as_deref())
    })?;

    let mut data = 0.0;
    for (pass, &(start, width)) in passes.iter().zip(&parts) {
        data += (pass.output() - targets.columns(start, width)).norm_squared();
    }
    data /= bf;

    let sparse = if cfg.sparsity_weight > 0.0 {
        sparse_layers(net)
    } else {
        Vec::new()
    };
    let mut sparsity = 0.0;
    let mut hidden_slopes: Vec<Option<DVector<f64>>> = vec![None; net.layers().len()];
    for &k in &sparse {
        let width = net.layers()[k].outputs();
        let mut sums = DVector::zeros(width);
        for pass in &passes {
            for col in pass.post[k].column_iter() {
                sums += col;
            }
        }
        let means = sums / bf;
        sparsity += cfg.sparsity_weight
            * means.iter().map(|&m| kl_divergence(cfg.sparsity_target, m)).sum::<f64>();
        hidden_slopes[k] = Some(means.map(|m| cfg.sparsity_weight * kl_slope(cfg.sparsity_target, m) / bf));
    }

    let loss = LossBreakdown {
        data,
        weight: weight_penalty(net, cfg.weight_decay),
        sparsity,
    };
    if !want_grad {
        return Ok((loss, None));
    }

    let partials = exec.map(parts.len(), |c| {
        let (start, width) = parts[c];
        let pass = &passes[c];
        let out_grad = (pass.output() - targets.columns(start, width)) * (2.0 / bf);
        let extras: Vec<Option<DMatrix<f64>>> = hidden_slopes
            .iter()
            .map(|s| {
                s.as_ref()
                    .map(|v| DMatrix::from_fn(v.len(), width, |i, _| v[i]))
            })
            .collect();
        net.backward(pass, &out_grad, Some(&extras))
    });
    let mut grads = Gradients::zeros_like(net);
    for g in &partials {
        grads.add_assign(g);
    }
    if cfg.weight_decay > 0.0 {
        for (g, l) in grads.weights.iter_mut().zip(net.layers()) {
            *g += &l.weights * (2.0 * cfg.weight_decay);
        }
    }
    Ok((loss, Some(grads)))
}

/// Loss terms without gradients (no dropout).
pub fn evaluate_loss(
    net: &FeedforwardNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<LossBreakdown> {
    Ok(loss_impl(net, inputs, targets, cfg, exec, None, false)?.0)
}

/// Loss terms and their exact gradient (no dropout).
pub fn loss_and_gradient(
    net: &FeedforwardNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(LossBreakdown, Gradients)> {
    let (loss, grads) = loss_impl(net, inputs, targets, cfg, exec, None, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

fn dropout_masks<R: Rng>(net: &FeedforwardNet, batch: usize, p: f64, rng: &mut R) -> Vec<Option<DMatrix<f64>>> {
    let depth = net.layers().len();
    let keep = 1.0 - p;
    net.layers()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            (k + 1 < depth).then(|| {
                DMatrix::from_fn(l.outputs(), batch, |_, _| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
        })
        .collect()
}

struct Plateau {
    best: f64,
    best_epoch: usize,
}

impl Plateau {
    fn stalled(&mut self, epoch: usize, loss: f64, cfg: &TrainConfig) -> bool {
        if loss < self.best * (1.0 - cfg.plateau_tol) || epoch == 0 {
            self.best = loss;
            self.best_epoch = epoch;
        }
        cfg.plateau_window > 0 && epoch - self.best_epoch >= cfg.plateau_window
    }
}

/// Trains `net` in place; deterministic for a fixed `rng_seed`.
pub fn train(
    net: &mut FeedforwardNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainTrace> {
    cfg.validate()?;
    check_data(net, inputs, targets)?;
    let n = inputs.ncols();
    let full_batch = cfg.batch_size == 0 || cfg.batch_size >= n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut opt = cfg.optimizer(net.num_params());
    let mut params = net.flatten();
    let mut trace = TrainTrace::default();
    let mut plateau = Plateau {
        best: f64::INFINITY,
        best_epoch: 0,
    };

    let diverged = |epoch: usize, trace: &TrainTrace| Error::Diverged {
        epoch,
        trace: trace.losses.clone(),
    };

    if cfg.monotone {
        let (mut loss, mut grads) = loss_and_gradient(net, inputs, targets, cfg, exec)?;
        if !loss.total().is_finite() {
            return Err(diverged(0, &trace));
        }
        for epoch in 0..cfg.epochs {
            trace.losses.push(loss.total());
            trace.data_losses.push(loss.data);
            trace.epochs_run = epoch + 1;
            if plateau.stalled(epoch, loss.total(), cfg) {
                trace.stopped_early = true;
                break;
            }
            let snapshot = opt.clone();
            let mut candidate = params.clone();
            opt.step(&mut candidate, &grads.flatten());
            net.set_flat(&candidate)?;
            let (c_loss, c_grads) = loss_and_gradient(net, inputs, targets, cfg, exec)?;
            if c_loss.total().is_finite() && c_loss.data <= loss.data {
                params = candidate;
                loss = c_loss;
                grads = c_grads;
            } else {
                net.set_flat(&params)?;
                opt = snapshot;
                opt.scale_learning_rate(0.5);
                trace.rejected_steps += 1;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        let batch = if full_batch { n } else { cfg.batch_size };
        for epoch in 0..cfg.epochs {
            if !full_batch {
                order.shuffle(&mut rng);
            }
            let mut epoch_total = 0.0;
            let mut epoch_data = 0.0;
            for idx in order.chunks(batch) {
                let (x, y) = if full_batch {
                    (inputs.clone(), targets.clone())
                } else {
                    (inputs.select_columns(idx), targets.select_columns(idx))
                };
                let masks = (cfg.dropout > 0.0).then(|| dropout_masks(net, idx.len(), cfg.dropout, &mut rng));
                let (loss, grads) = loss_impl(net, &x, &y, cfg, exec, masks.as_deref(), true)?;
                if !loss.total().is_finite() {
                    return Err(diverged(epoch, &trace));
                }
                let w = idx.len() as f64 / n as f64;
                epoch_total += w * loss.total();
                epoch_data += w * loss.data;
                opt.step(&mut params, &grads.expect("gradient requested").flatten());
                net.set_flat(&params)?;
            }
            trace.losses.push(epoch_total);
            trace.data_losses.push(epoch_data);
            trace.epochs_run = epoch + 1;
            if plateau.stalled(epoch, epoch_total, cfg) {
                trace.stopped_early = true;
                break;
            }
        }
    }

    let final_loss = evaluate_loss(net, inputs, targets, cfg, exec)?;
    if !final_loss.total().is_finite() {
        return Err(diverged(trace.epochs_run, &trace));
    }
    trace.final_loss = final_loss;
    Ok(trace)
}

/// Result of comparing backprop against central finite differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub params_checked: usize,
}

/// Central differences of the total loss with step `h`, compared entry-wise
/// with backprop. The relative error of a component is
/// `|g − g_fd| / max(|g|, |g_fd|, floor)` with `floor = 1e-3·max_i |g_i|`.
pub fn finite_difference_check(
    net: &FeedforwardNet,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    cfg: &TrainConfig,
    h: f64,
) -> Result<GradientCheck> {
    let (_, grads) = loss_and_gradient(net, inputs, targets, cfg, Exec::Sequential)?;
    let analytic = grads.flatten();
    let base = net.flatten();
    let mut probe = net.clone();
    let mut numeric = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat(&p)?;
        let up = evaluate_loss(&probe, inputs, targets, cfg, Exec::Sequential)?.total();
        p[i] = base[i] - h;
        probe.set_flat(&p)?;
        let down = evaluate_loss(&probe, inputs, targets, cfg, Exec::Sequential)?.total();
        numeric[i] = (up - down) / (2.0 * h);
    }
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    for (a, b) in analytic.iter().zip(&numeric) {
        let err = (a - b).abs();
        max_abs = max_abs.max(err);
        max_rel = max_rel.max(err / a.abs().max(b.abs()).max(floor));
    }
    Ok(GradientCheck {
        max_relative_error: max_rel,
        max_abs_error: max_abs,
        params_checked: base.len(),
    })
}
