//! Losses, Adam, the mini-batch training loop and evaluation.
//!
//! Each window's loss is `mse + kl + nll`, where `mse` averages the squared
//! residuals over the `K` outputs and `nll` sums the Gaussian negative
//! log-likelihood over them. A batch's objective is the mean window loss plus
//! `λ Σ θ²`. Windows run on independent tapes and their gradients are summed
//! in batch order, which keeps training bitwise deterministic.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::AttentionSummary;
use crate::checkpoint::Checkpoint;
use crate::config::{ModelConfig, SolverConfig, Variant};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::latent::{kl_divergence, kl_on_tape, Posterior};
use crate::model::{BoundModel, EtnModel, LatentMode};
use crate::odenet::TimeGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

fn ln_2pi() -> f64 {
    (2.0 * std::f64::consts::PI).ln()
}

fn check_pair(op: &'static str, yhat: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    let shape = |m: &[Vec<f64>]| vec![m.len(), m.first().map_or(0, Vec::len)];
    if yhat.is_empty()
        || yhat.len() != y.len()
        || yhat.iter().zip(y).any(|(a, b)| a.len() != b.len() || a.is_empty())
        || yhat.iter().any(|r| r.len() != yhat[0].len())
    {
        return Err(Error::shape(op, &shape(yhat), &shape(y)));
    }
    Ok(yhat.len())
}

/// `(1/L) Σ_i (1/K) Σ_t (ŷ − y)²`.
pub fn loss_mse(yhat: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let l = check_pair("loss_mse", yhat, y)?;
    let total: f64 = yhat
        .iter()
        .zip(y)
        .map(|(a, b)| {
            a.iter().zip(b).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / a.len() as f64
        })
        .sum();
    Ok(total / l as f64)
}

/// `(1/L) Σ_i Σ_t [½ ln(2πs²) + (y − ŷ)² / (2s²)]`.
pub fn loss_nll(yhat: &[Vec<f64>], y: &[Vec<f64>], s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::contract(format!("noise std must be positive, got {s}")));
    }
    let l = check_pair("loss_nll", yhat, y)?;
    let constant = 0.5 * (ln_2pi() + (s * s).ln());
    let total: f64 = yhat
        .iter()
        .zip(y)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(p, t)| constant + (p - t).powi(2) / (2.0 * s * s))
                .sum::<f64>()
        })
        .sum();
    Ok(total / l as f64)
}

/// `loss_mse + mean KL + loss_nll + l2_penalty`. An empty `posteriors` slice
/// means there is no latent term.
pub fn loss_total(
    yhat: &[Vec<f64>],
    y: &[Vec<f64>],
    posteriors: &[Posterior],
    s: f64,
    l2_penalty: f64,
) -> Result<f64> {
    let mse = loss_mse(yhat, y)?;
    let nll = loss_nll(yhat, y, s)?;
    let kl = if posteriors.is_empty() {
        0.0
    } else {
        if posteriors.len() != yhat.len() {
            return Err(Error::shape("loss_total posteriors", &[posteriors.len()], &[yhat.len()]));
        }
        let mut sum = 0.0;
        for p in posteriors {
            sum += kl_divergence(p)?;
        }
        sum / posteriors.len() as f64
    };
    Ok(mse + kl + nll + l2_penalty)
}

/// `λ Σ θ²` over every parameter tensor.
pub fn l2_penalty(model: &EtnModel, lambda: f64) -> f64 {
    lambda
        * model
            .named_tensors()
            .iter()
            .map(|(_, t)| t.sum_squares())
            .sum::<f64>()
}

/// Loss terms of one window, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct WindowLoss {
    pub total: Var,
    pub mse: Var,
    pub nll: Var,
    pub kl: Option<Var>,
    pub yhat: Var,
}

/// Records the loss of one window with normalized `targets` at `grid`.
#[allow(clippy::too_many_arguments)]
pub fn window_loss(
    tape: &mut Tape,
    bound: &BoundModel,
    input: &Tensor,
    targets: &[f64],
    grid: &TimeGrid,
    solver: &SolverConfig,
    latent: LatentMode<'_>,
    noise_std: f64,
) -> Result<WindowLoss> {
    if targets.len() != grid.len() {
        return Err(Error::shape("window_loss targets", &[targets.len()], &[grid.len()]));
    }
    if !(noise_std > 0.0) {
        return Err(Error::contract(format!("noise std must be positive, got {noise_std}")));
    }
    let fwd = bound.forward(tape, input, grid, solver, latent)?;
    let k = targets.len() as f64;
    let y = tape.constant(Tensor::column(targets));
    let r = tape.sub(fwd.yhat, y)?;
    let r2 = tape.square(r)?;
    let ssq = tape.sum(r2)?;
    let mse = tape.scale(ssq, 1.0 / k)?;
    let quad = tape.scale(ssq, 0.5 / (noise_std * noise_std))?;
    let nll = tape.shift(quad, k * 0.5 * (ln_2pi() + (noise_std * noise_std).ln()))?;
    let kl = match fwd.posterior {
        Some((mu, sigma)) => Some(kl_on_tape(tape, mu, sigma)?),
        None => None,
    };
    let mut total = tape.add(mse, nll)?;
    if let Some(kl) = kl {
        total = tape.add(total, kl)?;
    }
    Ok(WindowLoss {
        total,
        mse,
        nll,
        kl,
        yhat: fwd.yhat,
    })
}

/// `λ Σ θ²` on the tape.
pub fn l2_on_tape(tape: &mut Tape, params: &[Var], lambda: f64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &p in params {
        let sq = tape.square(p)?;
        let s = tape.sum(sq)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
    }
    let acc = acc.ok_or_else(|| Error::contract("no parameters to regularize"))?;
    tape.scale(acc, lambda)
}

/// One training example: normalized inputs, targets at `1..=K` and the
/// standard-normal draw used for the latent sample (absent for `no_ode`).
#[derive(Clone, Debug)]
pub struct WindowSample {
    pub input: Tensor,
    pub targets: Vec<f64>,
    pub noise: Option<Vec<f64>>,
}

impl WindowSample {
    fn latent(&self) -> LatentMode<'_> {
        match &self.noise {
            Some(n) => LatentMode::Sample(n),
            None => LatentMode::Mean,
        }
    }
}

/// The full batch objective on a single tape. Used as the reference for the
/// per-window gradients of [`batch_gradients`] and for gradient checks.
pub fn batch_objective(
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &[WindowSample],
    cfg: &ModelConfig,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let grid = TimeGrid::integers(cfg.horizon)?;
    let mut acc: Option<Var> = None;
    for s in batch {
        let wl = window_loss(
            tape,
            bound,
            &s.input,
            &s.targets,
            &grid,
            &cfg.solver,
            s.latent(),
            cfg.noise_std,
        )?;
        acc = Some(match acc {
            Some(a) => tape.add(a, wl.total)?,
            None => wl.total,
        });
    }
    let mean = tape.scale(acc.unwrap(), 1.0 / batch.len() as f64)?;
    let l2 = l2_on_tape(tape, &bound.params, cfg.l2)?;
    tape.add(mean, l2)
}

/// Gradient and loss terms of one batch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    /// In [`EtnModel::named_tensors`] order.
    pub grads: Vec<Tensor>,
    /// Mean window loss plus the L2 penalty.
    pub loss: f64,
    pub mse: f64,
    pub nll: f64,
    pub kl: f64,
    /// Normalized residuals `ŷ − y`, one row per window.
    pub residuals: Vec<Vec<f64>>,
}

/// Gradients of the batch objective, one tape per window.
pub fn batch_gradients(model: &EtnModel, batch: &[WindowSample], cfg: &ModelConfig) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let grid = TimeGrid::integers(cfg.horizon)?;
    let named = model.named_tensors();
    let mut grads: Vec<Tensor> = named.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    let inv = 1.0 / batch.len() as f64;
    let (mut loss, mut mse, mut nll, mut kl) = (0.0, 0.0, 0.0, 0.0);
    let mut residuals = Vec::with_capacity(batch.len());
    for s in batch {
        let mut tape = Tape::new().with_finite_checks(false);
        let bound = model.bind(&mut tape);
        let wl = window_loss(
            &mut tape,
            &bound,
            &s.input,
            &s.targets,
            &grid,
            &cfg.solver,
            s.latent(),
            cfg.noise_std,
        )?;
        let g = tape.backward(wl.total)?;
        for (acc, &p) in grads.iter_mut().zip(&bound.params) {
            if let Some(gp) = g.get(p) {
                let mut gp = gp.clone();
                gp.scale_in_place(inv);
                acc.add_assign(&gp)?;
            }
        }
        loss += tape.value(wl.total).item();
        mse += tape.value(wl.mse).item();
        nll += tape.value(wl.nll).item();
        kl += wl.kl.map_or(0.0, |k| tape.value(k).item());
        residuals.push(
            tape.value(wl.yhat)
                .data()
                .iter()
                .zip(&s.targets)
                .map(|(p, t)| p - t)
                .collect(),
        );
    }
    for (g, (_, t)) in grads.iter_mut().zip(&named) {
        let mut decay = (*t).clone();
        decay.scale_in_place(2.0 * cfg.l2);
        g.add_assign(&decay)?;
    }
    Ok(BatchResult {
        grads,
        loss: loss * inv + l2_penalty(model, cfg.l2),
        mse: mse * inv,
        nll: nll * inv,
        kl: kl * inv,
        residuals,
    })
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments for parameters of the given shapes.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: ADAM_BETAS.0,
            beta2: ADAM_BETAS.1,
            eps: ADAM_EPS,
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when a gradient is
/// non-finite.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient for parameter tensor {i}")));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            _ => Err(Error::contract(format!("unknown split `{s}`"))),
        }
    }
}

/// One row of the metrics history. RMSE and MAE are in raw target units;
/// loss terms are on the normalized scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub rmse: f64,
    pub mae: f64,
    pub loss: f64,
    pub kl: f64,
    pub nll: f64,
    pub mse: f64,
}

pub const METRICS_HEADER: [&str; 8] = ["epoch", "split", "rmse", "mae", "loss", "kl", "nll", "mse"];

impl EpochMetrics {
    pub fn record(&self) -> [String; 8] {
        [
            self.epoch.to_string(),
            self.split.to_string(),
            self.rmse.to_string(),
            self.mae.to_string(),
            self.loss.to_string(),
            self.kl.to_string(),
            self.nll.to_string(),
            self.mse.to_string(),
        ]
    }
}

/// Pooled raw-unit error and mean loss terms over a set of windows.
#[derive(Default)]
struct Accumulator {
    sq: f64,
    abs: f64,
    count: usize,
    windows: usize,
    loss: f64,
    mse: f64,
    nll: f64,
    kl: f64,
}

impl Accumulator {
    fn residuals(&mut self, normalized: &[f64], scale: f64) {
        for r in normalized {
            let raw = r * scale;
            self.sq += raw * raw;
            self.abs += raw.abs();
            self.count += 1;
        }
    }

    fn finish(&self, epoch: usize, split: Split, l2: f64) -> EpochMetrics {
        let n = self.windows.max(1) as f64;
        let c = self.count.max(1) as f64;
        EpochMetrics {
            epoch,
            split,
            rmse: (self.sq / c).sqrt(),
            mae: self.abs / c,
            loss: self.loss / n + l2,
            kl: self.kl / n,
            nll: self.nll / n,
            mse: self.mse / n,
        }
    }
}

fn check_dataset(cfg: &ModelConfig, data: &WindowedDataset) -> Result<()> {
    if data.window() != cfg.window || data.horizon() != cfg.horizon {
        return Err(Error::contract(format!(
            "dataset windows (T = {}, K = {}) do not match the config (T = {}, K = {})",
            data.window(),
            data.horizon(),
            cfg.window,
            cfg.horizon
        )));
    }
    Ok(())
}

/// Deterministic metrics over `windows` with the posterior mean as latent state.
fn split_metrics(
    model: &EtnModel,
    cfg: &ModelConfig,
    data: &WindowedDataset,
    windows: Range<usize>,
    epoch: usize,
    split: Split,
) -> Result<EpochMetrics> {
    let grid = TimeGrid::integers(cfg.horizon)?;
    let scale = data.stats.last().unwrap().std;
    let mut acc = Accumulator::default();
    for i in windows {
        let mut tape = Tape::new().with_finite_checks(false);
        let bound = model.bind(&mut tape);
        let targets = data.targets(i);
        let wl = window_loss(
            &mut tape,
            &bound,
            &data.input(i),
            &targets,
            &grid,
            &cfg.solver,
            LatentMode::Mean,
            cfg.noise_std,
        )?;
        let res: Vec<f64> = tape
            .value(wl.yhat)
            .data()
            .iter()
            .zip(&targets)
            .map(|(p, t)| p - t)
            .collect();
        acc.residuals(&res, scale);
        acc.windows += 1;
        acc.loss += tape.value(wl.total).item();
        acc.mse += tape.value(wl.mse).item();
        acc.nll += tape.value(wl.nll).item();
        acc.kl += wl.kl.map_or(0.0, |k| tape.value(k).item());
    }
    Ok(acc.finish(epoch, split, l2_penalty(model, cfg.l2)))
}

/// Trains from a seeded initialization and returns the checkpoint with the
/// best validation RMSE (training RMSE when there is no validation split).
pub fn train(cfg: &ModelConfig, data: &WindowedDataset) -> Result<Checkpoint> {
    cfg.validate()?;
    check_dataset(cfg, data)?;
    if data.train.is_empty() {
        return Err(Error::contract("the training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EtnModel::init(cfg, data.width(), &mut rng);
    let mut adam = AdamState::new(model.named_tensors().into_iter().map(|(_, t)| t));
    let scale = data.stats.last().unwrap().std;
    let sample_latent = cfg.variant != Variant::NoOde;

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, EtnModel)> = None;
    let mut order: Vec<usize> = data.train.clone().collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = Accumulator::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<WindowSample> = chunk
                .iter()
                .map(|&i| WindowSample {
                    input: data.input(i),
                    targets: data.targets(i),
                    noise: sample_latent
                        .then(|| (0..cfg.latent).map(|_| StandardNormal.sample(&mut rng)).collect()),
                })
                .collect();
            let res = match batch_gradients(&model, &batch, cfg) {
                Ok(r) => r,
                Err(Error::Numeric(msg)) => {
                    return Err(Error::Numeric(format!("training diverged in epoch {epoch}: {msg}")))
                }
                Err(e) => return Err(e),
            };
            if !res.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged in epoch {epoch}: loss is {}",
                    res.loss
                )));
            }
            let n = batch.len() as f64;
            acc.windows += batch.len();
            acc.loss += (res.loss - l2_penalty(&model, cfg.l2)) * n;
            acc.mse += res.mse * n;
            acc.nll += res.nll * n;
            acc.kl += res.kl * n;
            for r in &res.residuals {
                acc.residuals(r, scale);
            }
            let mut params = model.tensors_mut();
            match adam_step(&mut adam, &mut params, &res.grads, cfg.learning_rate) {
                Ok(()) => {}
                Err(Error::Numeric(msg)) => log::warn!("epoch {epoch}: skipped batch: {msg}"),
                Err(e) => return Err(e),
            }
        }
        let train_row = acc.finish(epoch, Split::Train, l2_penalty(&model, cfg.l2));
        history.push(train_row);
        let score = if data.validation.is_empty() {
            train_row.rmse
        } else {
            let row = split_metrics(&model, cfg, data, data.validation.clone(), epoch, Split::Validation)?;
            history.push(row);
            row.rmse
        };
        log::info!(
            "epoch {epoch}: train rmse {:.6} loss {:.6}, selection rmse {score:.6}",
            train_row.rmse,
            train_row.loss
        );
        if !score.is_finite() {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}: rmse is {score}")));
        }
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, epoch, model) = best.ok_or_else(|| Error::contract("training needs at least one epoch"))?;
    Checkpoint::new(cfg.clone(), data.names().to_vec(), data.stats.clone(), model, epoch, history)
}

/// Error metrics at one offset, in raw target units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetMetrics {
    pub offset: f64,
    pub rmse: f64,
    pub mae: f64,
    pub count: usize,
}

pub fn offset_metrics(offset: f64, residuals: &[f64]) -> OffsetMetrics {
    let n = residuals.len().max(1) as f64;
    OffsetMetrics {
        offset,
        rmse: (residuals.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
        mae: residuals.iter().map(|r| r.abs()).sum::<f64>() / n,
        count: residuals.len(),
    }
}

/// Test windows with ground truth at every grid offset.
pub fn evaluation_windows(data: &WindowedDataset, grid: &TimeGrid) -> Result<Vec<usize>> {
    let windows: Vec<usize> = data
        .test
        .clone()
        .filter(|&i| grid.offsets().iter().all(|&m| data.truth(i, m).is_some()))
        .collect();
    if windows.is_empty() {
        return Err(Error::contract(format!(
            "no test windows have ground truth at offsets {:?} (test split has {} windows)",
            grid.offsets(),
            data.test.len()
        )));
    }
    Ok(windows)
}

/// Normalized predictions of one window at `grid`, using the posterior mean.
pub fn predict_window(model: &EtnModel, solver: &SolverConfig, input: &Tensor, grid: &TimeGrid) -> Result<Vec<f64>> {
    let mut tape = Tape::new().with_finite_checks(false);
    let bound = model.bind(&mut tape);
    let fwd = bound.forward(&mut tape, input, grid, solver, LatentMode::Mean)?;
    let out = tape.value(fwd.yhat);
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    Ok(out.data().to_vec())
}

/// Raw-unit predictions for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub window: usize,
    pub window_end: usize,
    pub values: Vec<f64>,
}

pub fn predict(ckpt: &Checkpoint, data: &WindowedDataset, grid: &TimeGrid, windows: &[usize]) -> Result<Vec<Prediction>> {
    check_dataset(&ckpt.config, data)?;
    windows
        .iter()
        .map(|&i| {
            let normalized = predict_window(&ckpt.model, &ckpt.config.solver, &data.input(i), grid)?;
            Ok(Prediction {
                window: i,
                window_end: data.window_end(i),
                values: normalized.iter().map(|&v| data.denormalize_target(v)).collect(),
            })
        })
        .collect()
}

fn metrics_from(
    data: &WindowedDataset,
    grid: &TimeGrid,
    windows: &[usize],
    preds: impl Fn(usize, usize) -> f64,
) -> Vec<OffsetMetrics> {
    grid.offsets()
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let residuals: Vec<f64> = windows
                .iter()
                .enumerate()
                .map(|(w, &i)| preds(w, k) - data.denormalize_target(data.truth(i, m).unwrap()))
                .collect();
            offset_metrics(m, &residuals)
        })
        .collect()
}

/// Per-offset RMSE and MAE over the evaluable test windows.
pub fn evaluate(ckpt: &Checkpoint, data: &WindowedDataset, grid: &TimeGrid) -> Result<Vec<OffsetMetrics>> {
    let windows = evaluation_windows(data, grid)?;
    let preds = predict(ckpt, data, grid, &windows)?;
    Ok(metrics_from(data, grid, &windows, |w, k| preds[w].values[k]))
}

/// Metrics of repeating the last observed target at every offset.
pub fn persistence_baseline(data: &WindowedDataset, grid: &TimeGrid) -> Result<Vec<OffsetMetrics>> {
    let windows = evaluation_windows(data, grid)?;
    Ok(metrics_from(data, grid, &windows, |w, _| {
        data.denormalize_target(data.last_target(windows[w]))
    }))
}

/// Attention weights averaged over `windows`.
pub fn attention_summary(ckpt: &Checkpoint, data: &WindowedDataset, windows: &[usize]) -> Result<AttentionSummary> {
    check_dataset(&ckpt.config, data)?;
    if ckpt.model.attention.is_none() {
        return Err(Error::contract(format!(
            "the {} variant has no attention weights",
            ckpt.config.variant
        )));
    }
    let grid = TimeGrid::integers(ckpt.config.horizon)?;
    let mut items: Vec<(Tensor, Vec<f64>)> = Vec::with_capacity(windows.len());
    for &i in windows {
        let mut tape = Tape::new().with_finite_checks(false);
        let bound = ckpt.model.bind(&mut tape);
        let fwd = bound.forward(&mut tape, &data.input(i), &grid, &ckpt.config.solver, LatentMode::Mean)?;
        let att = fwd.attention.expect("attention present");
        items.push((
            tape.value(att.alpha).clone(),
            tape.value(att.beta).data().to_vec(),
        ));
    }
    AttentionSummary::average(items.iter().map(|(a, b)| (a, b.as_slice())))
}
