//! Full-batch Adam training over one or more scenarios.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffnet::{Checkpoint, DiffNet, InputNormalization, NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::node::{node_adjoint_grad_with, BackwardMode};
use crate::odeint::SolverConfig;
use crate::systems::Scenario;
use crate::trase::trase_adjoint_grad_with;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// State-only loss with the vanilla adjoint.
    #[serde(rename = "NODE", alias = "node")]
    Node,
    /// Joint state/sensitivity loss with the augmented adjoint.
    #[serde(rename = "TRASE", alias = "trase")]
    Trase,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    #[serde(serialize_with = "crate::fmt17::serialize_vec")]
    pub m: Vec<f64>,
    #[serde(serialize_with = "crate::fmt17::serialize_vec")]
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. A non-finite gradient is
/// reported as a divergence and leaves everything untouched.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    Error::check_dim("gradient", params.len(), grad.len())?;
    Error::check_dim("adam moments", params.len(), state.m.len())?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { t: f64::NAN });
    }
    state.step += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub mode: Mode,
    pub net: NetSpec,
    pub scenarios: Vec<Scenario>,
    pub epochs: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Rescale the summed gradient to at most this norm.
    pub clip_grad_norm: Option<f64>,
    pub backward_mode: BackwardMode,
}

impl TrainConfig {
    /// Defaults: 3000 epochs, Adam(1e-3, 0.9, 0.999, 1e-8), unit loss
    /// weights, RK4 with 1000 steps over the first scenario's horizon.
    pub fn new(mode: Mode, net: NetSpec, scenarios: Vec<Scenario>) -> Self {
        let horizon = scenarios.first().map_or(1.0, |s| s.grid.horizon());
        TrainConfig {
            mode,
            net,
            scenarios,
            epochs: 3000,
            lr: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            solver: SolverConfig::training(if horizon > 0.0 { horizon } else { 1.0 }),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            clip_grad_norm: None,
            backward_mode: BackwardMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::Config(
                "at least one training scenario is required".into(),
            ));
        }
        for (i, sc) in self.scenarios.iter().enumerate() {
            sc.validate()
                .map_err(|e| Error::Config(format!("scenario {i}: {e}")))?;
            if sc.state_dim() != self.net.output_dim || sc.exo_dim() != self.net.exo_dim {
                return Err(Error::Config(format!(
                    "scenario {i} has {} states / {} exogenous channels, network expects {} / {}",
                    sc.state_dim(),
                    sc.exo_dim(),
                    self.net.output_dim,
                    self.net.exo_dim
                )));
            }
        }
        if self.mode == Mode::Trase && !self.scenarios.iter().any(Scenario::has_sensitivities) {
            return Err(Error::Config(
                "TRASE mode needs at least one scenario with sensitivities".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if let Some(c) = self.clip_grad_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config("clip_grad_norm must be positive".into()));
            }
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config(
                "checkpoint_every set without a checkpoint directory".into(),
            ));
        }
        self.loss_weights.validate(self.net.output_dim)?;
        self.solver.validate()
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub final_params: ParamVector,
    /// Seconds.
    pub wall_time: f64,
    pub diverged: bool,
    pub final_lr: f64,
}

/// Summed loss and gradient over all scenarios at `params`.
pub fn batch_gradient(
    cfg: &TrainConfig,
    net: &DiffNet,
    params: &ParamVector,
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> = cfg
        .scenarios
        .par_iter()
        .map(|sc| {
            let r = match cfg.mode {
                Mode::Node => node_adjoint_grad_with(
                    net,
                    params,
                    sc,
                    &cfg.solver,
                    &cfg.loss_weights,
                    cfg.backward_mode,
                ),
                Mode::Trase => trase_adjoint_grad_with(
                    net,
                    params,
                    sc,
                    &cfg.solver,
                    &cfg.loss_weights,
                    cfg.backward_mode,
                ),
            }?;
            Ok((r.loss, r.grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.param_count()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { t: f64::NAN });
    }
    Ok((loss, grad))
}

fn clip(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// Runs `cfg.epochs` full-batch Adam epochs from `init_params(net, seed)`.
///
/// If a gradient evaluation diverges, the previous update is undone and
/// redone once with half the learning rate; a second divergence stops the
/// run with `diverged = true`.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let net = DiffNet::new(cfg.net.clone())?;
    let mut params = net.init_params(cfg.seed);
    let mut adam = AdamState::new(net.param_count());
    let mut lr = cfg.lr;
    let mut halved = false;
    let mut diverged = false;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut previous: Option<(ParamVector, AdamState, Vec<f64>)> = None;

    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    while history.len() < cfg.epochs {
        match batch_gradient(cfg, &net, &params) {
            Ok((loss, mut grad)) => {
                history.push(loss);
                clip(&mut grad, cfg.clip_grad_norm);
                let snapshot = (params.clone(), adam.clone(), grad.clone());
                adam_step(params.as_mut_slice(), &grad, &mut adam, &cfg.hyper(lr))?;
                previous = Some(snapshot);
                let epoch = history.len();
                log::debug!("epoch {epoch} loss {loss:.6e}");
                if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                    if let Some(dir) = &cfg.checkpoint_dir {
                        let mut ck = Checkpoint::new(cfg.net.clone(), &params);
                        ck.optimizer = Some(adam.clone());
                        ck.epoch = Some(epoch);
                        ck.save(&dir.join(format!("checkpoint_{epoch:06}.json")))?;
                    }
                }
            }
            Err(e) if e.is_divergence() => {
                let Some((p0, s0, g0)) = previous.take().filter(|_| !halved) else {
                    log::warn!("training diverged after {} epochs: {e}", history.len());
                    diverged = true;
                    break;
                };
                log::warn!("divergence ({e}); halving lr to {}", lr * 0.5);
                lr *= 0.5;
                halved = true;
                params = p0.clone();
                adam = s0.clone();
                adam_step(params.as_mut_slice(), &g0, &mut adam, &cfg.hyper(lr))?;
                previous = Some((p0, s0, g0));
            }
            Err(e) => return Err(e),
        }
    }

    Ok(TrainReport {
        loss_history: history,
        final_params: params,
        wall_time: start.elapsed().as_secs_f64(),
        diverged,
        final_lr: lr,
    })
}

/// Per-input mean/std normalization fitted to the training scenarios.
///
/// State and exogenous channels use their sample statistics. The set-point
/// uses the spread of the scenarios' `u` values, or the magnitude of `u`
/// scaled by `u_span_fallback` when only one distinct value is present.
pub fn fit_input_normalization(
    spec: &NetSpec,
    scenarios: &[Scenario],
    u_span_fallback: f64,
) -> Result<InputNormalization> {
    if scenarios.is_empty() {
        return Err(Error::Config(
            "cannot fit normalization without scenarios".into(),
        ));
    }
    let n = spec.output_dim;
    let m = spec.exo_dim;
    let stats = |values: Vec<f64>| -> (f64, f64) {
        let k = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / k;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        (mean, var.sqrt())
    };
    let mut offset = Vec::with_capacity(spec.input_dim);
    let mut scale = Vec::with_capacity(spec.input_dim);
    let mut push = |(mean, std): (f64, f64), fallback: f64| {
        offset.push(mean);
        scale.push(if std > 1e-12 { std } else { fallback });
    };
    for c in 0..n {
        let vals = scenarios
            .iter()
            .flat_map(|s| s.states.column(c).to_vec())
            .collect();
        push(stats(vals), 1.0);
    }
    let us: Vec<f64> = scenarios.iter().map(|s| s.u).collect();
    let (u_mean, u_std) = stats(us);
    push((u_mean, u_std), (u_mean.abs() * u_span_fallback).max(1e-12));
    for c in 0..m {
        let vals = scenarios
            .iter()
            .filter_map(|s| s.exogenous.as_ref())
            .flat_map(|e| e.column(c).to_vec())
            .collect();
        push(stats(vals), 1.0);
    }
    if spec.time_as_input {
        let vals = scenarios
            .iter()
            .flat_map(|s| s.grid.times().to_vec())
            .collect();
        push(stats(vals), 1.0);
    }
    Ok(InputNormalization { offset, scale })
}
