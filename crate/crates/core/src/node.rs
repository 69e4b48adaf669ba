//! Vanilla neural-ODE forward pass and adjoint gradient.
//!
//! The loss is the mean squared error over every observation time, so the
//! adjoint `a(t) = ∂L/∂x(t)` obeys `ȧ = −aᵀ ∂f/∂x` between observations and
//! jumps by `∂L_i/∂x(t_i)` at each observation. The gradient is
//! `∫ aᵀ ∂f/∂θ dt`, accumulated during the same backward sweep that
//! re-integrates `x(t)`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::diffnet::{DiffNet, ModelInput, ParamVector};
use crate::error::{Error, Result};
use crate::loss::{mse_with_jumps, LossWeights};
use crate::odeint::{integrate, reverse_sweep, Direction, SolverConfig, TimeGrid};
use crate::systems::{ExogenousSignal, Scenario};

#[derive(Clone, Debug)]
pub struct NodeForwardResult {
    pub predicted: Array2<f64>,
    pub terminal_state: Array1<f64>,
}

/// How the backward pass obtains `x(t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardMode {
    /// Integrate the state backward alongside the adjoint.
    #[default]
    Reintegrate,
    /// Reset the state to the stored forward sample at every observation
    /// time; for diagnosing reversibility error.
    StoredTrajectory,
}

/// Loss value and its gradient with respect to θ.
#[derive(Clone, Debug)]
pub struct GradResult {
    pub grad: Vec<f64>,
    pub loss: f64,
    /// Adjoint state at every grid time (after that time's jump), aligned to
    /// the grid.
    pub adjoint: Array2<f64>,
}

pub(crate) fn forward_cfg(cfg: &SolverConfig) -> SolverConfig {
    SolverConfig {
        direction: Direction::Forward,
        ..*cfg
    }
}

pub(crate) fn check_scenario(net: &DiffNet, theta: &[f64], scenario: &Scenario) -> Result<()> {
    Error::check_dim("parameters", net.param_count(), theta.len())?;
    Error::check_dim("state", net.state_dim(), scenario.state_dim())?;
    Error::check_dim("exogenous", net.exo_dim(), scenario.exo_dim())?;
    scenario.validate()
}

/// Samples the exogenous signal (if any) into a reusable buffer.
pub(crate) struct ExoBuffer<'a> {
    signal: Option<&'a ExogenousSignal>,
    buf: Vec<f64>,
}

impl<'a> ExoBuffer<'a> {
    pub(crate) fn new(signal: Option<&'a ExogenousSignal>) -> Self {
        ExoBuffer {
            buf: vec![0.0; signal.map_or(0, |s| s.dim())],
            signal,
        }
    }

    pub(crate) fn at(&mut self, t: f64) -> &[f64] {
        if let Some(s) = self.signal {
            s.sample(t, &mut self.buf);
        }
        &self.buf
    }
}

/// Integrates `ẋ = f_θ(x, t, u, y)` from `x0` over `grid`.
pub fn node_forward(
    net: &DiffNet,
    theta: &ParamVector,
    x0: &[f64],
    u: f64,
    y_signal: Option<&ExogenousSignal>,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<NodeForwardResult> {
    Error::check_dim("parameters", net.param_count(), theta.len())?;
    Error::check_dim("state", net.state_dim(), x0.len())?;
    Error::check_dim("exogenous", net.exo_dim(), y_signal.map_or(0, |s| s.dim()))?;
    let mut exo = ExoBuffer::new(y_signal);
    let predicted = integrate(
        |t, x, dx| {
            let y = exo.at(t);
            net.eval_into(theta, &ModelInput::new(x, t, u, y), dx)
        },
        x0,
        grid,
        &forward_cfg(cfg),
    )?;
    let terminal_state = predicted.row(predicted.nrows() - 1).to_owned();
    Ok(NodeForwardResult {
        predicted,
        terminal_state,
    })
}

/// State MSE of the model on `scenario` (no gradient).
pub fn node_loss(
    net: &DiffNet,
    theta: &ParamVector,
    scenario: &Scenario,
    cfg: &SolverConfig,
    weights: &LossWeights,
) -> Result<f64> {
    check_scenario(net, theta, scenario)?;
    let signal = scenario.exogenous_signal();
    let fwd = node_forward(
        net,
        theta,
        &scenario.x0(),
        scenario.u,
        signal.as_ref(),
        &scenario.grid,
        cfg,
    )?;
    let (loss, _) = mse_with_jumps(
        fwd.predicted.view(),
        scenario.states.view(),
        None,
        weights,
        weights.state,
    );
    Ok(loss)
}

/// Adjoint gradient of the state MSE.
pub fn node_adjoint_grad(
    net: &DiffNet,
    theta: &ParamVector,
    scenario: &Scenario,
    cfg: &SolverConfig,
    weights: &LossWeights,
) -> Result<GradResult> {
    node_adjoint_grad_with(net, theta, scenario, cfg, weights, BackwardMode::default())
}

pub fn node_adjoint_grad_with(
    net: &DiffNet,
    theta: &ParamVector,
    scenario: &Scenario,
    cfg: &SolverConfig,
    weights: &LossWeights,
    mode: BackwardMode,
) -> Result<GradResult> {
    check_scenario(net, theta, scenario)?;
    weights.validate(net.state_dim())?;
    let n = net.state_dim();
    let p = net.param_count();
    let signal = scenario.exogenous_signal();
    let grid = &scenario.grid;
    let u = scenario.u;
    let fwd = node_forward(net, theta, &scenario.x0(), u, signal.as_ref(), grid, cfg)?;
    let (loss, jumps) = mse_with_jumps(
        fwd.predicted.view(),
        scenario.states.view(),
        None,
        weights,
        weights.state,
    );

    let mut w_end = vec![0.0; 2 * n];
    w_end[..n].copy_from_slice(fwd.terminal_state.as_slice().expect("contiguous"));
    let mut exo = ExoBuffer::new(signal.as_ref());
    let mut f = vec![0.0; n];
    let mut x_bar = vec![0.0; n];
    let res = reverse_sweep(
        |t, w, dw, dq| {
            let (x, a) = w.split_at(n);
            let y = exo.at(t);
            net.vjp_into(
                theta,
                &ModelInput::new(x, t, u, y),
                a,
                &mut f,
                &mut x_bar,
                dq,
            );
            let (dx, da) = dw.split_at_mut(n);
            dx.copy_from_slice(&f);
            for (d, v) in da.iter_mut().zip(&x_bar) {
                *d = -v;
            }
        },
        &w_end,
        p,
        grid,
        cfg,
        |i, w| {
            let (x, a) = w.split_at_mut(n);
            for (a, j) in a.iter_mut().zip(jumps.row(i)) {
                *a += j;
            }
            if mode == BackwardMode::StoredTrajectory {
                x.copy_from_slice(fwd.predicted.row(i).as_slice().expect("contiguous"));
            }
            Ok(())
        },
    )?;
    let adjoint = res.trajectory.slice(ndarray::s![.., n..]).to_owned();
    Ok(GradResult {
        grad: res.accumulated.to_vec(),
        loss,
        adjoint,
    })
}
