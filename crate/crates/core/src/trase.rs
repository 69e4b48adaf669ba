//! Sensitivity-aware neural ODE: augmented dynamics, augmented adjoint and
//! its gradient.
//!
//! The augmented state `z = [x; s]` with `s = ∂x/∂u` evolves as
//!
//! ```text
//! ż = g_θ(z) = [ f_θ(x, t, u, y) ; ∂f_θ/∂u + ∂f_θ/∂x · s ]
//! ```
//!
//! and `a_z = [a_x; a_s] = ∂L/∂z` obeys `ȧ_z = −(∂g/∂z)ᵀ a_z` with the
//! block-lower-triangular Jacobian
//!
//! ```text
//! ∂g/∂z = [ J_x              0   ]
//!         [ ∂(J_u + J_x s)/∂x  J_x ]
//! ```
//!
//! The gradient is `∫ a_xᵀ ∂f/∂θ + a_sᵀ ∂(J_u + J_x s)/∂θ dt`. All products
//! with the second-order blocks are computed as reverse derivatives of the
//! sensitivity right-hand side, never as explicit Hessians.

use ndarray::{s, Array1, Array2};

use crate::diffnet::{DiffNet, ModelInput, ParamVector};
use crate::error::{Error, Result};
use crate::loss::{mse_with_jumps, LossWeights};
use crate::node::{check_scenario, forward_cfg, BackwardMode, ExoBuffer, GradResult};
use crate::odeint::{integrate, reverse_sweep, SolverConfig, TimeGrid};
use crate::systems::{ExogenousSignal, Scenario};

/// `z = [x; s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugState {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
}

impl AugState {
    /// `s(0) = 0`: the initial condition does not depend on `u`.
    pub fn from_initial(x0: &[f64]) -> Self {
        AugState {
            x: x0.to_vec(),
            s: vec![0.0; x0.len()],
        }
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend_from_slice(&self.s);
        z
    }

    pub fn split(z: &[f64]) -> Result<Self> {
        if !z.len().is_multiple_of(2) {
            return Err(Error::Data(format!(
                "augmented state has odd length {}",
                z.len()
            )));
        }
        let (x, s) = z.split_at(z.len() / 2);
        Ok(AugState {
            x: x.to_vec(),
            s: s.to_vec(),
        })
    }
}

fn check_aug(net: &DiffNet, theta: &[f64], z: &AugState, y: &[f64]) -> Result<()> {
    Error::check_dim("parameters", net.param_count(), theta.len())?;
    Error::check_dim("state", net.state_dim(), z.x.len())?;
    Error::check_dim("sensitivity", net.state_dim(), z.s.len())?;
    Error::check_dim("exogenous", net.exo_dim(), y.len())
}

/// `g_θ(z, t, u, y)`, length `2n`.
pub fn g_eval(
    net: &DiffNet,
    theta: &ParamVector,
    z: &AugState,
    t: f64,
    u: f64,
    y: &[f64],
) -> Result<Array1<f64>> {
    check_aug(net, theta, z, y)?;
    let n = net.state_dim();
    let mut out = vec![0.0; 2 * n];
    let (f, sd) = out.split_at_mut(n);
    net.eval_with_sens_into(theta, &ModelInput::new(&z.x, t, u, y), &z.s, f, sd);
    Ok(Array1::from(out))
}

/// Integrates `g_θ` from `z(0) = [x0; 0]`; rows are `[x̂; ŝ]` at grid times.
pub fn trase_forward(
    net: &DiffNet,
    theta: &ParamVector,
    x0: &[f64],
    u: f64,
    y_signal: Option<&ExogenousSignal>,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Array2<f64>> {
    Error::check_dim("parameters", net.param_count(), theta.len())?;
    Error::check_dim("state", net.state_dim(), x0.len())?;
    Error::check_dim("exogenous", net.exo_dim(), y_signal.map_or(0, |s| s.dim()))?;
    let n = net.state_dim();
    let mut exo = ExoBuffer::new(y_signal);
    integrate(
        |t, z, dz| {
            let y = exo.at(t);
            let (x, s) = z.split_at(n);
            let (dx, ds) = dz.split_at_mut(n);
            net.eval_with_sens_into(theta, &ModelInput::new(x, t, u, y), s, dx, ds);
        },
        &AugState::from_initial(x0).concat(),
        grid,
        &forward_cfg(cfg),
    )
}

/// `d a_z / dt = −(∂g/∂z)ᵀ a_z`, computed blockwise.
pub fn aug_adjoint_rhs(
    net: &DiffNet,
    theta: &ParamVector,
    z: &AugState,
    a_z: &[f64],
    t: f64,
    u: f64,
    y: &[f64],
) -> Result<Array1<f64>> {
    check_aug(net, theta, z, y)?;
    let n = net.state_dim();
    Error::check_dim("augmented adjoint", 2 * n, a_z.len())?;
    let (a_x, a_s) = a_z.split_at(n);
    let mut f = vec![0.0; n];
    let mut sd = vec![0.0; n];
    let mut out = vec![0.0; 2 * n];
    let mut theta_bar = vec![0.0; net.param_count()];
    {
        let (xb, sb) = out.split_at_mut(n);
        net.aug_vjp_into(
            theta,
            &ModelInput::new(&z.x, t, u, y),
            &z.s,
            a_x,
            a_s,
            &mut f,
            &mut sd,
            xb,
            sb,
            &mut theta_bar,
        );
    }
    out.iter_mut().for_each(|v| *v = -*v);
    Ok(Array1::from(out))
}

/// Explicit `2n × 2n` Jacobian `∂g/∂z`, assembled from its blocks.
pub fn aug_jacobian(
    net: &DiffNet,
    theta: &ParamVector,
    z: &AugState,
    t: f64,
    u: f64,
    y: &[f64],
) -> Result<Array2<f64>> {
    check_aug(net, theta, z, y)?;
    let n = net.state_dim();
    let input = ModelInput::new(&z.x, t, u, y);
    let jx = net.jac_x(theta, &input)?;
    let sj = net.sens_rhs_jacobians(theta, &input, &z.s)?;
    let mut j = Array2::zeros((2 * n, 2 * n));
    j.slice_mut(s![..n, ..n]).assign(&jx);
    j.slice_mut(s![n.., ..n]).assign(&sj.d_x);
    j.slice_mut(s![n.., n..]).assign(&sj.d_s);
    Ok(j)
}

fn sens_mask(scenario: &Scenario) -> Option<(&Array2<f64>, &[bool])> {
    scenario
        .sensitivities
        .as_ref()
        .map(|s| (&s.values, s.observed.as_slice()))
}

/// Joint state/sensitivity loss of the predicted augmented trajectory.
pub(crate) fn joint_loss(
    predicted: &Array2<f64>,
    scenario: &Scenario,
    weights: &LossWeights,
) -> (f64, Array2<f64>) {
    let n = scenario.state_dim();
    let (l_x, j_x) = mse_with_jumps(
        predicted.slice(s![.., ..n]),
        scenario.states.view(),
        None,
        weights,
        weights.state,
    );
    let mut jumps = Array2::zeros(predicted.dim());
    jumps.slice_mut(s![.., ..n]).assign(&j_x);
    let mut loss = l_x;
    if let Some((truth, mask)) = sens_mask(scenario) {
        let (l_s, j_s) = mse_with_jumps(
            predicted.slice(s![.., n..]),
            truth.view(),
            Some(mask),
            weights,
            weights.sensitivity,
        );
        loss += l_s;
        jumps.slice_mut(s![.., n..]).assign(&j_s);
    }
    (loss, jumps)
}

/// Joint loss without a gradient.
pub fn trase_loss(
    net: &DiffNet,
    theta: &ParamVector,
    scenario: &Scenario,
    cfg: &SolverConfig,
    weights: &LossWeights,
) -> Result<f64> {
    check_scenario(net, theta, scenario)?;
    let signal = scenario.exogenous_signal();
    let pred = trase_forward(
        net,
        theta,
        &scenario.x0(),
        scenario.u,
        signal.as_ref(),
        &scenario.grid,
        cfg,
    )?;
    Ok(joint_loss(&pred, scenario, weights).0)
}

/// Adjoint gradient of the joint state/sensitivity loss.
pub fn trase_adjoint_grad(
    net: &DiffNet,
    theta: &ParamVector,
    scenario: &Scenario,
    cfg: &SolverConfig,
    weights: &LossWeights,
) -> Result<GradResult> {
    trase_adjoint_grad_with(net, theta, scenario, cfg, weights, BackwardMode::default())
}

pub fn trase_adjoint_grad_with(
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
    let u = scenario.u;
    let grid = &scenario.grid;
    let signal = scenario.exogenous_signal();
    let pred = trase_forward(net, theta, &scenario.x0(), u, signal.as_ref(), grid, cfg)?;
    let (loss, jumps) = joint_loss(&pred, scenario, weights);

    // w = [x, s, a_x, a_s]
    let mut w_end = vec![0.0; 4 * n];
    w_end[..2 * n].copy_from_slice(pred.row(pred.nrows() - 1).as_slice().expect("contiguous"));
    let mut exo = ExoBuffer::new(signal.as_ref());
    let mut xb = vec![0.0; n];
    let mut sb = vec![0.0; n];
    let res = reverse_sweep(
        |t, w, dw, dq| {
            let (x, rest) = w.split_at(n);
            let (sv, rest) = rest.split_at(n);
            let (a_x, a_s) = rest.split_at(n);
            let (dx, rest) = dw.split_at_mut(n);
            let (ds, rest) = rest.split_at_mut(n);
            let (dax, das) = rest.split_at_mut(n);
            let y = exo.at(t);
            net.aug_vjp_into(
                theta,
                &ModelInput::new(x, t, u, y),
                sv,
                a_x,
                a_s,
                dx,
                ds,
                &mut xb,
                &mut sb,
                dq,
            );
            for (d, v) in dax.iter_mut().zip(&xb) {
                *d = -v;
            }
            for (d, v) in das.iter_mut().zip(&sb) {
                *d = -v;
            }
        },
        &w_end,
        p,
        grid,
        cfg,
        |i, w| {
            let (z, a) = w.split_at_mut(2 * n);
            for (a, j) in a.iter_mut().zip(jumps.row(i)) {
                *a += j;
            }
            if mode == BackwardMode::StoredTrajectory {
                z.copy_from_slice(pred.row(i).as_slice().expect("contiguous"));
            }
            Ok(())
        },
    )?;
    let adjoint = res.trajectory.slice(s![.., 2 * n..]).to_owned();
    Ok(GradResult {
        grad: res.accumulated.to_vec(),
        loss,
        adjoint,
    })
}
