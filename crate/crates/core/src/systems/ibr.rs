//! Grid-following inverter surrogate for authoring IBR-shaped fixtures.
//!
//! States are the d/q-axis currents `[I_d, I_q]`, the exogenous channels are
//! the terminal voltage and frequency `[V_t, f_t]` (replayed, independent of
//! the set-point) and the set-point is the voltage reference `V_ref`. The
//! reactive current follows a saturated voltage-error command; the active
//! current follows a frequency-droop power command limited by the remaining
//! current headroom, which couples `I_d` weakly to `V_ref`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ChannelLabels, Scenario};
use crate::error::Result;
use crate::odeint::{integrate, SolverConfig, TimeGrid};

/// Voltage references shipped as fixtures.
pub const IBR_FIXTURE_SETPOINTS: [f64; 9] = [
    1.035, 1.036, 1.038, 1.039, 1.040, 1.041, 1.042, 1.043, 1.045,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbrParams {
    pub t_d: f64,
    pub t_q: f64,
    pub k_qv: f64,
    pub iq_max: f64,
    pub i_max: f64,
    pub p0: f64,
    pub droop: f64,
    /// Disturbance onset (s).
    pub t_event: f64,
    pub horizon: f64,
    pub points: usize,
}

impl Default for IbrParams {
    fn default() -> Self {
        IbrParams {
            t_d: 0.2,
            t_q: 0.3,
            k_qv: 20.0,
            iq_max: 1.0,
            i_max: 1.1,
            p0: 0.8,
            droop: 20.0,
            t_event: 0.5,
            horizon: 5.0,
            points: 100,
        }
    }
}

impl IbrParams {
    /// Replayed terminal voltage and frequency.
    pub fn playback(&self, t: f64) -> [f64; 2] {
        let tau = t - self.t_event;
        if tau <= 0.0 {
            return [1.04, 1.0];
        }
        let pi2 = 2.0 * std::f64::consts::PI;
        let v = 1.04
            - 0.035 * (1.0 - (-tau / 0.05).exp()) * (-tau / 1.2).exp()
            - 0.006 * (pi2 * 1.1 * tau).sin() * (-tau / 0.8).exp();
        let f = 1.0
            - 0.004 * (1.0 - (-tau / 0.3).exp()) * (-tau / 2.5).exp()
            - 0.001 * (pi2 * 0.8 * tau).sin() * (-tau / 1.5).exp();
        [v, f]
    }

    pub fn initial_state(&self) -> [f64; 2] {
        [self.p0 / 1.04, 0.0]
    }

    fn field(&self, t: f64, x: &[f64], v_ref: f64, out: &mut [f64]) {
        let [v_t, f_t] = self.playback(t);
        let (i_d, i_q) = (x[0], x[1]);
        let iq_cmd = self.iq_max * (self.k_qv * (v_ref - v_t) / self.iq_max).tanh();
        let p_ref = self.p0 - self.droop * (f_t - 1.0);
        let id_cmd = p_ref / v_t;
        let headroom = (self.i_max * self.i_max - i_q * i_q).max(0.0).sqrt();
        let eps = 0.02;
        let id_lim = 0.5 * (id_cmd + headroom - ((id_cmd - headroom).powi(2) + eps * eps).sqrt());
        out[0] = (id_lim - i_d) / self.t_d;
        out[1] = (iq_cmd - i_q) / self.t_q;
    }
}

/// Simulates the surrogate at `v_ref`; no sensitivities are attached,
/// mirroring simulator output.
pub fn gen_ibr_surrogate(params: &IbrParams, v_ref: f64) -> Result<Scenario> {
    let grid = TimeGrid::uniform(0.0, params.horizon, params.points)?;
    let cfg = SolverConfig::dopri45(1e-11, 1e-13, 0.01);
    let states = integrate(
        |t, x, dx| params.field(t, x, v_ref, dx),
        &params.initial_state(),
        &grid,
        &cfg,
    )?;
    let mut exo = Array2::zeros((grid.len(), 2));
    for (i, &t) in grid.times().iter().enumerate() {
        let [v, f] = params.playback(t);
        exo[[i, 0]] = v;
        exo[[i, 1]] = f;
    }
    let mut labels = ChannelLabels::for_states(&["I_d", "I_q"], &["V_t", "f_t"]);
    labels.sensitivities.clear();
    Ok(Scenario {
        u: v_ref,
        grid,
        states,
        sensitivities: None,
        exogenous: Some(exo),
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iq_responds_more_than_id() {
        let p = IbrParams::default();
        let a = gen_ibr_surrogate(&p, 1.039).unwrap();
        let b = gen_ibr_surrogate(&p, 1.040).unwrap();
        let diff = &b.states - &a.states;
        let max_d = diff.column(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_q = diff.column(1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_q > 5.0 * max_d, "d {max_d} q {max_q}");
        assert!(max_q > 1e-3);
    }

    #[test]
    fn playback_independent_of_setpoint() {
        let p = IbrParams::default();
        let a = gen_ibr_surrogate(&p, 1.035).unwrap();
        let b = gen_ibr_surrogate(&p, 1.045).unwrap();
        assert_eq!(a.exogenous, b.exogenous);
        assert_eq!(a.states.row(0), b.states.row(0));
    }
}
