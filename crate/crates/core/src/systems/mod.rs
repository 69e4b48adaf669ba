//! Ground-truth systems and scenario data.
//!
//! Scenarios come either from the built-in generators (the scalar linear
//! ODE `ẋ = −3x + u`, the damped oscillator, an IBR-shaped surrogate used
//! for fixtures) or from CSV files on disk.

mod csvio;
mod ibr;

pub use csvio::{export_csv, ingest_csv, load_scenario, sidecar_path, ScenarioLayout};
pub use ibr::{gen_ibr_surrogate, IbrParams, IBR_FIXTURE_SETPOINTS};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odeint::{integrate, SolverConfig, TimeGrid};

/// Sensitivity trajectory `∂x/∂u`; rows flagged unobserved carry no loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivities {
    pub values: Array2<f64>,
    pub observed: Vec<bool>,
}

impl Sensitivities {
    pub fn full(values: Array2<f64>) -> Self {
        let observed = vec![true; values.nrows()];
        Sensitivities { values, observed }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelLabels {
    pub states: Vec<String>,
    #[serde(default)]
    pub sensitivities: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
}

impl ChannelLabels {
    /// Default sensitivity names are `s_<state>`.
    pub fn for_states(states: &[&str], exogenous: &[&str]) -> Self {
        ChannelLabels {
            states: states.iter().map(|s| s.to_string()).collect(),
            sensitivities: states.iter().map(|s| format!("s_{s}")).collect(),
            exogenous: exogenous.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One training or testing instance at a fixed set-point.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub u: f64,
    pub grid: TimeGrid,
    pub states: Array2<f64>,
    pub sensitivities: Option<Sensitivities>,
    pub exogenous: Option<Array2<f64>>,
    pub labels: ChannelLabels,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn exo_dim(&self) -> usize {
        self.exogenous.as_ref().map_or(0, |e| e.ncols())
    }

    pub fn x0(&self) -> Vec<f64> {
        self.states.row(0).to_vec()
    }

    pub fn has_sensitivities(&self) -> bool {
        self.sensitivities
            .as_ref()
            .is_some_and(|s| s.observed.iter().any(|&o| o))
    }

    pub fn exogenous_signal(&self) -> Option<ExogenousSignal> {
        self.exogenous.as_ref().map(|e| {
            ExogenousSignal::new(self.grid.times().to_vec(), e.clone()).expect("validated")
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n_rows = self.grid.len();
        if !self.u.is_finite() {
            return Err(Error::Data("set-point is not finite".into()));
        }
        Error::check_dim("state rows", n_rows, self.states.nrows())?;
        if self.states.ncols() == 0 {
            return Err(Error::Data("scenario has no state channels".into()));
        }
        if let Some(s) = &self.sensitivities {
            Error::check_dim("sensitivity rows", n_rows, s.values.nrows())?;
            Error::check_dim(
                "sensitivity channels",
                self.states.ncols(),
                s.values.ncols(),
            )?;
            Error::check_dim("sensitivity mask", n_rows, s.observed.len())?;
            let bad = s
                .values
                .rows()
                .into_iter()
                .zip(&s.observed)
                .any(|(r, &o)| o && r.iter().any(|v| !v.is_finite()));
            if bad {
                return Err(Error::Data("observed sensitivity row is not finite".into()));
            }
        }
        if let Some(e) = &self.exogenous {
            Error::check_dim("exogenous rows", n_rows, e.nrows())?;
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("exogenous value is not finite".into()));
            }
        }
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("state value is not finite".into()));
        }
        Ok(())
    }
}

/// Grid-aligned samples of `y(t)` with linear interpolation; values are held
/// constant outside the sampled range.
#[derive(Clone, Debug, PartialEq)]
pub struct ExogenousSignal {
    times: Vec<f64>,
    values: Array2<f64>,
}

impl ExogenousSignal {
    pub fn new(times: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        Error::check_dim("exogenous rows", times.len(), values.nrows())?;
        TimeGrid::new(times.clone())?;
        Ok(ExogenousSignal { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample(&self, t: f64, out: &mut [f64]) {
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            out.iter_mut()
                .zip(self.values.row(0))
                .for_each(|(o, v)| *o = *v);
            return;
        }
        if t >= self.times[last] {
            out.iter_mut()
                .zip(self.values.row(last))
                .for_each(|(o, v)| *o = *v);
            return;
        }
        let hi = self.times.partition_point(|&s| s <= t);
        let lo = hi - 1;
        if self.times[lo] == t {
            out.iter_mut()
                .zip(self.values.row(lo))
                .for_each(|(o, v)| *o = *v);
            return;
        }
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        for (j, o) in out.iter_mut().enumerate() {
            let a = self.values[[lo, j]];
            let b = self.values[[hi, j]];
            *o = a + w * (b - a);
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample(t, &mut out);
        out
    }
}

/// `ẋ = −3x + u`, sampled from its closed form together with `s = ∂x/∂u`.
pub fn gen_linear_scalar(u: f64, x0: f64, grid: &TimeGrid) -> Scenario {
    let n = grid.len();
    let mut states = Array2::zeros((n, 1));
    let mut sens = Array2::zeros((n, 1));
    for (i, &t) in grid.times().iter().enumerate() {
        let decay = (-3.0 * t).exp();
        states[[i, 0]] = u / 3.0 + (x0 - u / 3.0) * decay;
        sens[[i, 0]] = (1.0 - decay) / 3.0;
    }
    Scenario {
        u,
        grid: grid.clone(),
        states,
        sensitivities: Some(Sensitivities::full(sens)),
        exogenous: None,
        labels: ChannelLabels::for_states(&["x"], &[]),
    }
}

/// Damped oscillator `ẍ + 2ζω_n ẋ + ω_n² x = u` in first-order form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    pub omega_n: f64,
    pub zeta: f64,
    pub x0: f64,
    pub v0: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        OscillatorParams {
            omega_n: 2.5,
            zeta: 0.3,
            x0: 2.0,
            v0: 1.0,
        }
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_n > 0.0 && self.omega_n.is_finite()) {
            return Err(Error::Config(format!(
                "omega_n must be positive, got {}",
                self.omega_n
            )));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::Config(format!(
                "zeta must be non-negative, got {}",
                self.zeta
            )));
        }
        if !(self.x0.is_finite() && self.v0.is_finite()) {
            return Err(Error::Config("initial conditions must be finite".into()));
        }
        Ok(())
    }

    /// True vector field `[v, u − ω²x − 2ζωv]`.
    pub fn field(&self, x: &[f64], u: f64, out: &mut [f64]) {
        let w2 = self.omega_n * self.omega_n;
        let c = 2.0 * self.zeta * self.omega_n;
        out[0] = x[1];
        out[1] = u - w2 * x[0] - c * x[1];
    }

    /// Augmented field over `[x, v, s_x, s_v]`.
    pub fn augmented_field(&self, z: &[f64], u: f64, out: &mut [f64]) {
        let w2 = self.omega_n * self.omega_n;
        let c = 2.0 * self.zeta * self.omega_n;
        self.field(&z[..2], u, &mut out[..2]);
        out[2] = z[3];
        out[3] = -w2 * z[2] - c * z[3] + 1.0;
    }
}

/// Integrates the oscillator with its sensitivity system from
/// `s_x(0) = s_v(0) = 0` and samples on `grid`.
pub fn gen_oscillator(
    params: &OscillatorParams,
    u: f64,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Scenario> {
    params.validate()?;
    let z0 = [params.x0, params.v0, 0.0, 0.0];
    let traj = integrate(|_, z, dz| params.augmented_field(z, u, dz), &z0, grid, cfg)?;
    let states = traj.slice(ndarray::s![.., 0..2]).to_owned();
    let sens = traj.slice(ndarray::s![.., 2..4]).to_owned();
    Ok(Scenario {
        u,
        grid: grid.clone(),
        states,
        sensitivities: Some(Sensitivities::full(sens)),
        exogenous: None,
        labels: ChannelLabels::for_states(&["x", "v"], &[]),
    })
}

/// Finite-difference sensitivity `(x_b − x_a) / (u_b − u_a)` attached to a
/// copy of `a`.
pub fn finite_diff_sensitivity(a: &Scenario, b: &Scenario) -> Result<Scenario> {
    if a.grid != b.grid {
        return Err(Error::Data(
            "finite-difference pair has mismatched time grids".into(),
        ));
    }
    if a.states.dim() != b.states.dim() {
        return Err(Error::Data(
            "finite-difference pair has mismatched state layouts".into(),
        ));
    }
    if a.labels.states != b.labels.states {
        return Err(Error::Data(
            "finite-difference pair has different state channels".into(),
        ));
    }
    let du = b.u - a.u;
    if du.abs() < 1e-12 {
        return Err(Error::DegenerateSpacing(du.abs()));
    }
    let values = (&b.states - &a.states) / du;
    let mut out = a.clone();
    if out.labels.sensitivities.len() != out.state_dim() {
        out.labels.sensitivities = out.labels.states.iter().map(|s| format!("s_{s}")).collect();
    }
    out.sensitivities = Some(Sensitivities::full(values));
    Ok(out)
}

/// Time derivative of a sampled trajectory by central differences
/// (one-sided at the ends).
pub fn numerical_derivative(times: &[f64], values: &Array2<f64>) -> Array2<f64> {
    let n = times.len();
    let mut d = Array2::zeros(values.dim());
    for i in 0..n {
        let (lo, hi) = match i {
            0 => (0, 1),
            _ if i == n - 1 => (n - 2, n - 1),
            _ => (i - 1, i + 1),
        };
        let dt = times[hi] - times[lo];
        let row: Array1<f64> = (&values.row(hi) - &values.row(lo)) / dt;
        d.row_mut(i).assign(&row);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_equilibrium_is_constant() {
        let grid = TimeGrid::uniform(0.0, 2.0, 11).unwrap();
        let sc = gen_linear_scalar(6.0, 2.0, &grid);
        assert!(sc.states.iter().all(|&x| (x - 2.0).abs() < 1e-15));
    }

    #[test]
    fn linear_closed_form_value() {
        let grid = TimeGrid::new(vec![0.0, 1.0, 40.0]).unwrap();
        let sc = gen_linear_scalar(1.0, 2.0, &grid);
        assert!((sc.states[[1, 0]] - 0.41631).abs() < 1e-5);
        let s = &sc.sensitivities.unwrap().values;
        assert!((s[[2, 0]] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exogenous_interpolation_exact_at_samples() {
        let vals = Array2::from_shape_vec((3, 1), vec![1.0, 3.0, 2.0]).unwrap();
        let sig = ExogenousSignal::new(vec![0.0, 1.0, 2.0], vals).unwrap();
        assert_eq!(sig.at(1.0), vec![3.0]);
        assert_eq!(sig.at(0.5), vec![2.0]);
        assert_eq!(sig.at(-1.0), vec![1.0]);
        assert_eq!(sig.at(5.0), vec![2.0]);
    }

    #[test]
    fn fd_degenerate_spacing() {
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let a = gen_linear_scalar(1.0, 2.0, &grid);
        assert!(matches!(
            finite_diff_sensitivity(&a, &a),
            Err(Error::DegenerateSpacing(_))
        ));
        let other = gen_linear_scalar(1.1, 2.0, &TimeGrid::uniform(0.0, 1.0, 6).unwrap());
        assert!(matches!(
            finite_diff_sensitivity(&a, &other),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn fd_identical_trajectories_give_zero() {
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let a = gen_linear_scalar(1.0, 2.0, &grid);
        let mut b = a.clone();
        b.u = 2.0;
        let out = finite_diff_sensitivity(&a, &b).unwrap();
        assert!(out.sensitivities.unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oscillator_params_validated() {
        let bad = OscillatorParams {
            omega_n: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OscillatorParams {
            zeta: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
