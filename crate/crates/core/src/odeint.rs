//! Fixed-step RK4 and adaptive Dormand–Prince 4(5) integrators.
//!
//! Every integration lands exactly on the requested observation times:
//! RK4 splits each grid interval into equal substeps no longer than the
//! configured step, and the adaptive method clamps its step at each grid
//! time. Both run in either time direction.

#![allow(clippy::needless_range_loop)]

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any guarded state component above this magnitude aborts the integration.
pub const DIVERGENCE_BOUND: f64 = 1e8;

const MAX_ADAPTIVE_STEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "rk4")]
    Rk4Fixed {
        step: f64,
    },
    Dopri45 {
        rtol: f64,
        atol: f64,
        max_step: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    #[serde(default)]
    pub direction: Direction,
}

impl SolverConfig {
    pub fn rk4(step: f64) -> Self {
        SolverConfig {
            method: Method::Rk4Fixed { step },
            direction: Direction::Forward,
        }
    }

    pub fn dopri45(rtol: f64, atol: f64, max_step: f64) -> Self {
        SolverConfig {
            method: Method::Dopri45 {
                rtol,
                atol,
                max_step,
            },
            direction: Direction::Forward,
        }
    }

    /// Training default: RK4 with `horizon / 1000` steps, so forward and
    /// backward passes share one discretization.
    pub fn training(horizon: f64) -> Self {
        Self::rk4(horizon / 1000.0)
    }

    /// Tight adaptive tolerances used for ground-truth generation.
    pub fn ground_truth() -> Self {
        Self::dopri45(1e-11, 1e-13, 0.05)
    }

    pub fn backward(mut self) -> Self {
        self.direction = Direction::Backward;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.method {
            Method::Rk4Fixed { step } => step > 0.0 && step.is_finite(),
            Method::Dopri45 {
                rtol,
                atol,
                max_step,
            } => rtol > 0.0 && atol > 0.0 && max_step > 0.0 && rtol.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid solver settings {:?}",
                self.method
            )))
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::dopri45(1e-7, 1e-9, f64::INFINITY)
    }
}

impl std::str::FromStr for SolverConfig {
    type Err = Error;

    /// `rk4:<step>` or `dopri45:<rtol>:<atol>[:<max_step>]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("solver spec `{s}` is missing a field")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("solver spec `{s}`: {e}")))
        };
        let cfg = match parts[0] {
            "rk4" if parts.len() == 2 => Self::rk4(num(1)?),
            "dopri45" if parts.len() == 3 => Self::dopri45(num(1)?, num(2)?, f64::INFINITY),
            "dopri45" if parts.len() == 4 => Self::dopri45(num(1)?, num(2)?, num(3)?),
            _ => {
                return Err(Error::Config(format!(
                    "solver spec `{s}` must be rk4:<step> or dopri45:<rtol>:<atol>[:<max_step>]"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Strictly increasing observation instants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Data("time grid is empty".into()));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::Data(format!(
                "time grid contains non-finite value {t}"
            )));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "time grid not strictly increasing at t = {}",
                w[1]
            )));
        }
        Ok(TimeGrid { times })
    }

    /// `points` evenly spaced instants covering `[start, end]`.
    pub fn uniform(start: f64, end: f64, points: usize) -> Result<Self> {
        match points {
            0 => Err(Error::Data("time grid needs at least one point".into())),
            1 => Self::new(vec![start]),
            _ => {
                let dt = (end - start) / (points - 1) as f64;
                let mut times: Vec<f64> = (0..points).map(|i| start + dt * i as f64).collect();
                times[points - 1] = end;
                Self::new(times)
            }
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn horizon(&self) -> f64 {
        self.end() - self.start()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Reusable stepping state for one system dimension.
pub struct Integrator {
    method: Method,
    guard_dims: usize,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    /// Last proposed adaptive step magnitude.
    h_prop: Option<f64>,
    /// Whether `k[0]` holds the derivative at the current state (FSAL).
    fsal: bool,
}

impl Integrator {
    /// `guard_dims` leading components are checked against
    /// [`DIVERGENCE_BOUND`]; the rest only for finiteness.
    pub fn new(method: Method, dim: usize, guard_dims: usize) -> Self {
        Integrator {
            method,
            guard_dims: guard_dims.min(dim),
            k: vec![vec![0.0; dim]; 7],
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
            h_prop: None,
            fsal: false,
        }
    }

    fn guard(&self, y: &[f64], t: f64) -> Result<()> {
        let (head, tail) = y.split_at(self.guard_dims);
        if head
            .iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND)
            || tail.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Diverged { t });
        }
        Ok(())
    }

    /// Marks the stored derivative stale, e.g. after an external jump in `y`.
    pub fn reset(&mut self) {
        self.fsal = false;
    }

    /// Advances `y` from `t0` to exactly `t1` (either direction).
    pub fn advance<F>(&mut self, rhs: &mut F, y: &mut [f64], t0: f64, t1: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        if t0 == t1 {
            return Ok(());
        }
        match self.method {
            Method::Rk4Fixed { step } => self.advance_rk4(rhs, y, t0, t1, step),
            Method::Dopri45 {
                rtol,
                atol,
                max_step,
            } => self.advance_dopri(rhs, y, t0, t1, rtol, atol, max_step),
        }
    }

    fn advance_rk4<F>(
        &mut self,
        rhs: &mut F,
        y: &mut [f64],
        t0: f64,
        t1: f64,
        step: f64,
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let span = t1 - t0;
        let substeps = ((span.abs() / step) - 1e-9).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        let n = y.len();
        for j in 0..substeps {
            let t = t0 + h * j as f64;
            let [k1, k2, k3, k4, ..] = &mut self.k[..] else {
                unreachable!()
            };
            rhs(t, y, k1);
            for i in 0..n {
                self.tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs(t + 0.5 * h, &self.tmp, k2);
            for i in 0..n {
                self.tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs(t + 0.5 * h, &self.tmp, k3);
            for i in 0..n {
                self.tmp[i] = y[i] + h * k3[i];
            }
            let t_next = if j + 1 == substeps { t1 } else { t + h };
            rhs(t_next, &self.tmp, k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            self.guard(y, t_next)?;
        }
        Ok(())
    }

    fn error_norm(&self, y: &[f64], y_new: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
        let n = y.len().max(1) as f64;
        let sum: f64 = y
            .iter()
            .zip(y_new)
            .zip(err)
            .map(|((a, b), e)| {
                let sc = atol + rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (sum / n).sqrt()
    }

    fn initial_step<F>(
        &mut self,
        rhs: &mut F,
        y: &[f64],
        t: f64,
        dir: f64,
        rtol: f64,
        atol: f64,
    ) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len().max(1) as f64;
        let norm = |v: &[f64], y: &[f64]| -> f64 {
            (v.iter()
                .zip(y)
                .map(|(v, y)| (v / (atol + rtol * y.abs())).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        };
        let d0 = norm(y, y);
        let d1 = norm(&self.k[0], y);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        for i in 0..y.len() {
            self.tmp[i] = y[i] + dir * h0 * self.k[0][i];
        }
        let (k0, rest) = self.k.split_at_mut(1);
        rhs(t + dir * h0, &self.tmp, &mut rest[0]);
        let diff: Vec<f64> = rest[0].iter().zip(&k0[0]).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff, y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }

    #[allow(clippy::too_many_arguments)]
    fn advance_dopri<F>(
        &mut self,
        rhs: &mut F,
        y: &mut [f64],
        t0: f64,
        t1: f64,
        rtol: f64,
        atol: f64,
        max_step: f64,
    ) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let dir = (t1 - t0).signum();
        let mut t = t0;
        if !self.fsal {
            rhs(t, y, &mut self.k[0]);
            self.fsal = true;
        }
        let mut h_abs = match self.h_prop {
            Some(h) => h,
            None => self.initial_step(rhs, y, t, dir, rtol, atol),
        }
        .min(max_step);
        let mut steps = 0;
        let mut rejected_last = false;
        while (t1 - t) * dir > 0.0 {
            steps += 1;
            if steps > MAX_ADAPTIVE_STEPS || h_abs < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Stiff { t });
            }
            let remaining = (t1 - t).abs();
            let last = h_abs >= remaining * (1.0 - 1e-12);
            let h = dir * if last { remaining } else { h_abs };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, a) in A[s][..s].iter().enumerate() {
                        acc += a * self.k[j][i];
                    }
                    self.tmp[i] = y[i] + h * acc;
                }
                let ts = if C[s] == 1.0 && last {
                    t1
                } else {
                    t + C[s] * h
                };
                if s == 6 {
                    // last row of A holds the fifth-order weights (FSAL)
                    self.y_new.copy_from_slice(&self.tmp);
                }
                rhs(ts, &self.tmp, &mut self.k[s]);
            }
            let err: Vec<f64> = (0..n)
                .map(|i| h * (0..7).map(|j| E[j] * self.k[j][i]).sum::<f64>())
                .collect();
            let en = self.error_norm(y, &self.y_new, &err, rtol, atol);
            if !en.is_finite() {
                h_abs *= 0.2;
                rejected_last = true;
                continue;
            }
            if en <= 1.0 {
                let t_new = if last { t1 } else { t + h };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                t = t_new;
                self.guard(y, t)?;
                let mut fac = 0.9 * en.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, if rejected_last { 1.0 } else { 10.0 });
                // a clamped final step says nothing about the next proposal
                if !last || h_abs <= remaining {
                    h_abs = (h_abs * fac).min(max_step);
                }
                rejected_last = false;
            } else {
                let fac = (0.9 * en.powf(-0.2)).max(0.2);
                h_abs *= fac;
                rejected_last = true;
            }
        }
        self.h_prop = Some(h_abs);
        Ok(())
    }
}

/// Solves the IVP and samples the solution at every grid time.
///
/// Forward: `y0` is the state at the first grid time and row 0 equals it.
/// Backward: `y0` is the state at the last grid time and the last row
/// equals it.
pub fn integrate<F>(
    mut rhs: F,
    y0: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Array2<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    let dim = y0.len();
    let times = grid.times();
    let mut out = Array2::zeros((times.len(), dim));
    let mut stepper = Integrator::new(cfg.method, dim, dim);
    let mut y = y0.to_vec();
    match cfg.direction {
        Direction::Forward => {
            stepper.guard(&y, times[0])?;
            out.row_mut(0).assign(&Array1::from(y.clone()));
            for i in 1..times.len() {
                stepper.advance(&mut rhs, &mut y, times[i - 1], times[i])?;
                out.row_mut(i).assign(&Array1::from(y.clone()));
            }
        }
        Direction::Backward => {
            let last = times.len() - 1;
            stepper.guard(&y, times[last])?;
            out.row_mut(last).assign(&Array1::from(y.clone()));
            for i in (0..last).rev() {
                stepper.advance(&mut rhs, &mut y, times[i + 1], times[i])?;
                out.row_mut(i).assign(&Array1::from(y.clone()));
            }
        }
    }
    Ok(out)
}

/// Result of a backward sweep with quadrature.
#[derive(Clone, Debug)]
pub struct ReverseResult {
    /// State at each grid time (after any hook adjustments), aligned to the grid.
    pub trajectory: Array2<f64>,
    /// `∫ quad dt` over the whole grid span, positively oriented.
    pub accumulated: Array1<f64>,
}

/// Integrates `rhs` backward from the last grid time while accumulating
/// `∫_{t_first}^{t_last} quad(t, y) dt` with the same steps.
pub fn integrate_reverse_with_accumulator<F, Q>(
    mut rhs: F,
    mut quad: Q,
    quad_dim: usize,
    y_end: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<ReverseResult>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    Q: FnMut(f64, &[f64], &mut [f64]),
{
    reverse_sweep(
        |t, y, dy, dq| {
            rhs(t, y, dy);
            quad(t, y, dq);
        },
        y_end,
        quad_dim,
        grid,
        cfg,
        |_, _| Ok(()),
    )
}

/// Backward sweep over the grid with a hook at every grid time.
///
/// `rhs_quad(t, y, dy, q)` writes the state derivative and the quadrature
/// integrand together. `on_grid(i, y)` runs when the sweep reaches grid
/// index `i` (first at the last index, before any integration) and may
/// modify the state, e.g. to apply adjoint jumps.
pub fn reverse_sweep<F, H>(
    mut rhs_quad: F,
    y_end: &[f64],
    quad_dim: usize,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    mut on_grid: H,
) -> Result<ReverseResult>
where
    F: FnMut(f64, &[f64], &mut [f64], &mut [f64]),
    H: FnMut(usize, &mut [f64]) -> Result<()>,
{
    cfg.validate()?;
    let n = y_end.len();
    let times = grid.times();
    let last = times.len() - 1;
    let mut w = vec![0.0; n + quad_dim];
    w[..n].copy_from_slice(y_end);
    let mut rhs = |t: f64, w: &[f64], dw: &mut [f64]| {
        let (dy, dq) = dw.split_at_mut(n);
        rhs_quad(t, &w[..n], dy, dq);
        for v in dq.iter_mut() {
            *v = -*v;
        }
    };
    let mut stepper = Integrator::new(cfg.method, n + quad_dim, n);
    let mut trajectory = Array2::zeros((times.len(), n));
    on_grid(last, &mut w[..n])?;
    stepper.guard(&w, times[last])?;
    trajectory
        .row_mut(last)
        .assign(&Array1::from(w[..n].to_vec()));
    for i in (0..last).rev() {
        stepper.advance(&mut rhs, &mut w, times[i + 1], times[i])?;
        on_grid(i, &mut w[..n])?;
        stepper.reset();
        trajectory.row_mut(i).assign(&Array1::from(w[..n].to_vec()));
    }
    Ok(ReverseResult {
        trajectory,
        accumulated: Array1::from(w[n..].to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![]).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, f64::NAN]).is_err());
        let g = TimeGrid::uniform(0.0, 7.0, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.end(), 7.0);
    }

    #[test]
    fn solver_spec_parsing() {
        assert_eq!(
            "rk4:0.01".parse::<SolverConfig>().unwrap(),
            SolverConfig::rk4(0.01)
        );
        assert!(matches!(
            "dopri45:1e-6:1e-8".parse::<SolverConfig>().unwrap().method,
            Method::Dopri45 { .. }
        ));
        assert!("rk4:-1".parse::<SolverConfig>().is_err());
        assert!("euler:0.1".parse::<SolverConfig>().is_err());
    }

    #[test]
    fn zero_field_is_constant() {
        let grid = TimeGrid::uniform(0.0, 3.0, 7).unwrap();
        for cfg in [SolverConfig::rk4(0.1), SolverConfig::default()] {
            let out = integrate(|_, _, dy| dy.fill(0.0), &[1.5, -2.0], &grid, &cfg).unwrap();
            assert!(out.rows().into_iter().all(|r| r[0] == 1.5 && r[1] == -2.0));
        }
    }

    #[test]
    fn divergence_reports_time() {
        let grid = TimeGrid::uniform(0.0, 10.0, 3).unwrap();
        let err = integrate(
            |_, y, dy| dy[0] = y[0] * y[0],
            &[1.0],
            &grid,
            &SolverConfig::rk4(1e-3),
        )
        .unwrap_err();
        match err {
            Error::Diverged { t } => assert!(t > 0.9 && t < 1.01, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adaptive_blowup_is_an_error() {
        let grid = TimeGrid::uniform(0.0, 10.0, 3).unwrap();
        let err = integrate(
            |_, y, dy| dy[0] = y[0] * y[0],
            &[1.0],
            &grid,
            &SolverConfig::default(),
        )
        .unwrap_err();
        assert!(err.is_divergence());
    }

    #[test]
    fn backward_direction_lands_on_start() {
        let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let cfg = SolverConfig::dopri45(1e-10, 1e-12, 1.0).backward();
        let out = integrate(|_, y, dy| dy[0] = -y[0], &[(-1.0f64).exp()], &grid, &cfg).unwrap();
        assert!((out[[0, 0]] - 1.0).abs() < 1e-9);
        assert_eq!(out[[10, 0]], (-1.0f64).exp());
    }

    #[test]
    fn unit_quadrature() {
        let grid = TimeGrid::new(vec![0.0, 2.5]).unwrap();
        let res = integrate_reverse_with_accumulator(
            |_, _, dy| dy.fill(0.0),
            |_, _, q| q[0] = 1.0,
            1,
            &[0.0],
            &grid,
            &SolverConfig::rk4(0.1),
        )
        .unwrap();
        assert!((res.accumulated[0] - 2.5).abs() < 1e-12);
    }
}
