//! Error of the fixed-step and adaptive solvers on ẋ = −3x + u against the
//! closed form, with the observed RK4 order.

use trase_node::odeint::integrate;
use trase_node::{SolverConfig, TimeGrid};

fn main() -> trase_node::Result<()> {
    let grid = TimeGrid::uniform(0.0, 2.0, 21)?;
    let (u, x0) = (1.0, 2.0);
    let exact = |t: f64| u / 3.0 + (x0 - u / 3.0) * (-3.0 * t).exp();
    let max_err = |cfg: &SolverConfig| -> trase_node::Result<f64> {
        let traj = integrate(|_, x, dx| dx[0] = -3.0 * x[0] + u, &[x0], &grid, cfg)?;
        Ok(grid
            .times()
            .iter()
            .enumerate()
            .map(|(i, &t)| (traj[[i, 0]] - exact(t)).abs())
            .fold(0.0, f64::max))
    };

    let mut prev: Option<f64> = None;
    for h in [0.1, 0.05, 0.025, 0.0125, 0.00625] {
        let e = max_err(&SolverConfig::rk4(h))?;
        match prev {
            Some(p) => println!("rk4 h = {h:<8} error {e:.3e}  order {:.3}", (p / e).log2()),
            None => println!("rk4 h = {h:<8} error {e:.3e}"),
        }
        prev = Some(e);
    }
    for rtol in [1e-4, 1e-7, 1e-10] {
        let e = max_err(&SolverConfig::dopri45(rtol, rtol * 1e-2, f64::INFINITY))?;
        println!("dopri45 rtol = {rtol:<6e} error {e:.3e}");
    }
    Ok(())
}
