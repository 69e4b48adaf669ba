//! Ground-truth oscillator trajectories and their sensitivities to the
//! set-point. The sensitivities are the same for every u because the system
//! is linear in u; a finite-difference pair recovers them.

use trase_node::systems::{finite_diff_sensitivity, gen_oscillator};
use trase_node::{OscillatorParams, SolverConfig, TimeGrid};

fn main() -> trase_node::Result<()> {
    let p = OscillatorParams::default();
    let grid = TimeGrid::uniform(0.0, 7.0, 100)?;
    let truth = SolverConfig::ground_truth();
    let runs = [1.0, 2.0, 4.0, 8.0]
        .iter()
        .map(|&u| gen_oscillator(&p, u, &grid, &truth))
        .collect::<trase_node::Result<Vec<_>>>()?;

    let base = &runs[0]
        .sensitivities
        .as_ref()
        .expect("generated with sensitivities")
        .values;
    for sc in &runs {
        let s = &sc
            .sensitivities
            .as_ref()
            .expect("generated with sensitivities")
            .values;
        let diff = (s - base).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let x_end = sc.states[[grid.len() - 1, 0]];
        println!(
            "u = {:>3}: x(T) = {x_end:.6}  max |s - s(u=1)| = {diff:.2e}",
            sc.u
        );
    }

    let mut stripped = runs[0].clone();
    stripped.sensitivities = None;
    let fd = finite_diff_sensitivity(&stripped, &runs[1])?;
    let err = (&fd.sensitivities.expect("attached").values - base)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("finite-difference pair (1, 2): max error {err:.2e}");
    println!(
        "s_x(T) = {:.6}, steady state 1/omega^2 = {:.6}",
        base[[grid.len() - 1, 0]],
        1.0 / (p.omega_n * p.omega_n)
    );
    Ok(())
}
