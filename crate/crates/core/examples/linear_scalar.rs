//! Smallest end-to-end run: fit ẋ = −3x + u from two trajectories with a
//! small tanh network, then check it on a set-point it never saw.

use trase_node::eval::{compare, ModelRef, SweepOptions};
use trase_node::systems::gen_linear_scalar;
use trase_node::{train, Activation, DiffNet, Mode, NetSpec, SolverConfig, TimeGrid, TrainConfig};

fn main() -> trase_node::Result<()> {
    let grid = TimeGrid::uniform(0.0, 2.0, 41)?;
    let scenarios = vec![
        gen_linear_scalar(1.0, 2.0, &grid),
        gen_linear_scalar(2.0, 2.0, &grid),
    ];
    let spec = NetSpec::single_hidden(1, 0, 16, Activation::Tanh);

    for mode in [Mode::Node, Mode::Trase] {
        let mut cfg = TrainConfig::new(mode, spec.clone(), scenarios.clone());
        cfg.epochs = 600;
        cfg.lr = 1e-2;
        cfg.solver = SolverConfig::rk4(0.01);
        let rep = train(&cfg)?;
        let net = DiffNet::new(spec.clone())?;
        let held_out = [gen_linear_scalar(3.0, 2.0, &grid)];
        let m = [ModelRef {
            id: "model",
            net: &net,
            theta: &rep.final_params,
        }];
        let cmp = compare(&m, &held_out, &cfg.solver, &SweepOptions::default())?;
        println!(
            "{mode:?}: loss {:.3e} -> {:.3e}; NMSE at u = 3: x {:.2e}, s_x {:.2e}",
            rep.loss_history[0],
            rep.loss_history.last().expect("epochs > 0"),
            cmp.models[0].per_u[0].0[0],
            cmp.models[0].per_u[0].0[1]
        );
    }
    Ok(())
}
