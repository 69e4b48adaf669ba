//! Compare adjoint gradients against central differences of the discretized
//! loss on the oscillator, for both the plain and the sensitivity-aware loss.
//!
//! cargo run --release --example gradient_check -- [seed]

use trase_node::node::node_loss;
use trase_node::systems::gen_oscillator;
use trase_node::trase::trase_loss;
use trase_node::{
    node_adjoint_grad, trase_adjoint_grad, Activation, DiffNet, LossWeights, NetSpec,
    OscillatorParams, SolverConfig, TimeGrid,
};

fn main() -> trase_node::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |a| a.parse().expect("seed"));
    let grid = TimeGrid::uniform(0.0, 7.0, 100)?;
    let sc = gen_oscillator(
        &OscillatorParams::default(),
        1.0,
        &grid,
        &SolverConfig::ground_truth(),
    )?;
    let net = DiffNet::new(NetSpec::single_hidden(2, 0, 32, Activation::Tanh))?;
    let theta = net.init_params(seed);
    let cfg = SolverConfig::training(7.0);
    let w = LossWeights::default();

    let node = node_adjoint_grad(&net, &theta, &sc, &cfg, &w)?;
    let trase = trase_adjoint_grad(&net, &theta, &sc, &cfg, &w)?;
    println!("loss: node {:.6e}  trase {:.6e}", node.loss, trase.loss);
    println!(
        "{:>5} {:>14} {:>14} {:>14} {:>14}",
        "j", "node adj", "node fd", "trase adj", "trase fd"
    );
    let h = 1e-6;
    for j in (0..net.param_count()).step_by(net.param_count() / 12) {
        let (mut p, mut m) = (theta.clone(), theta.clone());
        p.as_mut_slice()[j] += h;
        m.as_mut_slice()[j] -= h;
        let fd_node =
            (node_loss(&net, &p, &sc, &cfg, &w)? - node_loss(&net, &m, &sc, &cfg, &w)?) / (2.0 * h);
        let fd_trase = (trase_loss(&net, &p, &sc, &cfg, &w)?
            - trase_loss(&net, &m, &sc, &cfg, &w)?)
            / (2.0 * h);
        println!(
            "{j:>5} {:>14.6e} {fd_node:>14.6e} {:>14.6e} {fd_trase:>14.6e}",
            node.grad[j], trase.grad[j]
        );
    }
    Ok(())
}
