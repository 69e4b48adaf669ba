//! Train a sensitivity-aware model on one oscillator trajectory (u = 1) and a
//! plain NODE on two (u = 1, 1.1), then compare both across u ∈ [0.25, 8].
//!
//! cargo run --release --example oscillator_trase -- [epochs] [seed] [lr]
//!
//! Set `VERBOSE=1` to print the NMSE row for every u.

use trase_node::eval::{sweep, ModelRef, SweepOptions};
use trase_node::systems::gen_oscillator;
use trase_node::{
    train, Activation, DiffNet, Mode, NetSpec, OscillatorParams, SolverConfig, TimeGrid,
    TrainConfig,
};

fn main() -> trase_node::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(10_000, |a| a.parse().expect("epochs"));
    let seed: u64 = args.next().map_or(0, |a| a.parse().expect("seed"));
    let lr: f64 = args.next().map_or(1e-3, |a| a.parse().expect("lr"));

    let params = OscillatorParams::default();
    let grid = TimeGrid::uniform(0.0, 7.0, 100)?;
    let truth = SolverConfig::ground_truth();
    let sc = |u| gen_oscillator(&params, u, &grid, &truth);

    let spec = NetSpec::single_hidden(2, 0, 32, Activation::leaky_relu());
    let mut trase_cfg = TrainConfig::new(Mode::Trase, spec.clone(), vec![sc(1.0)?]);
    trase_cfg.epochs = epochs;
    trase_cfg.seed = seed;
    trase_cfg.lr = lr;
    let mut node_cfg = TrainConfig::new(Mode::Node, spec.clone(), vec![sc(1.0)?, sc(1.1)?]);
    node_cfg.epochs = epochs;
    node_cfg.seed = seed;
    node_cfg.lr = lr;

    let trase = train(&trase_cfg)?;
    println!(
        "TRASE: loss {:.3e} -> {:.3e} in {:.1}s",
        trase.loss_history.first().unwrap_or(&f64::NAN),
        trase.loss_history.last().unwrap_or(&f64::NAN),
        trase.wall_time
    );
    let node = train(&node_cfg)?;
    println!(
        "NODE:  loss {:.3e} -> {:.3e} in {:.1}s",
        node.loss_history.first().unwrap_or(&f64::NAN),
        node.loss_history.last().unwrap_or(&f64::NAN),
        node.wall_time
    );

    let net = DiffNet::new(spec)?;
    let models = [
        ModelRef {
            id: "TRASE",
            net: &net,
            theta: &trase.final_params,
        },
        ModelRef {
            id: "NODE",
            net: &net,
            theta: &node.final_params,
        },
    ];
    let u_grid: Vec<f64> = (1..=32).map(|k| 0.25 * k as f64).collect();
    let report = sweep(
        &models,
        &u_grid,
        sc,
        &trase_cfg.solver,
        &SweepOptions::default(),
    )?;
    println!("channels: {:?}", report.channels);
    if std::env::var_os("VERBOSE").is_some() {
        for (k, u) in report.u_values.iter().enumerate() {
            let row: Vec<String> = report
                .models
                .iter()
                .map(|m| {
                    m.per_u[k]
                        .0
                        .iter()
                        .map(|v| format!("{v:.2e}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect();
            println!("u={u:5.2} {}", row.join("  "));
        }
    }
    for m in &report.models {
        println!("{:>5} worst-case NMSE: {:?}", m.id, m.worst_case);
    }
    Ok(())
}
