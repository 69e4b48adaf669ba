//! Continuous-time system identification with neural ODEs trained by the
//! adjoint method, with an optional trajectory-sensitivity-aware mode that
//! fits both the state trajectory `x(t)` and its sensitivity `∂x(t)/∂u` to a
//! control set-point `u`.
//!
//! Module map:
//!
//! * [`diffnet`]: the feedforward vector field and its exact derivatives;
//! * [`odeint`]: RK4 / Dormand–Prince integrators and the backward sweep;
//! * [`node`]: the baseline NODE forward pass and adjoint gradient;
//! * [`trase`]: augmented state/sensitivity dynamics and their adjoint;
//! * [`systems`]: ground-truth generators and CSV scenario I/O;
//! * [`training`]: Adam and the full-batch training loop;
//! * [`eval`]: NMSE metrics, set-point sweeps and report files;
//! * [`cli`]: the command-line front end.

pub mod cli;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod fmt17;
pub mod loss;
pub mod node;
pub mod odeint;
pub mod systems;
pub mod training;
pub mod trase;

pub use diffnet::{Activation, Checkpoint, DiffNet, ModelInput, NetSpec, ParamVector};
pub use error::{Error, Result};
pub use loss::LossWeights;
pub use node::{node_adjoint_grad, node_forward, BackwardMode, GradResult};
pub use odeint::{SolverConfig, TimeGrid};
pub use systems::{OscillatorParams, Scenario};
pub use training::{train, Mode, TrainConfig, TrainReport};
pub use trase::{trase_adjoint_grad, trase_forward};
