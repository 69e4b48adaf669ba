//! Command-line front end.
//!
//! Each subcommand optionally reads a JSON config (`--config`); command-line
//! flags override config fields, which override built-in defaults. Every run
//! writes exactly one `manifest.json` into its output directory and refuses
//! to reuse a directory that already holds one.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence,
//! 5 I/O error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffnet::{Activation, Checkpoint, DiffNet, HiddenLayer, NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::eval::{self, ModelRef, SweepOptions};
use crate::loss::LossWeights;
use crate::node::BackwardMode;
use crate::odeint::{SolverConfig, TimeGrid};
use crate::systems::{
    export_csv, finite_diff_sensitivity, gen_ibr_surrogate, gen_linear_scalar, gen_oscillator,
    load_scenario, sidecar_path, IbrParams, OscillatorParams, Scenario, IBR_FIXTURE_SETPOINTS,
};
use crate::training::{fit_input_normalization, train, Mode, TrainConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Diverged { .. } | Error::Stiff { .. } => EXIT_DIVERGED,
        Error::Io { .. } | Error::Json { .. } => EXIT_IO,
        Error::Dimension { .. }
        | Error::Data(_)
        | Error::DegenerateSpacing(_)
        | Error::DegenerateNormalization { .. }
        | Error::Parse { .. } => EXIT_DATA,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "trase-node",
    version,
    about = "Neural ODE system identification with sensitivity-aware training"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// RNG seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Solver, `rk4:<step>` or `dopri45:<rtol>:<atol>[:<max_step>]`.
    #[arg(long, global = true)]
    pub solver: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate ground-truth scenario CSVs.
    Generate(GenerateArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Evaluate one or two checkpoints over a range of set-points.
    Sweep(SweepArgs),
    /// Evaluate one or two checkpoints on scenario files.
    Compare(CompareArgs),
    /// Write the surrogate inverter fixture set.
    ExportFixtures(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Linear,
    Oscillator,
}

#[derive(Args, Debug, Default)]
pub struct SystemArgs {
    #[arg(long, value_enum)]
    pub system: Option<System>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long)]
    pub omega_n: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Comma-separated set-points.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub u: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Checkpoint of the model under test.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Optional second checkpoint for a paired comparison.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// `start:end:step`, inclusive of `end` up to rounding.
    #[arg(long)]
    pub u_range: Option<String>,
    /// Explicit comma-separated set-points (overrides `--u-range`).
    #[arg(long, value_delimiter = ',')]
    pub u: Option<Vec<f64>>,
    /// Set-points at which to keep normalized-error traces.
    #[arg(long, value_delimiter = ',')]
    pub trace_u: Option<Vec<f64>>,
    /// Also write SVG charts.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Scenario CSV files (sidecar JSON next to each).
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Comma-separated set-points; defaults to the standard fixture set.
    #[arg(long, value_delimiter = ',')]
    pub v_ref: Option<Vec<f64>>,
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    /// SHA-256 of the resolved configuration (after flag overrides).
    pub config_hash: String,
    pub resolved_config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub seed: Option<u64>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        Error::Config(format!("{}: at `{at}`: {}", path.display(), e.into_inner()))
    })
}

fn load_config<T: DeserializeOwned + Default>(global: &GlobalArgs) -> Result<T> {
    match &global.config {
        Some(p) => load_json(p),
        None => Ok(T::default()),
    }
}

fn parse_solver(s: &str) -> Result<SolverConfig> {
    s.parse().map_err(|e: Error| match e {
        Error::Config(m) => Error::Config(format!("--solver: {m}")),
        other => other,
    })
}

fn hash_config<T: Serialize>(cfg: &T) -> Result<(String, serde_json::Value)> {
    let value = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let canonical = serde_json::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
    Ok((hex::encode(Sha256::digest(canonical.as_bytes())), value))
}

/// Creates `dir` and fails if a previous run already wrote a manifest there.
fn claim_out_dir(dir: &Path) -> Result<()> {
    let m = dir.join(MANIFEST_NAME);
    if m.exists() {
        return Err(Error::io(
            &m,
            std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                "output directory already used by a previous run",
            ),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct Run<'a> {
    command: &'a str,
    global: &'a GlobalArgs,
    out: PathBuf,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run<'_> {
    fn finish<T: Serialize>(self, resolved: &T) -> Result<()> {
        let (config_hash, resolved_config) = hash_config(resolved)?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            config_path: self.global.config.clone(),
            config_hash,
            resolved_config,
            inputs: self.inputs,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
        };
        let path = self.out.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn required_out(global: &GlobalArgs, from_config: &Option<PathBuf>) -> Result<PathBuf> {
    global
        .out
        .clone()
        .or_else(|| from_config.clone())
        .ok_or_else(|| Error::Config("an output directory is required (--out)".into()))
}

/// Ground-truth system description shared by `generate` and `sweep`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub system: System,
    pub t_start: f64,
    pub t_end: f64,
    pub points: usize,
    pub oscillator: OscillatorParams,
    /// Initial state of the linear system.
    pub linear_x0: f64,
    pub solver: SolverConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            system: System::Oscillator,
            t_start: 0.0,
            t_end: 7.0,
            points: 100,
            oscillator: OscillatorParams::default(),
            linear_x0: 2.0,
            solver: SolverConfig::ground_truth(),
        }
    }
}

impl SystemConfig {
    fn apply(&mut self, a: &SystemArgs, global: &GlobalArgs) -> Result<()> {
        if let Some(s) = a.system {
            self.system = s;
        }
        if let Some(v) = a.t_end {
            self.t_end = v;
        }
        if let Some(v) = a.points {
            self.points = v;
        }
        if let Some(v) = a.x0 {
            self.oscillator.x0 = v;
            self.linear_x0 = v;
        }
        if let Some(v) = a.v0 {
            self.oscillator.v0 = v;
        }
        if let Some(v) = a.omega_n {
            self.oscillator.omega_n = v;
        }
        if let Some(v) = a.zeta {
            self.oscillator.zeta = v;
        }
        if let Some(s) = &global.solver {
            self.solver = parse_solver(s)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.solver.validate()?;
        match self.system {
            System::Oscillator => self.oscillator.validate(),
            System::Linear if !self.linear_x0.is_finite() => {
                Err(Error::Config("linear_x0 must be finite".into()))
            }
            System::Linear => Ok(()),
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t_start, self.t_end, self.points)
            .map_err(|e| Error::Config(format!("time grid: {e}")))
    }

    pub fn scenario(&self, u: f64) -> Result<Scenario> {
        let grid = self.grid()?;
        match self.system {
            System::Linear => Ok(gen_linear_scalar(u, self.linear_x0, &grid)),
            System::Oscillator => gen_oscillator(&self.oscillator, u, &grid, &self.solver),
        }
    }

    fn name(&self) -> &'static str {
        match self.system {
            System::Linear => "linear",
            System::Oscillator => "oscillator",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(flatten)]
    pub system: SystemConfig,
    pub u: Vec<f64>,
    pub out: Option<PathBuf>,
}

fn check_finite_list(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::Config(format!(
            "{name} contains non-finite value {v}"
        ))),
        None => Ok(()),
    }
}

fn cmd_generate(args: &GenerateArgs, global: &GlobalArgs) -> Result<()> {
    let mut cfg: GenerateConfig = load_config(global)?;
    cfg.system.apply(&args.system, global)?;
    if let Some(u) = &args.u {
        cfg.u = u.clone();
    }
    check_finite_list("u", &cfg.u)?;
    cfg.system.validate()?;
    let out = required_out(global, &cfg.out)?;
    claim_out_dir(&out)?;
    let mut run = Run {
        command: "generate",
        global,
        out: out.clone(),
        seed: global.seed,
        inputs: global.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    for &u in &cfg.u {
        let sc = cfg.system.scenario(u)?;
        let path = out.join(format!("{}_u{u}.csv", cfg.system.name()));
        export_csv(&sc, &path)?;
        run.outputs.push(sidecar_path(&path));
        run.outputs.push(path);
    }
    cfg.out = Some(out);
    run.finish(&cfg)
}

/// A training scenario file, optionally paired with a neighbouring
/// set-point whose difference supplies finite-difference sensitivities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path(PathBuf),
    Paired {
        path: PathBuf,
        #[serde(default)]
        fd_partner: Option<PathBuf>,
    },
}

impl ScenarioSource {
    fn paths(&self) -> (&Path, Option<&Path>) {
        match self {
            ScenarioSource::Path(p) => (p, None),
            ScenarioSource::Paired { path, fd_partner } => (path, fd_partner.as_deref()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    #[default]
    None,
    /// Mean/std of the training scenarios.
    Auto,
}

/// JSON training configuration. Scenario paths are relative to the config
/// file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFileConfig {
    pub mode: Mode,
    pub scenarios: Vec<ScenarioSource>,
    pub hidden_layers: Vec<HiddenLayer>,
    pub time_as_input: bool,
    pub input_scaling: InputScaling,
    pub epochs: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
    /// Defaults to RK4 with 1000 steps over the horizon.
    pub solver: Option<SolverConfig>,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub clip_grad_norm: Option<f64>,
    pub backward_mode: BackwardMode,
    pub out: Option<PathBuf>,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        TrainFileConfig {
            mode: Mode::Trase,
            scenarios: Vec::new(),
            hidden_layers: vec![HiddenLayer {
                width: 32,
                activation: Activation::leaky_relu(),
            }],
            time_as_input: false,
            input_scaling: InputScaling::None,
            epochs: 3000,
            lr: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
            solver: None,
            seed: 0,
            checkpoint_every: 0,
            clip_grad_norm: None,
            backward_mode: BackwardMode::Reintegrate,
            out: None,
        }
    }
}

impl TrainFileConfig {
    /// Loads the scenarios and assembles a validated [`TrainConfig`].
    pub fn resolve(&self, base: &Path) -> Result<(TrainConfig, Vec<PathBuf>)> {
        if self.scenarios.is_empty() {
            return Err(Error::Config(
                "`scenarios` must list at least one file".into(),
            ));
        }
        // Cheap checks first so a bad config fails before any file is read.
        self.loss_weights
            .validate(usize::MAX)
            .or_else(|e| match e {
                Error::Dimension { .. } => Ok(()),
                other => Err(other),
            })?;
        let mut inputs = Vec::new();
        let mut scenarios = Vec::with_capacity(self.scenarios.len());
        for src in &self.scenarios {
            let (path, partner) = src.paths();
            let path = base.join(path);
            let mut sc = load_scenario(&path)?;
            inputs.push(path);
            if let Some(partner) = partner {
                let partner = base.join(partner);
                let other = load_scenario(&partner)?;
                inputs.push(partner);
                sc = finite_diff_sensitivity(&sc, &other)?;
            }
            scenarios.push(sc);
        }
        let first = &scenarios[0];
        let mut spec = NetSpec::new(
            first.state_dim(),
            first.exo_dim(),
            self.hidden_layers.clone(),
        );
        if self.time_as_input {
            spec = spec.with_time_input();
        }
        if self.input_scaling == InputScaling::Auto {
            spec = spec
                .clone()
                .with_normalization(fit_input_normalization(&spec, &scenarios, 1.0)?);
        }
        let mut cfg = TrainConfig::new(self.mode, spec, scenarios);
        cfg.epochs = self.epochs;
        cfg.lr = self.lr;
        cfg.adam_betas = self.adam_betas;
        cfg.adam_eps = self.adam_eps;
        cfg.loss_weights = self.loss_weights.clone();
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        cfg.seed = self.seed;
        cfg.checkpoint_every = self.checkpoint_every;
        cfg.clip_grad_norm = self.clip_grad_norm;
        cfg.backward_mode = self.backward_mode;
        Ok((cfg, inputs))
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    #[serde(serialize_with = "crate::fmt17::serialize_vec_lossless")]
    loss_history: &'a [f64],
    epochs_completed: usize,
    wall_time: f64,
    diverged: bool,
    final_lr: f64,
}

fn cmd_train(args: &TrainArgs, global: &GlobalArgs) -> Result<()> {
    let Some(config_path) = &global.config else {
        return Err(Error::Config("train requires --config".into()));
    };
    let mut fc: TrainFileConfig = load_json(config_path)?;
    if let Some(s) = global.seed {
        fc.seed = s;
    }
    if let Some(s) = &global.solver {
        fc.solver = Some(parse_solver(s)?);
    }
    if let Some(e) = args.epochs {
        fc.epochs = e;
    }
    if let Some(lr) = args.lr {
        fc.lr = lr;
    }
    let out = required_out(global, &fc.out)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let (mut cfg, inputs) = fc.resolve(base)?;
    if cfg.checkpoint_every > 0 {
        cfg.checkpoint_dir = Some(out.join("checkpoints"));
    }
    cfg.validate()?;
    claim_out_dir(&out)?;

    let report = train(&cfg)?;
    let mut run = Run {
        command: "train",
        global,
        out: out.clone(),
        seed: Some(cfg.seed),
        inputs: std::iter::once(config_path.clone()).chain(inputs).collect(),
        outputs: Vec::new(),
    };
    let ck_path = out.join("checkpoint.json");
    let mut ck = Checkpoint::new(cfg.net.clone(), &report.final_params);
    ck.epoch = Some(report.loss_history.len());
    ck.save(&ck_path)?;
    run.outputs.push(ck_path);

    let summary = TrainSummary {
        loss_history: &report.loss_history,
        epochs_completed: report.loss_history.len(),
        wall_time: report.wall_time,
        diverged: report.diverged,
        final_lr: report.final_lr,
    };
    let rep_path = out.join("train_report.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&rep_path, e))?;
    fs::write(&rep_path, text).map_err(|e| Error::io(&rep_path, e))?;
    run.outputs.push(rep_path);
    if cfg.checkpoint_every > 0 {
        run.outputs.push(out.join("checkpoints"));
    }
    fc.out = Some(out);
    run.finish(&fc)?;
    if report.diverged {
        return Err(Error::Diverged { t: f64::NAN });
    }
    Ok(())
}

/// Parses `start:end:step` into an inclusive grid.
pub fn parse_u_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("u range `{spec}` must be start:end:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, end, step) = (v[0], v[1], v[2]);
    if !(start.is_finite() && end.is_finite() && step.is_finite() && step > 0.0 && end >= start) {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(flatten)]
    pub system: SystemConfig,
    pub model: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub u: Vec<f64>,
    /// Solver for the trained models; defaults to the ground-truth solver.
    pub model_solver: Option<SolverConfig>,
    pub trace_u: Vec<f64>,
    pub svg: bool,
    pub out: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<(DiffNet, ParamVector)> {
    Checkpoint::load(path)?.into_model()
}

fn evaluate_models<F>(
    model: &Path,
    baseline: Option<&Path>,
    run_inputs: &mut Vec<PathBuf>,
    f: F,
) -> Result<eval::MetricsReport>
where
    F: FnOnce(&[ModelRef<'_>]) -> Result<eval::MetricsReport>,
{
    let a = load_model(model)?;
    run_inputs.push(model.to_path_buf());
    let b = match baseline {
        Some(p) => {
            let m = load_model(p)?;
            run_inputs.push(p.to_path_buf());
            Some(m)
        }
        None => None,
    };
    let mut refs = vec![ModelRef {
        id: "model",
        net: &a.0,
        theta: &a.1,
    }];
    if let Some(b) = &b {
        refs.push(ModelRef {
            id: "baseline",
            net: &b.0,
            theta: &b.1,
        });
    }
    f(&refs)
}

fn cmd_sweep(args: &SweepArgs, global: &GlobalArgs) -> Result<()> {
    let mut cfg: SweepConfig = load_config(global)?;
    cfg.system.apply(&args.system, global)?;
    if let Some(m) = &args.model {
        cfg.model = Some(m.clone());
    }
    if let Some(b) = &args.baseline {
        cfg.baseline = Some(b.clone());
    }
    if let Some(r) = &args.u_range {
        cfg.u = parse_u_range(r)?;
    }
    if let Some(u) = &args.u {
        cfg.u = u.clone();
    }
    if let Some(t) = &args.trace_u {
        cfg.trace_u = t.clone();
    }
    cfg.svg |= args.svg;
    check_finite_list("u", &cfg.u)?;
    cfg.system.validate()?;
    let model = cfg
        .model
        .clone()
        .ok_or_else(|| Error::Config("sweep requires --model".into()))?;
    let solver = cfg.model_solver.unwrap_or(cfg.system.solver);
    solver.validate()?;
    let out = required_out(global, &cfg.out)?;
    claim_out_dir(&out)?;
    let mut run = Run {
        command: "sweep",
        global,
        out: out.clone(),
        seed: global.seed,
        inputs: global.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    let opts = SweepOptions {
        trace_u: cfg.trace_u.clone(),
    };
    let report = evaluate_models(&model, cfg.baseline.as_deref(), &mut run.inputs, |refs| {
        eval::sweep(refs, &cfg.u, |u| cfg.system.scenario(u), &solver, &opts)
    })?;
    run.outputs = eval::write_report(&report, &out, cfg.svg)?;
    cfg.out = Some(out);
    run.finish(&cfg)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub model: Option<PathBuf>,
    pub baseline: Option<PathBuf>,
    pub scenarios: Vec<ScenarioSource>,
    pub solver: Option<SolverConfig>,
    pub trace: bool,
    pub svg: bool,
    pub out: Option<PathBuf>,
}

fn cmd_compare(args: &CompareArgs, global: &GlobalArgs) -> Result<()> {
    let mut cfg: CompareConfig = load_config(global)?;
    if let Some(m) = &args.model {
        cfg.model = Some(m.clone());
    }
    if let Some(b) = &args.baseline {
        cfg.baseline = Some(b.clone());
    }
    if let Some(s) = &args.scenarios {
        cfg.scenarios = s.iter().cloned().map(ScenarioSource::Path).collect();
    }
    if let Some(s) = &global.solver {
        cfg.solver = Some(parse_solver(s)?);
    }
    cfg.svg |= args.svg;
    let model = cfg
        .model
        .clone()
        .ok_or_else(|| Error::Config("compare requires --model".into()))?;
    if cfg.scenarios.is_empty() {
        return Err(Error::Config(
            "compare requires at least one scenario".into(),
        ));
    }
    let solver = cfg.solver.unwrap_or_else(SolverConfig::ground_truth);
    solver.validate()?;
    let out = required_out(global, &cfg.out)?;
    let base = match (&global.config, &args.scenarios) {
        (Some(p), None) => p.parent().unwrap_or(Path::new(".")).to_path_buf(),
        _ => PathBuf::new(),
    };
    let mut inputs: Vec<PathBuf> = global.config.iter().cloned().collect();
    let mut scenarios = Vec::new();
    for src in &cfg.scenarios {
        let (p, partner) = src.paths();
        let p = base.join(p);
        let mut sc = load_scenario(&p)?;
        inputs.push(p);
        if let Some(partner) = partner {
            let partner = base.join(partner);
            sc = finite_diff_sensitivity(&sc, &load_scenario(&partner)?)?;
            inputs.push(partner);
        }
        scenarios.push(sc);
    }
    claim_out_dir(&out)?;
    let mut run = Run {
        command: "compare",
        global,
        out: out.clone(),
        seed: global.seed,
        inputs,
        outputs: Vec::new(),
    };
    let opts = SweepOptions {
        trace_u: if cfg.trace {
            scenarios.iter().map(|s| s.u).collect()
        } else {
            Vec::new()
        },
    };
    let report = evaluate_models(&model, cfg.baseline.as_deref(), &mut run.inputs, |refs| {
        eval::compare(refs, &scenarios, &solver, &opts)
    })?;
    run.outputs = eval::write_report(&report, &out, cfg.svg)?;
    cfg.out = Some(out);
    run.finish(&cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub v_ref: Vec<f64>,
    pub out: Option<PathBuf>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            v_ref: IBR_FIXTURE_SETPOINTS.to_vec(),
            out: None,
        }
    }
}

/// File name used for the fixture at set-point `v_ref`.
pub fn fixture_name(v_ref: f64) -> String {
    format!("ibr_vref_{v_ref:.3}.csv")
}

fn cmd_export(args: &ExportArgs, global: &GlobalArgs) -> Result<()> {
    let mut cfg: ExportConfig = load_config(global)?;
    if let Some(v) = &args.v_ref {
        cfg.v_ref = v.clone();
    }
    check_finite_list("v_ref", &cfg.v_ref)?;
    if global.solver.is_some() {
        log::warn!("--solver is ignored by export-fixtures");
    }
    let out = required_out(global, &cfg.out)?;
    claim_out_dir(&out)?;
    let mut run = Run {
        command: "export-fixtures",
        global,
        out: out.clone(),
        seed: global.seed,
        inputs: global.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    let params = IbrParams::default();
    for &v in &cfg.v_ref {
        let sc = gen_ibr_surrogate(&params, v)?;
        let path = out.join(fixture_name(v));
        export_csv(&sc, &path)?;
        run.outputs.push(sidecar_path(&path));
        run.outputs.push(path);
    }
    cfg.out = Some(out);
    run.finish(&cfg)
}

/// Runs an already parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, g),
        Command::Train(a) => cmd_train(a, g),
        Command::Sweep(a) => cmd_sweep(a, g),
        Command::Compare(a) => cmd_compare(a, g),
        Command::ExportFixtures(a) => cmd_export(a, g),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Errors are printed to stderr.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}
