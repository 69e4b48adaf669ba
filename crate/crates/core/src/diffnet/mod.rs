//! Feedforward vector field `f_θ(x, t, u, y)` with exact first- and
//! second-order derivatives.
//!
//! The network input is the concatenation `[x; u; y]` (plus `t` at the end
//! when [`NetSpec::time_as_input`] is set), optionally passed through a fixed
//! affine normalization. Hidden layers apply an activation; the output layer
//! is linear.
//!
//! Derivatives are computed in closed form, layer by layer:
//!
//! * a forward pass propagates the primal values together with a tangent
//!   along an input direction `d` (forward mode), which gives
//!   `J_u + J_x·s` for `d = [s; 1; 0]`;
//! * a reverse pass over that forward-tangent computation gives
//!   vector-Jacobian products of both the primal output and the tangent
//!   output with respect to the inputs, the direction, and θ.
//!
//! The second-order blocks needed by the augmented adjoint are the reverse
//! derivatives of the tangent output, so no Hessian tensor is ever built.

mod checkpoint;

pub use checkpoint::Checkpoint;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn leaky_relu() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Value, first and second derivative at `a`.
    #[inline]
    fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::LeakyRelu { slope } => {
                if a > 0.0 {
                    (a, 1.0, 0.0)
                } else {
                    (slope * a, slope, 0.0)
                }
            }
            Activation::Tanh => {
                let t = a.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

/// Fixed affine map applied to the raw network input: `(raw - offset) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Architecture of the vector-field network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// `n + 1 + m` (+1 when time is an input).
    pub input_dim: usize,
    /// State dimension `n`.
    pub output_dim: usize,
    #[serde(default)]
    pub exo_dim: usize,
    #[serde(default)]
    pub time_as_input: bool,
    pub hidden_layers: Vec<HiddenLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_normalization: Option<InputNormalization>,
}

impl NetSpec {
    pub fn new(state_dim: usize, exo_dim: usize, hidden_layers: Vec<HiddenLayer>) -> Self {
        NetSpec {
            input_dim: state_dim + 1 + exo_dim,
            output_dim: state_dim,
            exo_dim,
            time_as_input: false,
            hidden_layers,
            input_normalization: None,
        }
    }

    /// One hidden layer of `width` units.
    pub fn single_hidden(
        state_dim: usize,
        exo_dim: usize,
        width: usize,
        activation: Activation,
    ) -> Self {
        Self::new(state_dim, exo_dim, vec![HiddenLayer { width, activation }])
    }

    pub fn with_time_input(mut self) -> Self {
        if !self.time_as_input {
            self.time_as_input = true;
            self.input_dim += 1;
        }
        self
    }

    pub fn with_normalization(mut self, norm: InputNormalization) -> Self {
        self.input_normalization = Some(norm);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.output_dim
    }

    /// Index of `u` in the network input.
    pub fn u_index(&self) -> usize {
        self.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::Config("output_dim must be at least 1".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if let Some(i) = self.hidden_layers.iter().position(|l| l.width == 0) {
            return Err(Error::Config(format!("hidden layer {i} has zero width")));
        }
        for l in &self.hidden_layers {
            if let Activation::LeakyRelu { slope } = l.activation {
                if !slope.is_finite() {
                    return Err(Error::Config("LeakyReLU slope must be finite".into()));
                }
            }
        }
        let expected = self.output_dim + 1 + self.exo_dim + usize::from(self.time_as_input);
        if self.input_dim != expected {
            return Err(Error::Config(format!(
                "input_dim {} inconsistent with state {} + set-point 1 + exogenous {}{}",
                self.input_dim,
                self.output_dim,
                self.exo_dim,
                if self.time_as_input { " + time 1" } else { "" }
            )));
        }
        if let Some(norm) = &self.input_normalization {
            if norm.offset.len() != self.input_dim || norm.scale.len() != self.input_dim {
                return Err(Error::Config(format!(
                    "input normalization must have {} entries",
                    self.input_dim
                )));
            }
            if norm
                .scale
                .iter()
                .chain(&norm.offset)
                .any(|v| !v.is_finite())
                || norm.scale.contains(&0.0)
            {
                return Err(Error::Config(
                    "input normalization must be finite with nonzero scales".into(),
                ));
            }
        }
        Ok(())
    }

    /// Widths of every layer boundary, input first, output last.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend(self.hidden_layers.iter().map(|l| l.width));
        dims.push(self.output_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Flat vector of every weight and bias.
///
/// Layout is layer-major; within a layer the `out × in` weight matrix comes
/// first in row-major order, followed by the `out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("parameter {i} is not finite")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Deterministic initialization: weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(spec: &NetSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_dims().windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector(values)
}

/// One evaluation point of the vector field.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub x: &'a [f64],
    pub t: f64,
    pub u: f64,
    pub y: &'a [f64],
}

impl<'a> ModelInput<'a> {
    pub fn new(x: &'a [f64], t: f64, u: f64, y: &'a [f64]) -> Self {
        ModelInput { x, t, u, y }
    }
}

/// Derivatives of `sens_rhs` with respect to `x`, `s` and θ.
#[derive(Clone, Debug)]
pub struct SensJacobians {
    pub d_x: Array2<f64>,
    pub d_s: Array2<f64>,
    pub d_theta: Array2<f64>,
}

#[derive(Clone, Copy, Debug)]
struct LayerView {
    rows: usize,
    cols: usize,
    weights: usize,
    bias: usize,
    activation: Option<Activation>,
}

/// Values recorded by a forward(-tangent) pass for the reverse sweep.
struct Trace {
    /// `post[0]` is the normalized input; `post[l + 1]` the output of layer `l`.
    post: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    tpost: Vec<Vec<f64>>,
    tpre: Vec<Vec<f64>>,
}

impl Trace {
    fn output(&self) -> &[f64] {
        self.pre.last().expect("network has layers")
    }

    fn tangent_output(&self) -> &[f64] {
        self.tpre.last().expect("tangent pass")
    }
}

/// A validated network architecture; evaluation entry points take θ explicitly.
#[derive(Clone, Debug)]
pub struct DiffNet {
    spec: NetSpec,
    layers: Vec<LayerView>,
    param_count: usize,
}

impl DiffNet {
    pub fn new(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut layers = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for (l, w) in dims.windows(2).enumerate() {
            let (cols, rows) = (w[0], w[1]);
            layers.push(LayerView {
                rows,
                cols,
                weights: offset,
                bias: offset + rows * cols,
                activation: spec.hidden_layers.get(l).map(|h| h.activation),
            });
            offset += rows * cols + rows;
        }
        Ok(DiffNet {
            spec,
            layers,
            param_count: offset,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn exo_dim(&self) -> usize {
        self.spec.exo_dim
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        init_params(&self.spec, seed)
    }

    /// Checks θ and the input against the architecture.
    pub fn check(&self, theta: &[f64], input: &ModelInput<'_>) -> Result<()> {
        Error::check_dim("parameters", self.param_count, theta.len())?;
        Error::check_dim("state", self.spec.output_dim, input.x.len())?;
        Error::check_dim("exogenous", self.spec.exo_dim, input.y.len())
    }

    fn check_sens(&self, theta: &[f64], input: &ModelInput<'_>, s: &[f64]) -> Result<()> {
        self.check(theta, input)?;
        Error::check_dim("sensitivity", self.spec.output_dim, s.len())
    }

    fn raw_input(&self, input: &ModelInput<'_>) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.spec.input_dim);
        v.extend_from_slice(input.x);
        v.push(input.u);
        v.extend_from_slice(input.y);
        if self.spec.time_as_input {
            v.push(input.t);
        }
        if let Some(norm) = &self.spec.input_normalization {
            for ((v, o), s) in v.iter_mut().zip(&norm.offset).zip(&norm.scale) {
                *v = (*v - o) / s;
            }
        }
        v
    }

    /// Input direction `[s; 1; 0...]` in normalized coordinates.
    fn sens_direction(&self, s: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.spec.input_dim];
        d[..s.len()].copy_from_slice(s);
        d[self.spec.u_index()] = 1.0;
        if let Some(norm) = &self.spec.input_normalization {
            for (d, sc) in d.iter_mut().zip(&norm.scale) {
                *d /= sc;
            }
        }
        d
    }

    fn forward(&self, theta: &[f64], input: Vec<f64>, dir: Option<Vec<f64>>) -> Trace {
        let nl = self.layers.len();
        let mut post = Vec::with_capacity(nl);
        let mut pre = Vec::with_capacity(nl);
        let tangent = dir.is_some();
        let mut tpost = Vec::with_capacity(if tangent { nl } else { 0 });
        let mut tpre = Vec::with_capacity(if tangent { nl } else { 0 });
        post.push(input);
        if let Some(d) = dir {
            tpost.push(d);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let w = &theta[layer.weights..layer.weights + layer.rows * layer.cols];
            let b = &theta[layer.bias..layer.bias + layer.rows];
            let p = &post[l];
            let mut z = Vec::with_capacity(layer.rows);
            let mut tz = Vec::with_capacity(if tangent { layer.rows } else { 0 });
            for (i, bi) in b.iter().enumerate() {
                let row = &w[i * layer.cols..(i + 1) * layer.cols];
                if tangent {
                    let tp = &tpost[l];
                    let (mut acc, mut tacc) = (0.0, 0.0);
                    for ((wij, pj), tj) in row.iter().zip(p).zip(tp) {
                        acc += wij * pj;
                        tacc += wij * tj;
                    }
                    z.push(bi + acc);
                    tz.push(tacc);
                } else {
                    let mut acc = 0.0;
                    for (wij, pj) in row.iter().zip(p) {
                        acc += wij * pj;
                    }
                    z.push(bi + acc);
                }
            }
            let tz = tangent.then_some(tz);
            if let Some(act) = layer.activation {
                let mut h = Vec::with_capacity(layer.rows);
                let mut th = Vec::with_capacity(if tangent { layer.rows } else { 0 });
                for i in 0..layer.rows {
                    let (v, d1, _) = act.eval(z[i]);
                    h.push(v);
                    if let Some(tz) = &tz {
                        th.push(d1 * tz[i]);
                    }
                }
                post.push(h);
                if tangent {
                    tpost.push(th);
                }
            }
            pre.push(z);
            if let Some(tz) = tz {
                tpre.push(tz);
            }
        }
        Trace {
            post,
            pre,
            tpost,
            tpre,
        }
    }

    /// Reverse sweep seeded with `out_bar` on the primal output and
    /// `tan_bar` on the tangent output. Accumulates into `theta_bar` and
    /// returns the cotangents of the raw input and of the raw direction.
    fn backward(
        &self,
        theta: &[f64],
        trace: &Trace,
        out_bar: &[f64],
        tan_bar: Option<&[f64]>,
        theta_bar: &mut [f64],
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut zbar = out_bar.to_vec();
        let mut tzbar = tan_bar.map(|t| t.to_vec());
        let mut pbar = Vec::new();
        let mut tpbar = None;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let w = &theta[layer.weights..layer.weights + layer.rows * layer.cols];
            let p = &trace.post[l];
            {
                let (wbar, bbar) = theta_bar[layer.weights..layer.bias + layer.rows]
                    .split_at_mut(layer.rows * layer.cols);
                for i in 0..layer.rows {
                    let row = &mut wbar[i * layer.cols..(i + 1) * layer.cols];
                    let zi = zbar[i];
                    for (r, pj) in row.iter_mut().zip(p) {
                        *r += zi * pj;
                    }
                    if let Some(tzbar) = &tzbar {
                        let ti = tzbar[i];
                        for (r, tj) in row.iter_mut().zip(&trace.tpost[l]) {
                            *r += ti * tj;
                        }
                    }
                    bbar[i] += zi;
                }
            }
            pbar = vec![0.0; layer.cols];
            for i in 0..layer.rows {
                let zi = zbar[i];
                for (pb, wij) in pbar
                    .iter_mut()
                    .zip(&w[i * layer.cols..(i + 1) * layer.cols])
                {
                    *pb += zi * wij;
                }
            }
            tpbar = tzbar.as_ref().map(|tzbar| {
                let mut tpb = vec![0.0; layer.cols];
                for i in 0..layer.rows {
                    let ti = tzbar[i];
                    for (tb, wij) in tpb.iter_mut().zip(&w[i * layer.cols..(i + 1) * layer.cols]) {
                        *tb += ti * wij;
                    }
                }
                tpb
            });
            if l > 0 {
                let act = self.layers[l - 1]
                    .activation
                    .expect("hidden layers carry an activation");
                let z = &trace.pre[l - 1];
                let mut nz = Vec::with_capacity(z.len());
                let mut ntz = tpbar.as_ref().map(|_| Vec::with_capacity(z.len()));
                for (i, &zi) in z.iter().enumerate() {
                    let (_, d1, d2) = act.eval(zi);
                    match (&tpbar, &mut ntz) {
                        (Some(tpb), Some(ntz)) => {
                            nz.push(d1 * pbar[i] + d2 * trace.tpre[l - 1][i] * tpb[i]);
                            ntz.push(d1 * tpb[i]);
                        }
                        _ => nz.push(d1 * pbar[i]),
                    }
                }
                zbar = nz;
                tzbar = ntz;
            }
        }
        if let Some(norm) = &self.spec.input_normalization {
            for (v, s) in pbar.iter_mut().zip(&norm.scale) {
                *v /= s;
            }
            if let Some(tpb) = &mut tpbar {
                for (v, s) in tpb.iter_mut().zip(&norm.scale) {
                    *v /= s;
                }
            }
        }
        (pbar, tpbar)
    }

    /// `f_θ(x, t, u, y)`.
    pub fn eval_f(&self, theta: &ParamVector, input: &ModelInput<'_>) -> Result<Array1<f64>> {
        self.check(theta, input)?;
        let trace = self.forward(theta, self.raw_input(input), None);
        Ok(Array1::from(trace.output().to_vec()))
    }

    /// Unchecked `f_θ` into `out`; for integrator callbacks.
    pub fn eval_into(&self, theta: &[f64], input: &ModelInput<'_>, out: &mut [f64]) {
        let trace = self.forward(theta, self.raw_input(input), None);
        out.copy_from_slice(trace.output());
    }

    /// Unchecked `[f_θ; J_u + J_x·s]` into `f_out` and `s_out`.
    pub fn eval_with_sens_into(
        &self,
        theta: &[f64],
        input: &ModelInput<'_>,
        s: &[f64],
        f_out: &mut [f64],
        s_out: &mut [f64],
    ) {
        let trace = self.forward(theta, self.raw_input(input), Some(self.sens_direction(s)));
        f_out.copy_from_slice(trace.output());
        s_out.copy_from_slice(trace.tangent_output());
    }

    /// `∂f_θ/∂x`, n × n.
    pub fn jac_x(&self, theta: &ParamVector, input: &ModelInput<'_>) -> Result<Array2<f64>> {
        self.check(theta, input)?;
        let n = self.state_dim();
        let trace = self.forward(theta, self.raw_input(input), None);
        let mut jac = Array2::zeros((n, n));
        let mut scratch = vec![0.0; self.param_count];
        for i in 0..n {
            let mut seed = vec![0.0; n];
            seed[i] = 1.0;
            let (inbar, _) = self.backward(theta, &trace, &seed, None, &mut scratch);
            for j in 0..n {
                jac[[i, j]] = inbar[j];
            }
        }
        Ok(jac)
    }

    /// `∂f_θ/∂u`, length n.
    pub fn jac_u(&self, theta: &ParamVector, input: &ModelInput<'_>) -> Result<Array1<f64>> {
        self.check(theta, input)?;
        let dir = self.sens_direction(&vec![0.0; self.state_dim()]);
        let trace = self.forward(theta, self.raw_input(input), Some(dir));
        Ok(Array1::from(trace.tangent_output().to_vec()))
    }

    /// `∂f_θ/∂θ`, n × p.
    pub fn jac_theta(&self, theta: &ParamVector, input: &ModelInput<'_>) -> Result<Array2<f64>> {
        self.check(theta, input)?;
        let n = self.state_dim();
        let trace = self.forward(theta, self.raw_input(input), None);
        let mut jac = Array2::zeros((n, self.param_count));
        for i in 0..n {
            let mut seed = vec![0.0; n];
            seed[i] = 1.0;
            let mut row = vec![0.0; self.param_count];
            self.backward(theta, &trace, &seed, None, &mut row);
            jac.row_mut(i).assign(&Array1::from(row));
        }
        Ok(jac)
    }

    /// `∂f_θ/∂u + ∂f_θ/∂x · s`: the right-hand side of the sensitivity ODE.
    pub fn sens_rhs(
        &self,
        theta: &ParamVector,
        input: &ModelInput<'_>,
        s: &[f64],
    ) -> Result<Array1<f64>> {
        self.check_sens(theta, input, s)?;
        let trace = self.forward(theta, self.raw_input(input), Some(self.sens_direction(s)));
        Ok(Array1::from(trace.tangent_output().to_vec()))
    }

    /// Jacobians of [`DiffNet::sens_rhs`] with respect to `x`, `s` and θ
    /// (θ-derivative taken with `s` held fixed).
    pub fn sens_rhs_jacobians(
        &self,
        theta: &ParamVector,
        input: &ModelInput<'_>,
        s: &[f64],
    ) -> Result<SensJacobians> {
        self.check_sens(theta, input, s)?;
        let n = self.state_dim();
        let trace = self.forward(theta, self.raw_input(input), Some(self.sens_direction(s)));
        let zero = vec![0.0; n];
        let mut d_x = Array2::zeros((n, n));
        let mut d_s = Array2::zeros((n, n));
        let mut d_theta = Array2::zeros((n, self.param_count));
        for i in 0..n {
            let mut seed = vec![0.0; n];
            seed[i] = 1.0;
            let mut row = vec![0.0; self.param_count];
            let (inbar, dirbar) = self.backward(theta, &trace, &zero, Some(&seed), &mut row);
            let dirbar = dirbar.expect("tangent seeded");
            for j in 0..n {
                d_x[[i, j]] = inbar[j];
                d_s[[i, j]] = dirbar[j];
            }
            d_theta.row_mut(i).assign(&Array1::from(row));
        }
        Ok(SensJacobians { d_x, d_s, d_theta })
    }

    /// Unchecked `aᵀ ∂f/∂x` into `x_bar` and `aᵀ ∂f/∂θ` into `theta_bar`
    /// (both overwritten).
    pub fn vjp_into(
        &self,
        theta: &[f64],
        input: &ModelInput<'_>,
        a: &[f64],
        f_out: &mut [f64],
        x_bar: &mut [f64],
        theta_bar: &mut [f64],
    ) {
        let trace = self.forward(theta, self.raw_input(input), None);
        f_out.copy_from_slice(trace.output());
        theta_bar.fill(0.0);
        let (inbar, _) = self.backward(theta, &trace, a, None, theta_bar);
        x_bar.copy_from_slice(&inbar[..x_bar.len()]);
    }

    /// Unchecked augmented vector-Jacobian product. With `g = [f; J_u + J_x s]`
    /// and cotangent `[a_x; a_s]`, writes `a_xᵀ J_x + a_sᵀ ∂(J_x s + J_u)/∂x`
    /// into `x_bar`, `a_sᵀ J_x` into `s_bar` and the matching θ-cotangent into
    /// `theta_bar`. The forward values of `g` go to `f_out`/`sens_out`.
    #[allow(clippy::too_many_arguments)]
    pub fn aug_vjp_into(
        &self,
        theta: &[f64],
        input: &ModelInput<'_>,
        s: &[f64],
        a_x: &[f64],
        a_s: &[f64],
        f_out: &mut [f64],
        sens_out: &mut [f64],
        x_bar: &mut [f64],
        s_bar: &mut [f64],
        theta_bar: &mut [f64],
    ) {
        let trace = self.forward(theta, self.raw_input(input), Some(self.sens_direction(s)));
        f_out.copy_from_slice(trace.output());
        sens_out.copy_from_slice(trace.tangent_output());
        theta_bar.fill(0.0);
        let (inbar, dirbar) = self.backward(theta, &trace, a_x, Some(a_s), theta_bar);
        let n = x_bar.len();
        x_bar.copy_from_slice(&inbar[..n]);
        s_bar.copy_from_slice(&dirbar.expect("tangent seeded")[..n]);
    }
}
