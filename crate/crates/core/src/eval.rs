//! NMSE metrics, set-point sweeps and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffnet::{DiffNet, ParamVector};
use crate::error::{Error, Result};
use crate::fmt17;
use crate::odeint::SolverConfig;
use crate::systems::Scenario;
use crate::trase::trase_forward;

/// Written into every report.
pub const NMSE_DEFINITION: &str =
    "NMSE per channel = sum over time of (pred - truth)^2 divided by \
sum over time of truth^2 (null predictor scores 1). Other normalizations (variance, peak) give \
different absolute values; compare orders of magnitude only.";

fn check_shapes(pred: &ArrayView2<'_, f64>, truth: &ArrayView2<'_, f64>) -> Result<()> {
    Error::check_dim("trajectory rows", truth.nrows(), pred.nrows())?;
    Error::check_dim("trajectory channels", truth.ncols(), pred.ncols())
}

/// Per-channel `Σ (pred − truth)² / Σ truth²`.
pub fn nmse(pred: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    nmse_masked(pred, truth, None)
}

/// [`nmse`] restricted to rows with `mask[i]` set.
pub fn nmse_masked(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    check_shapes(&pred, &truth)?;
    if let Some(m) = mask {
        Error::check_dim("row mask", truth.nrows(), m.len())?;
    }
    (0..truth.ncols())
        .map(|c| {
            let mut err = 0.0;
            let mut energy = 0.0;
            for i in 0..truth.nrows() {
                if mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                err += (pred[[i, c]] - truth[[i, c]]).powi(2);
                energy += truth[[i, c]].powi(2);
            }
            if energy == 0.0 {
                return Err(Error::DegenerateNormalization {
                    channel: c,
                    what: "energy",
                });
            }
            Ok(err / energy)
        })
        .collect()
}

/// `(truth − pred) / max_t |truth|` per channel.
pub fn normalized_error(
    pred: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    check_shapes(&pred, &truth)?;
    let mut out = &truth - &pred;
    for (c, mut col) in out.columns_mut().into_iter().enumerate() {
        let peak = truth.column(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Err(Error::DegenerateNormalization {
                channel: c,
                what: "peak",
            });
        }
        col.mapv_inplace(|v| v / peak);
    }
    Ok(out)
}

/// A trained model to evaluate.
#[derive(Clone, Copy)]
pub struct ModelRef<'a> {
    pub id: &'a str,
    pub net: &'a DiffNet,
    pub theta: &'a ParamVector,
}

/// One model's results across the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub id: String,
    /// `per_u[k][c]`: NMSE of channel `c` at `u_values[k]`; `+∞` on failure.
    pub per_u: Vec<NmseRow>,
    #[serde(
        serialize_with = "fmt17::serialize_vec_lossless",
        deserialize_with = "fmt17::deserialize_vec_lossless"
    )]
    pub worst_case: Vec<f64>,
    /// Failure message per u, `None` where evaluation succeeded.
    pub failures: Vec<Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NmseRow(
    #[serde(
        serialize_with = "fmt17::serialize_vec_lossless",
        deserialize_with = "fmt17::deserialize_vec_lossless"
    )]
    pub Vec<f64>,
);

/// Normalized-error series of one model at one set-point.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTrace {
    pub model: String,
    pub u: f64,
    pub times: Vec<f64>,
    /// Columns follow [`MetricsReport::channels`].
    pub truth: Array2<f64>,
    pub predicted: Array2<f64>,
    pub normalized_error: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmse_definition: String,
    /// State channels followed by sensitivity channels.
    pub channels: Vec<String>,
    pub state_channels: usize,
    #[serde(
        serialize_with = "fmt17::serialize_vec_lossless",
        deserialize_with = "fmt17::deserialize_vec_lossless"
    )]
    pub u_values: Vec<f64>,
    pub models: Vec<ModelMetrics>,
    #[serde(skip)]
    pub traces: Vec<ErrorTrace>,
}

impl MetricsReport {
    pub fn model(&self, id: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.id == id)
    }

    /// Worst-case NMSE of the state channels only.
    pub fn worst_state(&self, id: &str) -> Option<&[f64]> {
        self.model(id).map(|m| &m.worst_case[..self.state_channels])
    }

    /// Worst-case NMSE of the sensitivity channels only.
    pub fn worst_sensitivity(&self, id: &str) -> Option<&[f64]> {
        self.model(id).map(|m| &m.worst_case[self.state_channels..])
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Keep normalized-error traces at these set-points.
    pub trace_u: Vec<f64>,
}

struct Evaluated {
    nmse: Vec<f64>,
    trace: Option<ErrorTrace>,
}

fn truth_matrix(sc: &Scenario) -> (Array2<f64>, Option<Vec<bool>>) {
    match &sc.sensitivities {
        Some(sens) => {
            let n = sc.state_dim();
            let mut m = Array2::zeros((sc.grid.len(), 2 * n));
            m.slice_mut(s![.., ..n]).assign(&sc.states);
            m.slice_mut(s![.., n..]).assign(&sens.values);
            (m, Some(sens.observed.clone()))
        }
        None => (sc.states.clone(), None),
    }
}

fn evaluate(
    model: &ModelRef<'_>,
    sc: &Scenario,
    cfg: &SolverConfig,
    n_channels: usize,
    keep_trace: bool,
) -> Result<Evaluated> {
    let n = sc.state_dim();
    Error::check_dim("state", model.net.state_dim(), n)?;
    let signal = sc.exogenous_signal();
    let pred = trase_forward(
        model.net,
        model.theta,
        &sc.x0(),
        sc.u,
        signal.as_ref(),
        &sc.grid,
        cfg,
    )?;
    let (truth, observed) = truth_matrix(sc);
    let mut out = nmse(pred.slice(s![.., ..n]), truth.slice(s![.., ..n]))?;
    if n_channels > n {
        match &observed {
            Some(mask) if mask.iter().any(|&o| o) => out.extend(nmse_masked(
                pred.slice(s![.., n..]),
                truth.slice(s![.., n..]),
                Some(mask),
            )?),
            _ => out.extend(std::iter::repeat_n(f64::NAN, n_channels - n)),
        }
    }
    let trace = if keep_trace {
        let cols = truth.ncols();
        let p = pred.slice(s![.., ..cols]);
        Some(ErrorTrace {
            model: model.id.to_string(),
            u: sc.u,
            times: sc.grid.times().to_vec(),
            truth: truth.clone(),
            predicted: p.to_owned(),
            normalized_error: normalized_error(p, truth.view())?,
        })
    } else {
        None
    };
    Ok(Evaluated { nmse: out, trace })
}

/// Evaluates every model at every set-point produced by `factory`.
///
/// Each model is integrated with its sensitivity system so both state and
/// sensitivity channels are scored. Generation or integration failures at a
/// set-point become `+∞` entries for that set-point instead of aborting.
pub fn sweep<F>(
    models: &[ModelRef<'_>],
    u_grid: &[f64],
    factory: F,
    cfg: &SolverConfig,
    opts: &SweepOptions,
) -> Result<MetricsReport>
where
    F: Fn(f64) -> Result<Scenario> + Sync,
{
    cfg.validate()?;
    let mut ids: Vec<&str> = models.iter().map(|m| m.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != models.len() {
        return Err(Error::Config("model ids in a sweep must be unique".into()));
    }
    let scenarios: Vec<Result<Scenario>> = u_grid.par_iter().map(|&u| factory(u)).collect();

    let first = scenarios.iter().find_map(|r| r.as_ref().ok());
    let (channels, state_channels) = match first {
        Some(sc) => {
            let mut ch = sc.labels.states.clone();
            if sc.sensitivities.is_some() {
                ch.extend(sc.labels.sensitivities.iter().cloned());
            }
            (ch, sc.state_dim())
        }
        None => {
            let n = models.first().map_or(0, |m| m.net.state_dim());
            ((0..n).map(|i| format!("x{i}")).collect(), n)
        }
    };
    let n_channels = channels.len();

    let mut report = MetricsReport {
        nmse_definition: NMSE_DEFINITION.to_string(),
        channels,
        state_channels,
        u_values: u_grid.to_vec(),
        models: Vec::with_capacity(models.len()),
        traces: Vec::new(),
    };
    for model in models {
        let results: Vec<Result<Evaluated>> = scenarios
            .par_iter()
            .zip(u_grid)
            .map(|(sc, &u)| {
                let sc = sc.as_ref().map_err(|e| Error::Data(e.to_string()))?;
                let keep = opts.trace_u.contains(&u);
                evaluate(model, sc, cfg, n_channels, keep)
            })
            .collect();
        let mut per_u = Vec::with_capacity(u_grid.len());
        let mut failures = Vec::with_capacity(u_grid.len());
        for (r, &u) in results.into_iter().zip(u_grid) {
            match r {
                Ok(ev) if ev.nmse.len() == n_channels => {
                    per_u.push(NmseRow(ev.nmse));
                    failures.push(None);
                    report.traces.extend(ev.trace);
                }
                Ok(_) => {
                    per_u.push(NmseRow(vec![f64::INFINITY; n_channels]));
                    failures.push(Some(format!("channel layout differs at u = {u}")));
                }
                Err(e) => {
                    log::warn!("model {} at u = {u}: {e}", model.id);
                    per_u.push(NmseRow(vec![f64::INFINITY; n_channels]));
                    failures.push(Some(e.to_string()));
                }
            }
        }
        let worst_case = (0..n_channels)
            .map(|c| {
                per_u
                    .iter()
                    .map(|row| row.0[c])
                    .filter(|v| !v.is_nan())
                    .fold(f64::NAN, f64::max)
            })
            .collect();
        report.models.push(ModelMetrics {
            id: model.id.to_string(),
            per_u,
            worst_case,
            failures,
        });
    }
    Ok(report)
}

/// Evaluates models on already loaded scenarios (e.g. held-out CSV files).
pub fn compare(
    models: &[ModelRef<'_>],
    scenarios: &[Scenario],
    cfg: &SolverConfig,
    opts: &SweepOptions,
) -> Result<MetricsReport> {
    let u_grid: Vec<f64> = scenarios.iter().map(|s| s.u).collect();
    sweep(
        models,
        &u_grid,
        |u| {
            scenarios
                .iter()
                .find(|s| s.u == u)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no scenario at u = {u}")))
        },
        cfg,
        opts,
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        fmt17::format(v)
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Writes `report.json`, `nmse_vs_u.csv`, `state_traces.csv`,
/// `sensitivity_traces.csv` (when traces were kept) and, if `svg` is set,
/// one `nmse_<channel>.svg` chart per channel. Returns the written paths.
pub fn write_report(report: &MetricsReport, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::json(&json_path, e))?;
    write_file(&json_path, &json)?;
    written.push(json_path);

    let mut csv = String::from("# ");
    csv.push_str(NMSE_DEFINITION);
    csv.push_str("\nmodel,u");
    for c in &report.channels {
        write!(csv, ",{c}").unwrap();
    }
    csv.push('\n');
    for m in &report.models {
        for (row, &u) in m.per_u.iter().zip(&report.u_values) {
            write!(csv, "{},{}", m.id, num(u)).unwrap();
            for &v in &row.0 {
                write!(csv, ",{}", num(v)).unwrap();
            }
            csv.push('\n');
        }
    }
    let csv_path = dir.join("nmse_vs_u.csv");
    write_file(&csv_path, &csv)?;
    written.push(csv_path);

    if !report.traces.is_empty() {
        let n = report.state_channels;
        let groups = [
            ("state_traces.csv", 0..n),
            ("sensitivity_traces.csv", n..report.channels.len()),
        ];
        for (name, range) in groups {
            if range.is_empty() {
                continue;
            }
            let mut out = String::from("model,u,t,channel,truth,predicted,normalized_error\n");
            for tr in &report.traces {
                for c in range.clone().filter(|&c| c < tr.truth.ncols()) {
                    for (i, &t) in tr.times.iter().enumerate() {
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{}",
                            tr.model,
                            num(tr.u),
                            num(t),
                            report.channels[c],
                            num(tr.truth[[i, c]]),
                            num(tr.predicted[[i, c]]),
                            num(tr.normalized_error[[i, c]])
                        )
                        .unwrap();
                    }
                }
            }
            let path = dir.join(name);
            write_file(&path, &out)?;
            written.push(path);
        }
    }

    if svg && !report.u_values.is_empty() {
        for (c, name) in report.channels.iter().enumerate() {
            let series: Vec<(String, Vec<f64>)> = report
                .models
                .iter()
                .map(|m| (m.id.clone(), m.per_u.iter().map(|r| r.0[c]).collect()))
                .collect();
            let path = dir.join(format!("nmse_{name}.svg"));
            write_file(
                &path,
                &svg_chart(&format!("NMSE of {name}"), &report.u_values, &series),
            )?;
            written.push(path);
        }
    }
    Ok(written)
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Minimal log-scale line chart. Non-finite and non-positive points are
/// skipped.
pub fn svg_chart(title: &str, xs: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let finite = |v: &f64| v.is_finite() && *v > 0.0;
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied().filter(finite))
        .collect();
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (ly0, mut ly1) = if ys.is_empty() {
        (-1.0, 1.0)
    } else {
        (ymin.log10().floor(), ymax.log10().ceil())
    };
    if ly1 <= ly0 {
        ly1 = ly0 + 1.0;
    }
    let x0 = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut x1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y.log10() - ly0) / (ly1 - ly0) * (h - 2.0 * pad);

    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n\
         <line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>\n",
        w / 2.0,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    for d in (ly0 as i32)..=(ly1 as i32) {
        let y = py(10f64.powi(d));
        writeln!(
            out,
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">1e{d}</text>",
            pad - 4.0
        )
        .unwrap();
    }
    writeln!(
        out,
        "<text x=\"{pad}\" y=\"{}\">u = {x0}</text>",
        h - pad + 16.0
    )
    .unwrap();
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">u = {x1}</text>",
        w - pad,
        h - pad + 16.0
    )
    .unwrap();
    for (k, (label, vals)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(vals)
            .filter(|(_, v)| finite(v))
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>",
            w - pad - 80.0,
            pad + 14.0 * k as f64
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
