//! Scenario CSV files with a JSON sidecar.
//!
//! The CSV is strictly tabular: a header `t,<states...>[,<sensitivities...>][,<exogenous...>]`
//! and one row per grid point. The sidecar (`<stem>.json`) carries the
//! set-point and the channel roles. An empty sensitivity cell marks the row
//! as unobserved.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ChannelLabels, Scenario, Sensitivities};
use crate::error::{Error, Result};
use crate::fmt17;
use crate::odeint::TimeGrid;

/// Sidecar describing how to read a scenario CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLayout {
    pub u: f64,
    pub state_columns: Vec<String>,
    #[serde(default)]
    pub exo_columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_columns: Option<Vec<String>>,
}

impl ScenarioLayout {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `<path>` and its sidecar.
pub fn export_csv(scenario: &Scenario, path: &Path) -> Result<()> {
    scenario.validate()?;
    let labels = &scenario.labels;
    let n = scenario.state_dim();
    let sens_names: Option<Vec<String>> = scenario.sensitivities.as_ref().map(|_| {
        if labels.sensitivities.len() == n {
            labels.sensitivities.clone()
        } else {
            labels.states.iter().map(|s| format!("s_{s}")).collect()
        }
    });
    let layout = ScenarioLayout {
        u: scenario.u,
        state_columns: labels.states.clone(),
        exo_columns: labels.exogenous.clone(),
        sensitivity_columns: sens_names.clone(),
    };
    Error::check_dim("state labels", n, layout.state_columns.len())?;
    Error::check_dim(
        "exogenous labels",
        scenario.exo_dim(),
        layout.exo_columns.len(),
    )?;

    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend(layout.state_columns.iter().cloned());
    if let Some(s) = &sens_names {
        header.extend(s.iter().cloned());
    }
    header.extend(layout.exo_columns.iter().cloned());
    wtr.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, &t) in scenario.grid.times().iter().enumerate() {
        let mut rec = vec![fmt17::format(t)];
        rec.extend(scenario.states.row(i).iter().map(|&v| fmt17::format(v)));
        if let Some(s) = &scenario.sensitivities {
            if s.observed[i] {
                rec.extend(s.values.row(i).iter().map(|&v| fmt17::format(v)));
            } else {
                rec.extend(std::iter::repeat_n(String::new(), n));
            }
        }
        if let Some(e) = &scenario.exogenous {
            rec.extend(e.row(i).iter().map(|&v| fmt17::format(v)));
        }
        wtr.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;

    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&layout).map_err(|e| Error::json(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn column_index(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("missing column `{name}`"),
        })
}

/// Parses a scenario CSV according to `layout`.
pub fn ingest_csv(path: &Path, layout: &ScenarioLayout) -> Result<Scenario> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.get(0).map(str::trim) != Some("t") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "first column must be `t`".into(),
        });
    }
    let idx = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| column_index(&header, n, path))
            .collect()
    };
    let state_idx = idx(&layout.state_columns)?;
    let exo_idx = idx(&layout.exo_columns)?;
    let sens_idx = layout.sensitivity_columns.as_deref().map(idx).transpose()?;
    if let Some(s) = &sens_idx {
        Error::check_dim("sensitivity columns", state_idx.len(), s.len())?;
    }

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut exo = Vec::new();
    let mut sens = Vec::new();
    let mut observed = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<Option<f64>> {
            let raw = rec.get(i).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("missing field {}", i + 1),
            })?;
            let raw = raw.trim();
            if raw.is_empty() {
                return Ok(None);
            }
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}:{line}: non-finite value `{raw}`",
                    path.display()
                )));
            }
            Ok(Some(v))
        };
        let required = |i: usize| -> Result<f64> {
            field(i)?.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("empty field in column `{}`", &header[i]),
            })
        };
        let t = required(0)?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Data(format!(
                    "{}:{line}: time not strictly increasing at t = {t} (previous {prev})",
                    path.display()
                )));
            }
        }
        times.push(t);
        for &i in &state_idx {
            states.push(required(i)?);
        }
        for &i in &exo_idx {
            exo.push(required(i)?);
        }
        if let Some(si) = &sens_idx {
            let vals: Vec<Option<f64>> = si.iter().map(|&i| field(i)).collect::<Result<_>>()?;
            if vals.iter().all(Option::is_some) {
                sens.extend(vals.into_iter().flatten());
                observed.push(true);
            } else if vals.iter().all(Option::is_none) {
                sens.extend(std::iter::repeat_n(0.0, si.len()));
                observed.push(false);
            } else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "sensitivity row partially filled".into(),
                });
            }
        }
    }
    if times.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let rows = times.len();
    let n = state_idx.len();
    let m = exo_idx.len();
    let shape_err = |e: ndarray::ShapeError| Error::Data(e.to_string());
    let scenario = Scenario {
        u: layout.u,
        grid: TimeGrid::new(times)?,
        states: Array2::from_shape_vec((rows, n), states).map_err(shape_err)?,
        sensitivities: match sens_idx {
            Some(_) => Some(Sensitivities {
                values: Array2::from_shape_vec((rows, n), sens).map_err(shape_err)?,
                observed,
            }),
            None => None,
        },
        exogenous: if m > 0 {
            Some(Array2::from_shape_vec((rows, m), exo).map_err(shape_err)?)
        } else {
            None
        },
        labels: ChannelLabels {
            states: layout.state_columns.clone(),
            sensitivities: layout.sensitivity_columns.clone().unwrap_or_default(),
            exogenous: layout.exo_columns.clone(),
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Reads `<path>` using the sidecar next to it.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let layout = ScenarioLayout::load(&sidecar_path(path))?;
    ingest_csv(path, &layout)
}
