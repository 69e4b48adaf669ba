use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiffNet, NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::training::AdamState;

/// Portable model file: the architecture plus θ in the documented flat layout.
///
/// Values are written with 17 significant digits so a save/load cycle is
/// bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetSpec,
    #[serde(serialize_with = "crate::fmt17::serialize_vec")]
    pub param_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
}

impl Checkpoint {
    pub fn new(spec: NetSpec, params: &ParamVector) -> Self {
        Checkpoint {
            spec,
            param_values: params.as_slice().to_vec(),
            optimizer: None,
            epoch: None,
        }
    }

    /// Validates the architecture and the parameter count, returning the
    /// network and its parameters.
    pub fn into_model(self) -> Result<(DiffNet, ParamVector)> {
        let net = DiffNet::new(self.spec)?;
        Error::check_dim("parameters", net.param_count(), self.param_values.len())?;
        let params = ParamVector::new(self.param_values)?;
        Ok((net, params))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("<checkpoint>", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}
