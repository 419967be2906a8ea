//! Versioned JSON model documents. Field-by-field description in
//! `docs/model-format.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Calibrator, LatticeUnit, ModelConfig, QuantileModel};
use crate::error::{Error, Result};
use crate::lattice::PiecewiseLinearFn;

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "quantlat-model";

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    config: ModelConfig,
    calibrators: Vec<Calibrator>,
    tau_calibrator: PiecewiseLinearFn,
    lattices: Vec<LatticeUnit>,
    weights: Vec<f64>,
    bias: f64,
}

impl QuantileModel {
    pub fn to_json(&self, metadata: &BTreeMap<String, String>) -> Result<String> {
        let doc = ModelDocument {
            format: FORMAT_NAME.to_string(),
            version: MODEL_FORMAT_VERSION,
            metadata: metadata.clone(),
            config: self.config.clone(),
            calibrators: self.calibrators.clone(),
            tau_calibrator: self.tau_calibrator.clone(),
            lattices: self.lattices.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
        };
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a model document, returning the model and its metadata.
    pub fn from_json(text: &str) -> Result<(Self, BTreeMap<String, String>)> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if doc.format != FORMAT_NAME {
            return Err(Error::Format(format!("not a model document (format '{}')", doc.format)));
        }
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                doc.version
            )));
        }
        let model = QuantileModel::from_parts(
            doc.config,
            doc.calibrators,
            doc.tau_calibrator,
            doc.lattices,
            doc.weights,
            doc.bias,
        )?;
        Ok((model, doc.metadata))
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: &BTreeMap<String, String>) -> Result<()> {
        std::fs::write(path, self.to_json(metadata)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        QuantileModel::from_json(&std::fs::read_to_string(path)?)
    }
}
