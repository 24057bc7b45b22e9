//! Correspondence classifiers and their on-disk format.
//!
//! Model files are UTF-8 JSON objects of the form
//! `{"format_version": 1, "kind": "linear" | "forest", ...}`. Floats are
//! written with shortest round-trip formatting and parsed exactly, so a
//! reloaded model predicts bit-identically.

mod forest;
mod linear;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{
    predict_forest, train_forest, train_forest_with_oob, DecisionTree, ForestConfig, ForestModel,
    MaxFeatures, Node,
};
pub use linear::{
    logistic_gradient, logistic_loss, predict_linear, sigmoid, train_linear, LinearConfig,
    LinearModel,
};

pub const MODEL_FORMAT_VERSION: u64 = 1;

/// A feature vector with its correspondence label (`true` = same animal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: bool,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: bool) -> Self {
        LabeledSample { features, label }
    }
}

/// Checks for a consistent feature length and both classes; returns the length.
fn check_samples(samples: &[LabeledSample]) -> Result<usize> {
    let d = samples
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| Error::Training("no training samples".into()))?;
    if d == 0 {
        return Err(Error::Training("samples have no features".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.features.len() != d) {
        return Err(Error::invalid(format!(
            "feature length {} differs from {d}",
            s.features.len()
        )));
    }
    if samples.iter().any(|s| s.features.iter().any(|x| !x.is_finite())) {
        return Err(Error::invalid("non-finite feature value"));
    }
    let positives = samples.iter().filter(|s| s.label).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::Training(format!(
            "need both classes, got {positives} positive of {}",
            samples.len()
        )));
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Linear(LinearModel),
    Forest(ForestModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Linear(_) => "linear",
            Model::Forest(_) => "forest",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    #[serde(flatten)]
    model: Model,
}

pub fn model_to_json(model: &Model) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    serde_json::to_string(&file).expect("models serialize")
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut text = model_to_json(model);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text, path)
}

pub(crate) fn model_from_json(text: &str, path: &Path) -> Result<Model> {
    let malformed = |reason: String| Error::ModelFormat {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("format_version")
        .ok_or_else(|| malformed("missing format_version".into()))?
        .as_u64()
        .ok_or_else(|| malformed("format_version is not an unsigned integer".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelVersion {
            path: path.to_path_buf(),
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    match &file.model {
        Model::Linear(m) => m.validate().map_err(|e| malformed(e.to_string()))?,
        Model::Forest(m) => m.validate().map_err(|e| malformed(e.to_string()))?,
    }
    Ok(file.model)
}

pub fn load_linear(path: &Path) -> Result<LinearModel> {
    match load_model(path)? {
        Model::Linear(m) => Ok(m),
        other => Err(Error::ModelFormat {
            path: path.to_path_buf(),
            reason: format!("expected a linear model, found {}", other.kind()),
        }),
    }
}

pub fn load_forest(path: &Path) -> Result<ForestModel> {
    match load_model(path)? {
        Model::Forest(m) => Ok(m),
        other => Err(Error::ModelFormat {
            path: path.to_path_buf(),
            reason: format!("expected a forest model, found {}", other.kind()),
        }),
    }
}
