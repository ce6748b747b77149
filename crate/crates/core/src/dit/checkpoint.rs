//! Model checkpoint file.
//!
//! A checkpoint is a single UTF-8 JSON object:
//!
//! ```text
//! {
//!   "format": "featcache-dit",
//!   "version": 1,
//!   "config": { "image_size": 8, "channels": 1, ... },
//!   "params": [ { "name": "patch.w", "shape": [4, 64], "data": [ ... ] }, ... ]
//! }
//! ```
//!
//! `params` appears in the model's construction order and `data` is
//! row-major. Floats are written in shortest round-trip form, so
//! save → load reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiTConfig, DiTModel};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "featcache-dit";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: DiTConfig,
    params: Vec<ParamRecord>,
}

pub fn to_json(model: &DiTModel) -> Result<String> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        params: model
            .param_names()
            .iter()
            .zip(model.params())
            .map(|(name, t)| ParamRecord {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(text: &str) -> Result<DiTModel> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != FORMAT {
        return Err(Error::Format(format!("not a model checkpoint (format {:?})", file.format)));
    }
    if file.version != VERSION {
        return Err(Error::Version {
            found: file.version,
            expected: VERSION,
        });
    }
    let mut model = DiTModel::new(file.config)?;
    if file.params.len() != model.param_names().len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            file.params.len(),
            model.param_names().len()
        )));
    }
    let mut values = Vec::with_capacity(file.params.len());
    for (rec, expected) in file.params.into_iter().zip(model.param_names()) {
        if &rec.name != expected {
            return Err(Error::Format(format!("parameter {} found where {} expected", rec.name, expected)));
        }
        values.push(Tensor::new(rec.shape, rec.data)?);
    }
    model.load_params(values)?;
    Ok(model)
}

pub fn save(model: &DiTModel, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), to_json(model)?.as_bytes())
}

pub fn load(path: impl AsRef<Path>) -> Result<DiTModel> {
    from_json(&std::fs::read_to_string(path)?)
}
