use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowModel, ModelConfig};
use crate::data::Pipeline;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    pipeline: Pipeline,
    params: Vec<StoredParam>,
}

impl FlowModel {
    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            pipeline: self.pipeline.clone(),
            params: self
                .store
                .entries()
                .iter()
                .map(|e| StoredParam {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    data: e.value.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ckpt).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            Some(v) => {
                return Err(Error::Version(format!(
                    "checkpoint version {v}, this build reads {CHECKPOINT_VERSION}"
                )))
            }
            None => return Err(Error::Version("checkpoint has no version field".into())),
        }
        let mut unknown = Vec::new();
        let ckpt: Checkpoint = serde_ignored::deserialize(raw, |path| unknown.push(path.to_string()))
            .map_err(|e| Error::Version(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(Error::Version(format!("unknown checkpoint keys: {}", unknown.join(", "))));
        }
        let mut model = FlowModel::new(ckpt.config, 0)?;
        if ckpt.params.len() != model.store.len() {
            return Err(Error::Version(format!(
                "checkpoint holds {} parameter arrays, the architecture has {}",
                ckpt.params.len(),
                model.store.len()
            )));
        }
        for sp in ckpt.params {
            let id = model
                .store
                .find(&sp.name)
                .ok_or_else(|| Error::Version(format!("unknown parameter {}", sp.name)))?;
            if model.store.get(id).shape() != sp.shape.as_slice() {
                return Err(Error::Version(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    sp.name,
                    sp.shape,
                    model.store.get(id).shape()
                )));
            }
            *model.store.get_mut(id) = Tensor::new(sp.shape, sp.data).map_err(|e| Error::Version(e.to_string()))?;
        }
        model.pipeline = ckpt.pipeline;
        Ok(model)
    }
}

pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<()> {
    fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FlowModel::from_json(&text)
}
