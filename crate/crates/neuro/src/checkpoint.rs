//! JSON checkpoints. Parameter values are stored as little-endian `f64`
//! bytes in standard base64, which the document states in its `encoding`
//! field; the `model` field carries the caller's layer description.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::{NeuroError, ParamStore, Tensor};

pub const CHECKPOINT_FORMAT: &str = "pqos-neuro-checkpoint/1";
pub const CHECKPOINT_ENCODING: &str = "f64-le-base64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub encoding: String,
    pub model: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>, NeuroError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| NeuroError::Checkpoint(format!("bad base64: {e}")))?;
    if bytes.len() != 8 * expected {
        return Err(NeuroError::Checkpoint(format!(
            "expected {expected} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn from_store<M: Serialize>(store: &ParamStore, model: &M) -> Result<Self, NeuroError> {
        let model =
            serde_json::to_value(model).map_err(|e| NeuroError::Checkpoint(e.to_string()))?;
        let params = store
            .ids()
            .map(|id| {
                let t = store.get(id);
                ParamEntry {
                    name: store.name(id).to_string(),
                    shape: t.shape(),
                    data: encode(t.data()),
                }
            })
            .collect();
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            encoding: CHECKPOINT_ENCODING.into(),
            model,
            params,
        })
    }

    pub fn to_store(&self) -> Result<ParamStore, NeuroError> {
        if self.format != CHECKPOINT_FORMAT || self.encoding != CHECKPOINT_ENCODING {
            return Err(NeuroError::Checkpoint(format!(
                "unsupported format `{}` / encoding `{}`",
                self.format, self.encoding
            )));
        }
        let mut store = ParamStore::new();
        for p in &self.params {
            if store.find(&p.name).is_some() {
                return Err(NeuroError::Checkpoint(format!(
                    "duplicate parameter `{}`",
                    p.name
                )));
            }
            let [r, c] = p.shape;
            store.add(p.name.clone(), Tensor::new(r, c, decode(&p.data, r * c)?));
        }
        Ok(store)
    }

    pub fn model<M: for<'de> Deserialize<'de>>(&self) -> Result<M, NeuroError> {
        serde_json::from_value(self.model.clone())
            .map_err(|e| NeuroError::Checkpoint(e.to_string()))
    }
}

/// Pretty-printed checkpoint document.
pub fn save_checkpoint<M: Serialize>(store: &ParamStore, model: &M) -> Result<String, NeuroError> {
    let ck = Checkpoint::from_store(store, model)?;
    serde_json::to_string_pretty(&ck).map_err(|e| NeuroError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(text: &str) -> Result<Checkpoint, NeuroError> {
    serde_json::from_str(text).map_err(|e| NeuroError::Checkpoint(e.to_string()))
}
