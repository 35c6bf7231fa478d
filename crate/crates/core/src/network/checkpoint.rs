//! JSON checkpoint container.
//!
//! ```text
//! {
//!   "format": "lmtriplet-checkpoint",
//!   "version": 1,
//!   "seed": <u64 used for initialization>,
//!   "spec": { "input": {"h","w","c"}, "layers": [ {"kind": ...}, ... ] },
//!   "params": [ flat f64 array, layer by layer, weights then biases ],
//!   "head": null | { "dim", "classes", "params": [W row-major, then b] }
//! }
//! ```
//!
//! Floats are written with round-trip precision, so a reload reproduces
//! the parameters bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingNet, NetSpec, SoftmaxHead};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "lmtriplet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub spec: NetSpec,
    pub params: Vec<f64>,
    pub head: Option<SoftmaxHead>,
}

impl Checkpoint {
    pub fn new(net: &EmbeddingNet, head: Option<&SoftmaxHead>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: net.seed(),
            spec: net.spec().clone(),
            params: net.params().to_vec(),
            head: head.cloned(),
        }
    }

    pub fn into_parts(self) -> Result<(EmbeddingNet, Option<SoftmaxHead>)> {
        if let Some(h) = &self.head {
            h.validate()?;
            if h.dim() != self.spec.output_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "head expects {}-d embeddings, network emits {}",
                    h.dim(),
                    self.spec.output_dim()
                )));
            }
        }
        let net = EmbeddingNet::from_params(self.spec, self.params, self.seed)?;
        Ok((net, self.head))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }
}
