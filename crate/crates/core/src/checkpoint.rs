//! Versioned JSON checkpoints shared by the learned components.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ParamSet, ParamShape};

pub const FORMAT: &str = "stlplan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (format `{0}`)")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    Kind { expected: String, found: String },
    #[error("parameter layout does not match the model config")]
    Layout,
    #[error("checkpoint contains non-finite parameters")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub shapes: Vec<ParamShape>,
    pub params: Vec<f64>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new<C: Serialize>(kind: &str, params: &ParamSet, config: &C, seed: u64) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            kind: kind.to_string(),
            shapes: params.shapes.clone(),
            params: params.values.clone(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
        }
    }

    /// Checks header fields and returns the decoded config and parameters.
    pub fn open<C: DeserializeOwned>(&self, kind: &str) -> Result<(C, ParamSet), CheckpointError> {
        if self.format != FORMAT {
            return Err(CheckpointError::Format(self.format.clone()));
        }
        if self.version != VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        if self.kind != kind {
            return Err(CheckpointError::Kind { expected: kind.to_string(), found: self.kind.clone() });
        }
        let total: usize = self.shapes.iter().map(ParamShape::len).sum();
        if total != self.params.len() {
            return Err(CheckpointError::Layout);
        }
        let params = ParamSet { shapes: self.shapes.clone(), values: self.params.clone() };
        if !params.is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        Ok((serde_json::from_value(self.config.clone())?, params))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn round_trip_and_header_checks() {
        let mut b = ParamSet::builder(3);
        b.add("w", 2, 3, Init::Xavier(1.0));
        let p = b.finish();
        let ck = Checkpoint::new("toy", &p, &vec![1, 2], 9);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        let (cfg, q): (Vec<i32>, ParamSet) = back.open("toy").unwrap();
        assert_eq!(cfg, vec![1, 2]);
        assert_eq!(q, p);
        assert!(matches!(back.open::<Vec<i32>>("other"), Err(CheckpointError::Kind { .. })));
        let mut bad = back.clone();
        bad.version = 99;
        assert!(matches!(bad.open::<Vec<i32>>("toy"), Err(CheckpointError::Version(99))));
        let mut bad = back;
        bad.params.pop();
        assert!(matches!(bad.open::<Vec<i32>>("toy"), Err(CheckpointError::Layout)));
    }
}
