//! Fitted-model documents: versioned JSON holding every model field.

use serde::{Deserialize, Serialize};
use stormwatch_core::forecast::FittedModel;
use stormwatch_core::SignalKind;

use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "stormwatch-model";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub schema_version: u32,
    pub kind: Option<SignalKind>,
    pub model: FittedModel,
}

impl ModelDocument {
    pub fn new(kind: Option<SignalKind>, model: FittedModel) -> Self {
        Self { format: MODEL_FORMAT.into(), schema_version: MODEL_SCHEMA_VERSION, kind, model }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            format: String,
            schema_version: u32,
        }
        let probe: Probe = serde_json::from_str(text)?;
        if probe.format != MODEL_FORMAT {
            return Err(Error::Config(format!("not a model document: format `{}`", probe.format)));
        }
        if probe.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "model schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                probe.schema_version
            )));
        }
        Ok(serde_json::from_str(text)?)
    }
}
