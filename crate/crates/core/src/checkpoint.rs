//! Versioned JSON snapshots of the server state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::FLConfig;
use crate::error::{Error, Result};
use crate::federation::GlobalState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: FLConfig,
    pub state: GlobalState,
}

impl Checkpoint {
    pub fn new(config: FLConfig, state: GlobalState) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            state,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        crate::io::write_atomic(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint.version",
                format!(
                    "unsupported version {} (expected {CHECKPOINT_VERSION})",
                    ck.version
                ),
            ));
        }
        if !ck.state.global.is_finite() {
            return Err(Error::format("checkpoint.state", "non-finite parameters"));
        }
        Ok(ck)
    }
}
