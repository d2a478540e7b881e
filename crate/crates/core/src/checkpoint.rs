//! Checkpoint serialization: full config echo, parameters as named blocks,
//! optimizer state, and the step counter, all in JSON. Saving, loading, and
//! saving again yields identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::params::ParamVector;
use crate::schedule::build_schedule;
use crate::train::{TrainMode, TrainState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mode: TrainMode,
    pub step: u64,
    pub config: TrainConfig,
    pub theta: ParamVector,
    pub phi_mask: ParamVector,
    pub phi_sig: ParamVector,
    pub optimizer: OptimizerState,
}

impl Checkpoint {
    pub fn from_state(cfg: &TrainConfig, mode: TrainMode, state: &TrainState) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            mode,
            step: state.optimizer.step,
            config: cfg.clone(),
            theta: state.denoiser.params().clone(),
            phi_mask: state.mask_encoder.params().clone(),
            phi_sig: state.signal_decoder.params().clone(),
            optimizer: state.optimizer.clone(),
        }
    }

    /// Rebuild networks, schedule, and optimizer from the checkpoint.
    pub fn to_state(&self) -> Result<TrainState> {
        self.config.validate()?;
        let mut state = TrainState::init(&self.config)?;
        state.denoiser.set_params(self.theta.clone())?;
        state.mask_encoder.set_params(self.phi_mask.clone())?;
        state.signal_decoder.set_params(self.phi_sig.clone())?;
        self.optimizer
            .check_shapes(self.theta.len(), self.phi_mask.len(), self.phi_sig.len())?;
        state.optimizer = self.optimizer.clone();
        state.schedule = build_schedule(
            self.config.schedule_kind,
            self.config.t_count,
            self.config.beta_start,
            self.config.beta_end,
        )?;
        if self.optimizer.step != self.step {
            return Err(Error::Checkpoint(format!(
                "step counter mismatch: checkpoint {} vs optimizer {}",
                self.step, self.optimizer.step
            )));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // check the version before a full parse so version mismatches are
        // reported as such, not as schema errors
        let probe: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format_version {v} (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version field".into())),
        }
        serde_json::from_value(probe).map_err(|e| Error::json(path, e))
    }
}
