//! Streaming, one-window-at-a-time access to the gate and selector for an
//! external inference loop. Numeric inputs are flat slices with explicit shapes.

use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::flops::ModelDims;
use crate::gate::{GateConfig, GateState, VisionState};
use crate::scoring::{topk_per_view, ImportanceScores};
use crate::se3::{window_distance_with, ActionIncrement, ActionWindow};

use super::config::RunConfig;

const DEFAULT_OMEGA: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub s: VisionState,
    pub delta: f64,
    /// Visual tokens to keep on the next forward; `None` on full vision or
    /// when the config carries no sequence lengths.
    pub k: Option<u64>,
}

/// One live episode.
#[derive(Debug, Clone)]
pub struct Session {
    config: RunConfig,
    gate: GateConfig,
    state: GateState,
    dims: Option<ModelDims>,
}

impl Session {
    pub fn open(config_json: &str) -> Result<Self> {
        Self::from_config(RunConfig::from_json(config_json)?)
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let gate = config.gate_config(config.omega.unwrap_or(DEFAULT_OMEGA))?;
        let dims = match &config.dims {
            Some(d) => Some(d.resolve(None)?),
            None => None,
        };
        Ok(Self {
            config,
            gate,
            state: GateState::new(),
            dims,
        })
    }

    pub fn config_json(&self) -> String {
        self.config.to_json()
    }

    pub fn omega(&self) -> usize {
        self.gate.omega
    }

    /// Windows consumed so far.
    pub fn window_index(&self) -> usize {
        self.state.window_index
    }

    /// Consumes one window given as `omega * 7` row-major values.
    pub fn step(&mut self, actions: &[f64]) -> Result<DecisionRecord> {
        let omega = self.gate.omega;
        if actions.len() != omega * 7 {
            return Err(AdpError::invalid(format!(
                "window must have shape {omega}x7 ({} values), got {}",
                omega * 7,
                actions.len()
            )));
        }
        let increments = actions
            .chunks_exact(7)
            .map(|c| {
                let inc = ActionIncrement::from_array(c.try_into().expect("chunk of 7"));
                inc.validate().map(|_| inc)
            })
            .collect::<Result<Vec<_>>>()?;
        let window = ActionWindow::new(self.state.window_index + 1, increments);
        let delta = window_distance_with(&window, self.config.fk_convention())?;
        let s = self.state.step(&self.gate, delta)?;
        let k = match (s, &self.dims) {
            (VisionState::Pruned, Some(d)) => Some(d.retained(self.config.rho)?),
            _ => None,
        };
        Ok(DecisionRecord { s, delta, k })
    }

    /// Global kept indices for an importance vector split into views.
    pub fn select_tokens(
        &self,
        importance: &[f64],
        view_lengths: &[usize],
        rho: f64,
        alpha: &[f64],
    ) -> Result<Vec<usize>> {
        let phi = ImportanceScores::new(importance.to_vec(), view_lengths.to_vec())?;
        Ok(topk_per_view(&phi, rho, alpha)?.global_indices())
    }
}
