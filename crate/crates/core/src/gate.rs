//! Per-window full-vision / pruned gating driven by window motion distances.
//!
//! After every window the gate appends that window's distance to its history
//! and decides the visual state of the next forward pass. Two threshold rules
//! are available (running mean, and extrema of the last `tau` windows), and
//! two safeguards sit on top: a cold start that keeps the first windows at
//! full vision, and a cap on consecutive pruned windows.

use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};

/// Visual state of a forward pass. Serializes as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VisionState {
    #[default]
    Full,
    Pruned,
}

impl VisionState {
    pub fn as_bit(self) -> u8 {
        match self {
            VisionState::Full => 0,
            VisionState::Pruned => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(VisionState::Full),
            1 => Ok(VisionState::Pruned),
            other => Err(AdpError::invalid(format!(
                "vision state must be 0 or 1, got {other}"
            ))),
        }
    }

    pub fn is_pruned(self) -> bool {
        self == VisionState::Pruned
    }
}

impl Serialize for VisionState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_bit())
    }
}

impl<'de> Deserialize<'de> for VisionState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        VisionState::from_bit(bit).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRule {
    /// Prune when the window distance reaches the running mean of all windows so far.
    Mean,
    /// Prune at a local maximum of the last `tau` windows, keep full vision at a local minimum.
    #[default]
    Extrema,
}

/// What the extrema rule does when the distance falls strictly between the
/// lookback extrema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThirdCase {
    Inherit,
    #[default]
    ForcePrune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub rule: GateRule,
    /// Extrema lookback in windows. 3 is this crate's choice, not a measured value.
    pub tau: usize,
    pub third_case: ThirdCase,
    pub cold_start_windows: usize,
    pub max_consecutive_pruned: usize,
    /// Action chunk length in steps.
    pub omega: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            rule: GateRule::Extrema,
            tau: 3,
            third_case: ThirdCase::ForcePrune,
            cold_start_windows: 2,
            max_consecutive_pruned: 3,
            omega: 8,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(AdpError::Config {
                path: "tau".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.max_consecutive_pruned == 0 {
            return Err(AdpError::Config {
                path: "max_consecutive_pruned".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.omega == 0 {
            return Err(AdpError::Config {
                path: "omega".into(),
                message: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// Running-mean rule. `history` must end with `current`.
pub fn mean_rule(history: &[f64], current: f64) -> Result<VisionState> {
    let Some(last) = history.last() else {
        return Err(AdpError::state(
            "mean rule needs at least one window distance",
        ));
    };
    if last.to_bits() != current.to_bits() {
        return Err(AdpError::invalid(
            "current distance must be the last entry of the history",
        ));
    }
    let mean = history.iter().sum::<f64>() / history.len() as f64;
    Ok(if current >= mean {
        VisionState::Pruned
    } else {
        VisionState::Full
    })
}

/// Adjacent-extrema rule over the last `min(tau, len)` distances, current included.
pub fn extrema_rule(
    history: &[f64],
    tau: usize,
    prev: VisionState,
    third_case: ThirdCase,
) -> Result<VisionState> {
    if tau == 0 {
        return Err(AdpError::invalid("tau must be >= 1"));
    }
    let Some(&current) = history.last() else {
        return Err(AdpError::state(
            "extrema rule needs at least one window distance",
        ));
    };
    let lookback = &history[history.len().saturating_sub(tau)..];
    let upper = lookback.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = lookback.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if current >= upper {
        VisionState::Pruned
    } else if current <= lower {
        VisionState::Full
    } else {
        match third_case {
            ThirdCase::Inherit => prev,
            ThirdCase::ForcePrune => VisionState::Pruned,
        }
    })
}

/// Mutable gate for one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    /// State chosen by the most recent step (full vision before the first).
    pub current: VisionState,
    /// Number of completed windows.
    pub window_index: usize,
    pub delta_history: Vec<f64>,
    /// Length of the current unbroken run of pruned decisions.
    pub consecutive_pruned: usize,
}

impl GateState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds the distance of the window that just finished and returns the
    /// state for the next forward pass.
    pub fn step(&mut self, config: &GateConfig, delta: f64) -> Result<VisionState> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(AdpError::invalid(format!(
                "window distance must be finite and non-negative, got {delta}"
            )));
        }
        self.delta_history.push(delta);
        self.window_index += 1;

        let mut next = match config.rule {
            GateRule::Mean => mean_rule(&self.delta_history, delta)?,
            GateRule::Extrema => extrema_rule(
                &self.delta_history,
                config.tau,
                self.current,
                config.third_case,
            )?,
        };
        if self.window_index <= config.cold_start_windows {
            next = VisionState::Full;
        } else if self.consecutive_pruned >= config.max_consecutive_pruned {
            next = VisionState::Full;
            self.consecutive_pruned = 0;
        }

        match next {
            VisionState::Pruned => self.consecutive_pruned += 1,
            VisionState::Full => self.consecutive_pruned = 0,
        }
        self.current = next;
        Ok(next)
    }
}

/// Functional form of [`GateState::step`].
pub fn gate_step(
    state: &GateState,
    config: &GateConfig,
    delta: f64,
) -> Result<(GateState, VisionState)> {
    let mut next = state.clone();
    let decision = next.step(config, delta)?;
    Ok((next, decision))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateTrace {
    pub decisions: Vec<VisionState>,
    pub pruned: usize,
    /// Fraction of forwards on the pruned path.
    pub gamma: f64,
}

impl GateTrace {
    pub fn windows(&self) -> usize {
        self.decisions.len()
    }
}

pub fn gate_trace(deltas: &[f64], config: &GateConfig) -> Result<GateTrace> {
    if deltas.is_empty() {
        return Err(AdpError::invalid("gate trace needs at least one window"));
    }
    config.validate()?;
    let mut state = GateState::new();
    let decisions = deltas
        .iter()
        .map(|&d| state.step(config, d))
        .collect::<Result<Vec<_>>>()?;
    let pruned = decisions.iter().filter(|s| s.is_pruned()).count();
    Ok(GateTrace {
        gamma: pruned as f64 / decisions.len() as f64,
        pruned,
        decisions,
    })
}
