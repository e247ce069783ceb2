use serde::{Deserialize, Serialize, Serializer};

use crate::flops::{Flops, ModelDims};
use crate::gate::VisionState;

use super::config::RunConfig;

/// Rounds to six significant digits on the way out so reports stay stable
/// under last-bit noise.
pub fn round_sig6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

pub(crate) fn sig6<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig6(*v))
}

/// FLOPs in units of 10^12 with two decimals; accepts negative savings.
pub fn tera_signed(v: i128) -> String {
    format!("{:.2}", v as f64 / 1e12)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    /// 1-based window number.
    pub index: usize,
    #[serde(serialize_with = "sig6")]
    pub delta: f64,
    pub decision: VisionState,
    /// Visual tokens kept; 0 on full-vision windows.
    pub k: u64,
    /// Kept visual indices (global, ascending); only when embeddings were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<Vec<usize>>,
    pub flops: Flops,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub windows: usize,
    pub pruned_windows: usize,
    pub full_windows: usize,
    #[serde(serialize_with = "sig6")]
    pub gamma: f64,
    #[serde(serialize_with = "sig6")]
    pub rho_avg: f64,
    pub f_base_forward: Flops,
    pub f_base_total: Flops,
    pub f_episode: Flops,
    pub savings: i128,
    #[serde(serialize_with = "sig6")]
    pub speedup: f64,
    pub f_base_total_t: String,
    pub f_episode_t: String,
    pub savings_t: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: RunConfig,
    pub dims: ModelDims,
    pub omega: usize,
    pub dropped_steps: usize,
    /// Whether token selection ran on real embeddings or was count-only.
    pub scored: bool,
    pub windows: Vec<WindowRecord>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn decisions(&self) -> Vec<VisionState> {
        self.windows.iter().map(|w| w.decision).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.delta).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::AdpError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}
