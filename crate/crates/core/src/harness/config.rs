use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::flops::{preset, ModelDims};
use crate::gate::{GateConfig, GateRule, ThirdCase};
use crate::scoring::{EmbeddingMatrix, ProjectionWeights, SegmentKind};
use crate::se3::{CompositionFrame, EulerOrder, FkConvention};

/// Model dimensions as written in a config: an optional width preset plus
/// any explicit fields, which win over the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_ff: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_dim: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_vis: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_txt: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_prop: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_act: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eos: Option<bool>,
}

fn required(v: Option<u64>, name: &str) -> Result<u64> {
    v.ok_or_else(|| AdpError::Config {
        path: format!("dims.{name}"),
        message: "required (no preset or embedding file supplies it)".into(),
    })
}

fn must_match(name: &str, configured: Option<u64>, observed: u64) -> Result<u64> {
    match configured {
        Some(v) if v != observed => Err(AdpError::invalid(format!(
            "dims.{name} is {v} but the embedding inputs have {observed}"
        ))),
        _ => Ok(observed),
    }
}

impl DimsConfig {
    /// Resolves to concrete dims. With `vision` given, sequence lengths and
    /// widths are read from the embeddings and weights, and any configured
    /// value must agree with them.
    pub fn resolve(
        &self,
        vision: Option<(&EmbeddingMatrix, &ProjectionWeights)>,
    ) -> Result<ModelDims> {
        let mut d = self.clone();
        if let Some(name) = &self.preset {
            let p = preset(name)?;
            d.d_model = d.d_model.or(Some(p.d_model));
            d.d_ff = d.d_ff.or(Some(p.d_ff));
            d.layers = d.layers.or(Some(p.layers));
            d.heads = d.heads.or(Some(p.heads));
            d.head_dim = d.head_dim.or(Some(p.head_dim));
        }
        let dims = if let Some((emb, w)) = vision {
            let len = |k| emb.len_of(k) as u64;
            let eos = len(SegmentKind::Eos);
            if eos > 1 || len(SegmentKind::Bos) != 1 {
                return Err(AdpError::invalid(
                    "embedding sequence needs exactly one BOS token and at most one EOS token",
                ));
            }
            if let Some(e) = self.eos {
                if e != (eos == 1) {
                    return Err(AdpError::invalid(
                        "dims.eos disagrees with the embedding layout",
                    ));
                }
            }
            ModelDims {
                d_model: must_match("d_model", d.d_model, emb.cols() as u64)?,
                d_ff: required(d.d_ff, "d_ff")?,
                layers: required(d.layers, "layers")?,
                heads: must_match("heads", d.heads, w.num_heads as u64)?,
                head_dim: must_match("head_dim", d.head_dim, w.head_dim as u64)?,
                l_vis: must_match("l_vis", d.l_vis, len(SegmentKind::Vis))?,
                l_txt: must_match("l_txt", d.l_txt, len(SegmentKind::Txt))?,
                l_prop: must_match("l_prop", d.l_prop, len(SegmentKind::Prop))?,
                l_act: must_match("l_act", d.l_act, len(SegmentKind::Act))?,
                eos: eos == 1,
            }
        } else {
            ModelDims {
                d_model: required(d.d_model, "d_model")?,
                d_ff: required(d.d_ff, "d_ff")?,
                layers: required(d.layers, "layers")?,
                heads: required(d.heads, "heads")?,
                head_dim: required(d.head_dim, "head_dim")?,
                l_vis: required(d.l_vis, "l_vis")?,
                l_txt: required(d.l_txt, "l_txt")?,
                l_prop: d.l_prop.unwrap_or(0),
                l_act: d.l_act.unwrap_or(0),
                eos: d.eos.unwrap_or(true),
            }
        };
        dims.validate()?;
        Ok(dims)
    }
}

/// Everything a replay run is configured with. Keys match the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rule: GateRule,
    pub tau: usize,
    pub third_case: ThirdCase,
    pub cold_start_windows: usize,
    pub max_consecutive_pruned: usize,
    /// Chunk length; taken from the episode header when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<usize>,
    pub rho: f64,
    /// Per-view retention weights; defaults to 4:6 for two views, even split otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    pub scoring_layer: usize,
    pub euler_order: EulerOrder,
    pub frame: CompositionFrame,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<DimsConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gate = GateConfig::default();
        Self {
            rule: gate.rule,
            tau: gate.tau,
            third_case: gate.third_case,
            cold_start_windows: gate.cold_start_windows,
            max_consecutive_pruned: gate.max_consecutive_pruned,
            omega: None,
            rho: 0.5,
            alpha: None,
            scoring_layer: 0,
            euler_order: EulerOrder::default(),
            frame: CompositionFrame::default(),
            dims: None,
        }
    }
}

impl RunConfig {
    /// Parses a JSON config. Errors carry the dotted path of the bad field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            AdpError::Config {
                path: if path == "." { String::new() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gate_config(self.omega.unwrap_or(1))?;
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(AdpError::Config {
                path: "rho".into(),
                message: format!("must be in (0, 1], got {}", self.rho),
            });
        }
        if let Some(alpha) = &self.alpha {
            let sum: f64 = alpha.iter().sum();
            if alpha.is_empty()
                || alpha.iter().any(|a| !a.is_finite() || *a < 0.0)
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(AdpError::Config {
                    path: "alpha".into(),
                    message: "must be non-negative weights summing to 1".into(),
                });
            }
        }
        if self.scoring_layer != 0 {
            return Err(AdpError::Config {
                path: "scoring_layer".into(),
                message: "only layer 0 (input embeddings) can be scored without a live model"
                    .into(),
            });
        }
        Ok(())
    }

    pub fn gate_config(&self, omega: usize) -> Result<GateConfig> {
        let cfg = GateConfig {
            rule: self.rule,
            tau: self.tau,
            third_case: self.third_case,
            cold_start_windows: self.cold_start_windows,
            max_consecutive_pruned: self.max_consecutive_pruned,
            omega: self.omega.unwrap_or(omega),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fk_convention(&self) -> FkConvention {
        FkConvention {
            euler_order: self.euler_order,
            frame: self.frame,
        }
    }

    pub fn alpha_for(&self, views: usize) -> Result<Vec<f64>> {
        match &self.alpha {
            Some(a) if a.len() == views => Ok(a.clone()),
            Some(a) => Err(AdpError::invalid(format!(
                "alpha has {} weights but the embeddings have {views} views",
                a.len()
            ))),
            None if views == 2 => Ok(vec![0.4, 0.6]),
            None => Ok(vec![1.0 / views as f64; views]),
        }
    }

    pub fn resolve_dims(
        &self,
        vision: Option<(&EmbeddingMatrix, &ProjectionWeights)>,
    ) -> Result<ModelDims> {
        self.dims.clone().unwrap_or_default().resolve(vision)
    }
}
