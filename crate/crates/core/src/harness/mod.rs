//! Episode replay: action logs (and optionally embeddings) in, reports out.

pub mod compare;
pub mod config;
pub mod episode;
pub mod report;
pub mod session;
pub mod synth;

use std::path::Path;

use crate::embfile::{load_embeddings, load_weights};
use crate::error::{AdpError, Result};
use crate::flops::{adp_flops_for_k, baseline_flops, tera, ModelDims};
use crate::gate::{GateState, VisionState};
use crate::scoring::{prune_pipeline, EmbeddingMatrix, ProjectionWeights, SegmentKind};
use crate::se3::{window_distance_with, FkConvention};

pub use compare::{compare_random, ComparisonReport, RetentionRow};
pub use config::{DimsConfig, RunConfig};
pub use episode::{load_episode, parse_episode, AngleUnit, EpisodeLog, EpisodeMeta};
pub use report::{RunReport, RunSummary, WindowRecord};
pub use session::{DecisionRecord, Session};
pub use synth::{synth_episode, SynthProfile};

/// Projection weights plus either one embedding matrix per window or a
/// single matrix reused for every window.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionInputs {
    pub weights: ProjectionWeights,
    pub embeddings: Vec<EmbeddingMatrix>,
}

impl VisionInputs {
    pub fn load(weights: impl AsRef<Path>, embeddings: &[impl AsRef<Path>]) -> Result<Self> {
        Ok(Self {
            weights: load_weights(weights)?,
            embeddings: embeddings
                .iter()
                .map(load_embeddings)
                .collect::<Result<Vec<_>>>()?,
        })
    }

    fn for_window(&self, i: usize) -> &EmbeddingMatrix {
        if self.embeddings.len() == 1 {
            &self.embeddings[0]
        } else {
            &self.embeddings[i]
        }
    }

    fn check(&self, windows: usize, dims: &ModelDims) -> Result<()> {
        if self.embeddings.is_empty() {
            return Err(AdpError::invalid("no embedding matrices supplied"));
        }
        if self.embeddings.len() != 1 && self.embeddings.len() != windows {
            return Err(AdpError::invalid(format!(
                "{} embedding files for {windows} windows (need 1 or one per window)",
                self.embeddings.len()
            )));
        }
        for (i, e) in self.embeddings.iter().enumerate() {
            let lens = (
                e.cols() as u64,
                e.len_of(SegmentKind::Vis) as u64,
                e.len_of(SegmentKind::Txt) as u64,
                e.len_of(SegmentKind::Prop) as u64,
                e.len_of(SegmentKind::Act) as u64,
                e.len_of(SegmentKind::Eos) == 1,
            );
            let want = (
                dims.d_model,
                dims.l_vis,
                dims.l_txt,
                dims.l_prop,
                dims.l_act,
                dims.eos,
            );
            if lens != want {
                return Err(AdpError::invalid(format!(
                    "embedding file {i} has layout {lens:?}, expected {want:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Window distances of every full window in the log.
pub fn extract_deltas(log: &EpisodeLog, conv: FkConvention) -> Result<Vec<f64>> {
    log.windows()
        .iter()
        .map(|w| window_distance_with(w, conv))
        .collect()
}

fn check_omega(log: &EpisodeLog, config: &RunConfig) -> Result<usize> {
    match config.omega {
        Some(o) if o != log.omega() => Err(AdpError::invalid(format!(
            "config omega {o} does not match the episode's omega {}",
            log.omega()
        ))),
        _ => Ok(log.omega()),
    }
}

/// Replays one episode window by window. Without vision inputs, pruned
/// windows are costed with `k = floor(rho * L_vis)` and no tokens are selected.
pub fn run_episode(
    log: &EpisodeLog,
    config: &RunConfig,
    vision: Option<&VisionInputs>,
) -> Result<RunReport> {
    config.validate()?;
    let omega = check_omega(log, config)?;
    let gate_cfg = config.gate_config(omega)?;
    let conv = config.fk_convention();
    let windows = log.windows();
    if windows.is_empty() {
        return Err(AdpError::invalid(format!(
            "episode has {} steps, fewer than one window of {omega}",
            log.steps.len()
        )));
    }
    let dims =
        config.resolve_dims(vision.and_then(|v| v.embeddings.first().map(|e| (e, &v.weights))))?;
    let alpha = match vision {
        Some(v) => {
            v.check(windows.len(), &dims)?;
            Some(config.alpha_for(v.embeddings[0].view_lengths().len())?)
        }
        None => None,
    };

    let f_base = baseline_flops(&dims)?;
    let k_default = dims.retained(config.rho)?;
    let mut gate = GateState::new();
    let mut records = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let delta = window_distance_with(w, conv)?;
        let decision = gate.step(&gate_cfg, delta)?;
        let (k, kept, flops) = match (decision, vision, &alpha) {
            (VisionState::Full, Some(_), _) => (0, Some(Vec::new()), f_base),
            (VisionState::Full, None, _) => (0, None, f_base),
            (VisionState::Pruned, Some(v), Some(alpha)) => {
                let out = prune_pipeline(v.for_window(i), &v.weights, config.rho, alpha)?;
                let k = out.decision.kept_count() as u64;
                (
                    k,
                    Some(out.decision.global_indices()),
                    adp_flops_for_k(&dims, k)?,
                )
            }
            (VisionState::Pruned, _, _) => (k_default, None, adp_flops_for_k(&dims, k_default)?),
        };
        records.push(WindowRecord {
            index: w.index,
            delta,
            decision,
            k,
            kept,
            flops,
        });
    }

    let t = records.len();
    let pruned = records.iter().filter(|r| r.decision.is_pruned()).count();
    let overflow = || AdpError::range("episode FLOPs overflow");
    let f_base_total = f_base.checked_mul(t as u128).ok_or_else(overflow)?;
    let f_episode = records
        .iter()
        .try_fold(0u128, |acc, r| acc.checked_add(r.flops))
        .ok_or_else(overflow)?;
    let savings = i128::try_from(f_base_total)
        .ok()
        .zip(i128::try_from(f_episode).ok())
        .map(|(b, e)| b - e)
        .ok_or_else(overflow)?;
    let processed: f64 = records
        .iter()
        .map(|r| match r.decision {
            VisionState::Pruned => r.k as f64 / dims.l_vis as f64,
            VisionState::Full => 1.0,
        })
        .sum();
    let summary = RunSummary {
        windows: t,
        pruned_windows: pruned,
        full_windows: t - pruned,
        gamma: pruned as f64 / t as f64,
        rho_avg: processed / t as f64,
        f_base_forward: f_base,
        f_base_total,
        f_episode,
        savings,
        speedup: f_base_total as f64 / f_episode as f64,
        f_base_total_t: tera(f_base_total),
        f_episode_t: tera(f_episode),
        savings_t: report::tera_signed(savings),
    };
    Ok(RunReport {
        version: crate::VERSION.to_string(),
        config: config.clone(),
        dims,
        omega,
        dropped_steps: log.dropped_steps,
        scored: vision.is_some(),
        windows: records,
        summary,
    })
}
