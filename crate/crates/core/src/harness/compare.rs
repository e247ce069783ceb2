//! ADP selection against a uniform random pruner with the same budget.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::stats::random_retention_probability;

use super::report::{sig6, RunReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRow {
    pub k: u64,
    /// Pruned windows that kept `k` tokens.
    pub windows: usize,
    /// Probability that a random pruner keeps all `m` targets.
    #[serde(serialize_with = "sig6")]
    pub analytic: f64,
    #[serde(serialize_with = "sig6")]
    pub monte_carlo: f64,
    #[serde(serialize_with = "sig6")]
    pub monte_carlo_stderr: f64,
    /// Fraction of these windows where ADP kept every target; needs a mask
    /// and a scored report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub tokens: u64,
    pub targets: u64,
    pub trials: u64,
    pub seed: u64,
    pub rows: Vec<RetentionRow>,
}

/// Draws `trials` random subsets of size `k` from `v` tokens and counts how
/// often all of the first `m` survive (target placement does not matter by symmetry).
pub fn monte_carlo_retention(
    v: u64,
    m: u64,
    k: u64,
    trials: u64,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let hits = (0..trials)
        .filter(|_| {
            rand::seq::index::sample(rng, v as usize, k as usize)
                .iter()
                .filter(|&i| (i as u64) < m)
                .count() as u64
                == m
        })
        .count();
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// One row per distinct `k` among the report's pruned windows.
pub fn compare_random(
    report: &RunReport,
    tokens: u64,
    targets: u64,
    trials: u64,
    seed: u64,
    target_mask: Option<&[usize]>,
) -> Result<ComparisonReport> {
    if targets > tokens {
        return Err(AdpError::invalid(format!(
            "{targets} targets cannot fit in {tokens} tokens"
        )));
    }
    if trials == 0 {
        return Err(AdpError::invalid("trials must be positive"));
    }
    if let Some(mask) = target_mask {
        if mask.len() as u64 != targets || mask.iter().any(|&i| i as u64 >= tokens) {
            return Err(AdpError::invalid(format!(
                "target mask must list {targets} indices below {tokens}"
            )));
        }
    }
    let mut by_k: BTreeMap<u64, Vec<Option<&Vec<usize>>>> = BTreeMap::new();
    for w in report.windows.iter().filter(|w| w.decision.is_pruned()) {
        if w.k > tokens {
            return Err(AdpError::invalid(format!(
                "window {} kept {} tokens, more than {tokens}",
                w.index, w.k
            )));
        }
        by_k.entry(w.k).or_default().push(w.kept.as_ref());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(by_k.len());
    for (k, kept) in by_k {
        let analytic = random_retention_probability(tokens, targets, k, targets)?;
        let (monte_carlo, monte_carlo_stderr) =
            monte_carlo_retention(tokens, targets, k, trials, &mut rng);
        let adp = match target_mask {
            Some(mask) if kept.iter().all(Option::is_some) => {
                let hit = kept
                    .iter()
                    .flatten()
                    .filter(|kept| mask.iter().all(|t| kept.binary_search(t).is_ok()))
                    .count();
                Some(hit as f64 / kept.len() as f64)
            }
            _ => None,
        };
        rows.push(RetentionRow {
            k,
            windows: kept.len(),
            analytic,
            monte_carlo,
            monte_carlo_stderr,
            adp,
        });
    }
    Ok(ComparisonReport {
        tokens,
        targets,
        trials,
        seed,
        rows,
    })
}
