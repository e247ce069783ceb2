//! Diagnostics over importance vectors and the retention odds of a uniform
//! random pruner.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};

/// Probability vector over visual tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    p: Vec<f64>,
}

impl ScoreDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(AdpError::Degenerate("empty distribution".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AdpError::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AdpError::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { p })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// `p_i = phi_i / sum(phi)`. Scores are raw similarities and may be negative;
/// in that case they are first shifted so the minimum becomes zero.
pub fn normalize(phi: &[f64]) -> Result<ScoreDistribution> {
    if phi.is_empty() {
        return Err(AdpError::Degenerate("no scores to normalize".into()));
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(AdpError::invalid("scores must be finite"));
    }
    let min = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { min } else { 0.0 };
    let shifted: Vec<f64> = phi.iter().map(|v| v - shift).collect();
    let sum: f64 = shifted.iter().sum();
    if sum == 0.0 {
        return Err(AdpError::Degenerate("scores sum to zero".into()));
    }
    ScoreDistribution::new(shifted.into_iter().map(|v| v / sum).collect())
}

/// `1 / sum(p_i^2)`, the effective number of tokens holding the mass.
pub fn participation_ratio(p: &ScoreDistribution) -> f64 {
    1.0 / p.p.iter().map(|x| x * x).sum::<f64>()
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ScoreDistribution) -> f64 {
    // `0.0 - s` rather than `-s` so a point mass gives +0, not -0.
    0.0 - p
        .p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

pub fn entropy_bits(p: &ScoreDistribution) -> f64 {
    entropy(p) / std::f64::consts::LN_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub tokens: usize,
    pub participation_ratio: f64,
    pub entropy_nats: f64,
    pub entropy_bits: f64,
}

pub fn layer_stats(layer: usize, phi: &[f64]) -> Result<LayerStats> {
    let p = normalize(phi)?;
    Ok(LayerStats {
        layer,
        tokens: p.len(),
        participation_ratio: participation_ratio(&p),
        entropy_nats: entropy(&p),
        entropy_bits: entropy_bits(&p),
    })
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn check_retention_args(tokens: u64, targets: u64, kept: u64, min_retained: u64) -> Result<()> {
    if targets > tokens || kept > tokens || min_retained > targets {
        return Err(AdpError::invalid(format!(
            "need targets <= tokens, kept <= tokens, min_retained <= targets; \
             got tokens={tokens} targets={targets} kept={kept} min_retained={min_retained}"
        )));
    }
    Ok(())
}

/// Exact probability that at least `min_retained` of `targets` marked tokens
/// survive when `kept` of `tokens` are retained uniformly at random
/// (hypergeometric upper tail).
pub fn random_retention_probability_exact(
    tokens: u64,
    targets: u64,
    kept: u64,
    min_retained: u64,
) -> Result<BigRational> {
    check_retention_args(tokens, targets, kept, min_retained)?;
    let total = binomial(tokens, kept);
    let hits: BigUint = (min_retained..=targets.min(kept))
        .map(|j| binomial(targets, j) * binomial(tokens - targets, kept - j))
        .sum();
    Ok(BigRational::new(BigInt::from(hits), BigInt::from(total)))
}

pub fn random_retention_probability(
    tokens: u64,
    targets: u64,
    kept: u64,
    min_retained: u64,
) -> Result<f64> {
    let exact = random_retention_probability_exact(tokens, targets, kept, min_retained)?;
    exact
        .to_f64()
        .ok_or_else(|| AdpError::range("retention probability not representable as f64"))
}
