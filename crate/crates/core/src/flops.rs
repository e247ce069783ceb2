//! Closed-form FLOPs accounting for the transformer stack.
//!
//! Per layer `F(S) = 2 S^2 D + 4 S D^2 + 6 S D M` (attention, projections,
//! gated MLP). A full forward costs `H * F(S)`; a pruned forward pays the
//! text-vision scoring once and then runs all `H` layers on the shortened
//! sequence `S'`. Everything is exact integer arithmetic in `u128` with
//! checked operations; episode expectations are exact rationals.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::scoring::retained_count;

pub type Flops = u128;

/// Widths and sequence-segment lengths of the language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Hidden width `D`.
    pub d_model: u64,
    /// MLP intermediate width `M`.
    pub d_ff: u64,
    /// Layer count `H`.
    pub layers: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub l_vis: u64,
    pub l_txt: u64,
    #[serde(default)]
    pub l_prop: u64,
    #[serde(default)]
    pub l_act: u64,
    /// Whether the sequence ends with an EOS token.
    #[serde(default = "default_true")]
    pub eos: bool,
}

fn default_true() -> bool {
    true
}

/// Width constants of a named model family; sequence lengths are supplied separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthPreset {
    pub name: &'static str,
    pub d_model: u64,
    pub d_ff: u64,
    pub layers: u64,
    pub heads: u64,
    pub head_dim: u64,
}

pub const PRESETS: &[WidthPreset] = &[WidthPreset {
    name: "llama2-7b-oft",
    d_model: 4096,
    d_ff: 11008,
    layers: 32,
    heads: 32,
    head_dim: 128,
}];

pub fn preset(name: &str) -> Result<WidthPreset> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .copied()
        .ok_or_else(|| AdpError::Config {
            path: "dims.preset".into(),
            message: format!(
                "unknown preset `{name}`, known: {}",
                PRESETS
                    .iter()
                    .map(|p| p.name)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })
}

impl WidthPreset {
    pub fn with_lengths(&self, l_vis: u64, l_txt: u64, l_prop: u64, l_act: u64) -> ModelDims {
        ModelDims {
            d_model: self.d_model,
            d_ff: self.d_ff,
            layers: self.layers,
            heads: self.heads,
            head_dim: self.head_dim,
            l_vis,
            l_txt,
            l_prop,
            l_act,
            eos: true,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("l_vis", self.l_vis),
            ("l_txt", self.l_txt),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AdpError::Config {
                    path: format!("dims.{name}"),
                    message: "must be positive".into(),
                });
            }
        }
        if self.heads.checked_mul(self.head_dim) != Some(self.d_model) {
            return Err(AdpError::Config {
                path: "dims.heads".into(),
                message: format!(
                    "heads ({}) x head_dim ({}) must equal d_model ({})",
                    self.heads, self.head_dim, self.d_model
                ),
            });
        }
        Ok(())
    }

    fn fixed_tokens(&self) -> u64 {
        1 + self.l_prop + self.l_txt + self.l_act + u64::from(self.eos)
    }

    /// Full sequence length `S`.
    pub fn seq_len(&self) -> u64 {
        self.fixed_tokens() + self.l_vis
    }

    /// Sequence length after keeping `k` visual tokens.
    pub fn pruned_seq_len(&self, k: u64) -> u64 {
        self.fixed_tokens() + k
    }

    pub fn retained(&self, rho: f64) -> Result<u64> {
        Ok(retained_count(rho, self.l_vis as usize)? as u64)
    }
}

fn mul(a: u128, b: u128) -> Result<u128> {
    a.checked_mul(b)
        .ok_or_else(|| AdpError::range(format!("{a} * {b} overflows u128")))
}

fn add(a: u128, b: u128) -> Result<u128> {
    a.checked_add(b)
        .ok_or_else(|| AdpError::range(format!("{a} + {b} overflows u128")))
}

/// `2 S^2 D + 4 S D^2 + 6 S D M`.
pub fn layer_flops(seq: u64, d_model: u64, d_ff: u64) -> Result<Flops> {
    let (s, d, m) = (seq as u128, d_model as u128, d_ff as u128);
    let attn = mul(mul(2 * s, s)?, d)?;
    let proj = mul(mul(4 * s, d)?, d)?;
    let mlp = mul(mul(6 * s, d)?, m)?;
    add(add(attn, proj)?, mlp)
}

pub fn baseline_flops(dims: &ModelDims) -> Result<Flops> {
    mul(
        dims.layers as u128,
        layer_flops(dims.seq_len(), dims.d_model, dims.d_ff)?,
    )
}

/// Query/key projections of text and vision tokens plus the similarity matrix.
pub fn scoring_flops(dims: &ModelDims) -> Result<Flops> {
    let d2 = mul(dims.d_model as u128, dims.d_model as u128)?;
    let q = mul(2 * dims.l_txt as u128, d2)?;
    let k = mul(2 * dims.l_vis as u128, d2)?;
    let sim = mul(
        mul(2 * dims.heads as u128, dims.l_txt as u128)?,
        mul(dims.l_vis as u128, dims.head_dim as u128)?,
    )?;
    add(add(q, k)?, sim)
}

/// Cost of a forward on `k` kept visual tokens, scoring included.
pub fn adp_flops_for_k(dims: &ModelDims, k: u64) -> Result<Flops> {
    let layers = mul(
        dims.layers as u128,
        layer_flops(dims.pruned_seq_len(k), dims.d_model, dims.d_ff)?,
    )?;
    add(scoring_flops(dims)?, layers)
}

pub fn adp_flops(dims: &ModelDims, rho: f64) -> Result<Flops> {
    adp_flops_for_k(dims, dims.retained(rho)?)
}

/// `F_base - F_ADP`; negative when scoring costs more than pruning saves.
pub fn adp_savings(dims: &ModelDims, rho: f64) -> Result<i128> {
    let base = to_i128(baseline_flops(dims)?)?;
    let adp = to_i128(adp_flops(dims, rho)?)?;
    base.checked_sub(adp)
        .ok_or_else(|| AdpError::range("savings overflow"))
}

fn to_i128(v: u128) -> Result<i128> {
    i128::try_from(v).map_err(|_| AdpError::range(format!("{v} exceeds i128")))
}

/// Fraction `pruned / total` of forwards on the pruned path.
pub fn pruned_fraction(pruned: u64, total: u64) -> Result<Ratio<u64>> {
    if total == 0 || pruned > total {
        return Err(AdpError::invalid(format!(
            "pruned fraction {pruned}/{total} is not in [0, 1]"
        )));
    }
    Ok(Ratio::new(pruned, total))
}

/// Nearest fraction with denominator 10^6, for ratios given as decimals.
pub fn fraction_from_f64(gamma: f64) -> Result<Ratio<u64>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(AdpError::invalid(format!(
            "fraction must be in [0, 1], got {gamma}"
        )));
    }
    Ok(Ratio::new((gamma * 1e6).round() as u64, 1_000_000))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeCost {
    pub base_total: Flops,
    pub expected: Ratio<i128>,
    pub savings: Ratio<i128>,
}

/// Expected episode cost `T (gamma F_ADP + (1 - gamma) F_base)` and savings
/// `T gamma (F_base - F_ADP)`, exact.
pub fn episode_expected_flops(
    dims: &ModelDims,
    rho: f64,
    gamma: Ratio<u64>,
    forwards: u64,
) -> Result<EpisodeCost> {
    if forwards == 0 {
        return Err(AdpError::invalid("an episode needs at least one forward"));
    }
    if *gamma.denom() == 0 || gamma.numer() > gamma.denom() {
        return Err(AdpError::invalid(format!("gamma {gamma} is not in [0, 1]")));
    }
    let overflow = || AdpError::range("episode cost overflows i128");
    let base = to_i128(baseline_flops(dims)?)?;
    let adp = to_i128(adp_flops(dims, rho)?)?;
    let (p, q) = (*gamma.numer() as i128, *gamma.denom() as i128);
    let t = forwards as i128;
    let per_forward = p
        .checked_mul(adp)
        .and_then(|a| (q - p).checked_mul(base).and_then(|b| a.checked_add(b)))
        .ok_or_else(overflow)?;
    let expected = t.checked_mul(per_forward).ok_or_else(overflow)?;
    let savings = t
        .checked_mul(p)
        .and_then(|tp| tp.checked_mul(base - adp))
        .ok_or_else(overflow)?;
    let base_total = mul(forwards as u128, baseline_flops(dims)?)?;
    Ok(EpisodeCost {
        base_total,
        expected: Ratio::new(expected, q),
        savings: Ratio::new(savings, q),
    })
}

/// Renders a FLOPs count in units of 10^12 with two decimals.
pub fn tera(flops: Flops) -> String {
    format!("{:.2}", flops as f64 / 1e12)
}

/// One row of a cost table over retention ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub rho: f64,
    pub k: u64,
    pub seq_len: u64,
    pub pruned_seq_len: u64,
    pub base: Flops,
    pub scoring: Flops,
    pub adp: Flops,
    pub savings: i128,
    pub base_t: String,
    pub adp_t: String,
}

pub fn cost_table(dims: &ModelDims, rhos: &[f64]) -> Result<Vec<CostRow>> {
    let base = baseline_flops(dims)?;
    let scoring = scoring_flops(dims)?;
    rhos.iter()
        .map(|&rho| {
            let k = dims.retained(rho)?;
            let adp = adp_flops_for_k(dims, k)?;
            Ok(CostRow {
                rho,
                k,
                seq_len: dims.seq_len(),
                pruned_seq_len: dims.pruned_seq_len(k),
                base,
                scoring,
                adp,
                savings: to_i128(base)? - to_i128(adp)?,
                base_t: tera(base),
                adp_t: tera(adp),
            })
        })
        .collect()
}

/// Published per-ratio costs to fit sequence lengths against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCosts {
    /// Unpruned forward cost.
    pub base: f64,
    /// `(rho, cost)` pairs.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostInterpretation {
    /// Each reported cost is one pruned forward (`gamma = 1`).
    PerForward,
    /// Each reported cost is an episode average mixing pruned and full forwards.
    EpisodeAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub rho: f64,
    pub model: f64,
    pub target: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub interpretation: CostInterpretation,
    pub l_vis: u64,
    /// All non-visual tokens besides BOS/EOS, booked as text in the fitted dims.
    pub l_other: u64,
    pub gamma: f64,
    pub base_model: f64,
    pub base_rel_error: f64,
    pub residuals: Vec<Residual>,
    /// Largest relative error over the base and every point.
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub per_forward: CalibrationFit,
    pub episode_average: CalibrationFit,
    pub best: CostInterpretation,
}

impl CalibrationReport {
    pub fn best_fit(&self) -> &CalibrationFit {
        match self.best {
            CostInterpretation::PerForward => &self.per_forward,
            CostInterpretation::EpisodeAverage => &self.episode_average,
        }
    }
}

#[derive(Clone)]
struct Candidate {
    dims: ModelDims,
    base: f64,
    adp: Vec<f64>,
}

impl Candidate {
    fn errors(&self, refs: &ReferenceCosts, gamma: f64) -> (f64, Vec<Residual>) {
        let base_err = (self.base - refs.base).abs() / refs.base;
        let residuals: Vec<Residual> = refs
            .points
            .iter()
            .zip(&self.adp)
            .map(|(&(rho, target), &adp)| {
                let model = gamma * adp + (1.0 - gamma) * self.base;
                Residual {
                    rho,
                    model,
                    target,
                    rel_error: (model - target).abs() / target,
                }
            })
            .collect();
        let worst = residuals
            .iter()
            .map(|r| r.rel_error)
            .fold(base_err, f64::max);
        (worst, residuals)
    }

    fn max_error(&self, refs: &ReferenceCosts, gamma: f64) -> f64 {
        self.errors(refs, gamma).0
    }
}

/// Fits `(l_vis, l_other, gamma)` to reference costs under both readings of
/// what a reported cost means. Widths come from `widths`; the non-visual
/// token count is booked entirely as text. `l_vis` is searched over
/// `1..=max_l_vis`; for each, `l_other` is taken from the sequence length
/// that reproduces the base cost.
pub fn calibrate(
    widths: &WidthPreset,
    refs: &ReferenceCosts,
    max_l_vis: u64,
) -> Result<CalibrationReport> {
    if refs.points.is_empty() || refs.base.is_nan() || refs.base <= 0.0 {
        return Err(AdpError::invalid(
            "calibration needs a positive base and at least one point",
        ));
    }
    // Solve H (2 D S^2 + (4 D^2 + 6 D M) S) = base for S.
    let (h, d, m) = (
        widths.layers as f64,
        widths.d_model as f64,
        widths.d_ff as f64,
    );
    let (a, b) = (2.0 * d * h, (4.0 * d * d + 6.0 * d * m) * h);
    let seq = (-b + (b * b + 4.0 * a * refs.base).sqrt()) / (2.0 * a);
    let seq = seq.round() as i64;

    let mut best_pf: Option<(f64, Candidate)> = None;
    let mut best_ep: Option<(f64, f64, Candidate)> = None;
    for l_vis in 1..=max_l_vis {
        for s in [seq - 1, seq, seq + 1] {
            let l_other = s - 2 - l_vis as i64;
            if l_other < 1 {
                continue;
            }
            let dims = widths.with_lengths(l_vis, l_other as u64, 0, 0);
            let adp = refs
                .points
                .iter()
                .map(|&(rho, _)| Ok(adp_flops(&dims, rho)? as f64))
                .collect::<Result<Vec<_>>>()?;
            let cand = Candidate {
                base: baseline_flops(&dims)? as f64,
                adp,
                dims,
            };

            let err = cand.max_error(refs, 1.0);
            if best_pf.as_ref().is_none_or(|(e, _)| err < *e) {
                best_pf = Some((err, cand.clone()));
            }

            // The worst-case error is convex in gamma; ternary search it.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..100 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if cand.max_error(refs, m1) <= cand.max_error(refs, m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let gamma = (lo + hi) / 2.0;
            let err = cand.max_error(refs, gamma);
            if best_ep.as_ref().is_none_or(|(e, _, _)| err < *e) {
                best_ep = Some((err, gamma, cand));
            }
        }
    }
    let (Some((_, pf)), Some((_, gamma, ep))) = (best_pf, best_ep) else {
        return Err(AdpError::invalid(
            "no feasible sequence lengths for the reference base",
        ));
    };
    let finish = |c: &Candidate, gamma: f64, interpretation| {
        let (max_rel_error, residuals) = c.errors(refs, gamma);
        CalibrationFit {
            interpretation,
            l_vis: c.dims.l_vis,
            l_other: c.dims.l_txt,
            gamma,
            base_model: c.base,
            base_rel_error: (c.base - refs.base).abs() / refs.base,
            residuals,
            max_rel_error,
        }
    };
    let per_forward = finish(&pf, 1.0, CostInterpretation::PerForward);
    let episode_average = finish(&ep, gamma, CostInterpretation::EpisodeAverage);
    let best = if per_forward.max_rel_error <= episode_average.max_rel_error {
        CostInterpretation::PerForward
    } else {
        CostInterpretation::EpisodeAverage
    };
    Ok(CalibrationReport {
        per_forward,
        episode_average,
        best,
    })
}
