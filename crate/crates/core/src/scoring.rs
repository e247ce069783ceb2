//! Text-driven visual token selection.
//!
//! Text embeddings are projected to queries and visual embeddings to keys;
//! the raw scaled dot products (no softmax) are averaged over heads and text
//! tokens into one importance score per visual token. The retention budget
//! `k = floor(rho * L_vis)` is split across camera views by weight, each view
//! keeps its highest-scoring tokens, and the sequence is reassembled with the
//! kept tokens in their original order.

use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};

/// Slack added before flooring `rho * n` so that decimal ratios such as
/// `0.6 * 5` floor to the intended integer.
const FLOOR_EPS: f64 = 1e-9;

/// Segment kinds, in canonical sequence order. Discriminants are the on-disk codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum SegmentKind {
    Bos = 0,
    Vis = 1,
    Prop = 2,
    Txt = 3,
    Act = 4,
    Eos = 5,
}

impl SegmentKind {
    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => SegmentKind::Bos,
            1 => SegmentKind::Vis,
            2 => SegmentKind::Prop,
            3 => SegmentKind::Txt,
            4 => SegmentKind::Act,
            5 => SegmentKind::Eos,
            other => return Err(AdpError::format(format!("unknown segment kind {other}"))),
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub len: usize,
    /// Camera view id; always 0 for non-visual segments.
    pub view: u32,
}

impl Segment {
    pub fn new(kind: SegmentKind, len: usize) -> Self {
        Self { kind, len, view: 0 }
    }

    pub fn vis(view: u32, len: usize) -> Self {
        Self {
            kind: SegmentKind::Vis,
            len,
            view,
        }
    }
}

/// Row-major token embedding matrix with its segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    segments: Vec<Segment>,
}

impl EmbeddingMatrix {
    pub fn new(cols: usize, data: Vec<f32>, segments: Vec<Segment>) -> Result<Self> {
        if cols == 0 {
            return Err(AdpError::invalid("embedding width must be positive"));
        }
        let rows: usize = segments.iter().map(|s| s.len).sum();
        if data.len() != rows * cols {
            return Err(AdpError::invalid(format!(
                "embedding data has {} values, segments describe {rows}x{cols}",
                data.len()
            )));
        }
        validate_layout(&segments)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(AdpError::invalid(format!(
                "non-finite embedding value at row {} col {}",
                i / cols,
                i % cols
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            segments,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `(segment, first row)` pairs.
    pub fn segment_offsets(&self) -> impl Iterator<Item = (&Segment, usize)> {
        self.segments.iter().scan(0usize, |off, s| {
            let start = *off;
            *off += s.len;
            Some((s, start))
        })
    }

    fn rows_of(&self, kind: SegmentKind) -> Vec<usize> {
        self.segment_offsets()
            .filter(|(s, _)| s.kind == kind)
            .flat_map(|(s, start)| start..start + s.len)
            .collect()
    }

    pub fn len_of(&self, kind: SegmentKind) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.len)
            .sum()
    }

    /// Token counts of the visual segments, in sequence order.
    pub fn view_lengths(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Vis)
            .map(|s| s.len)
            .collect()
    }

    pub fn vis_len(&self) -> usize {
        self.len_of(SegmentKind::Vis)
    }

    pub fn txt_len(&self) -> usize {
        self.len_of(SegmentKind::Txt)
    }
}

fn validate_layout(segments: &[Segment]) -> Result<()> {
    let mut prev: Option<SegmentKind> = None;
    let mut views = Vec::new();
    for s in segments {
        if let Some(p) = prev {
            let repeated_vis = p == SegmentKind::Vis && s.kind == SegmentKind::Vis;
            if s.kind < p || (s.kind == p && !repeated_vis) {
                return Err(AdpError::invalid(format!(
                    "segment {:?} out of order after {:?}",
                    s.kind, p
                )));
            }
        }
        match s.kind {
            SegmentKind::Vis => {
                if views.contains(&s.view) {
                    return Err(AdpError::invalid(format!("duplicate view id {}", s.view)));
                }
                views.push(s.view);
            }
            _ if s.view != 0 => {
                return Err(AdpError::invalid(format!(
                    "{:?} segment carries view id {}",
                    s.kind, s.view
                )));
            }
            _ => {}
        }
        prev = Some(s.kind);
    }
    Ok(())
}

/// Query and key projections for the scoring layer, both `D x D`, row-major.
/// Queries are `H_txt * W_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    pub w_q: Vec<f32>,
    pub w_k: Vec<f32>,
    pub num_heads: usize,
    pub head_dim: usize,
}

impl ProjectionWeights {
    pub fn new(w_q: Vec<f32>, w_k: Vec<f32>, num_heads: usize, head_dim: usize) -> Result<Self> {
        let w = Self {
            w_q,
            w_k,
            num_heads,
            head_dim,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn identity(num_heads: usize, head_dim: usize) -> Self {
        let d = num_heads * head_dim;
        let mut eye = vec![0.0f32; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        Self {
            w_q: eye.clone(),
            w_k: eye,
            num_heads,
            head_dim,
        }
    }

    pub fn width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 {
            return Err(AdpError::invalid("heads and head dim must be positive"));
        }
        let d = self.width();
        if self.w_q.len() != d * d || self.w_k.len() != d * d {
            return Err(AdpError::invalid(format!(
                "projection matrices must be {d}x{d} for {} heads of {}",
                self.num_heads, self.head_dim
            )));
        }
        if self.w_q.iter().chain(&self.w_k).any(|v| !v.is_finite()) {
            return Err(AdpError::invalid(
                "projection weights contain non-finite values",
            ));
        }
        Ok(())
    }
}

/// `heads x txt x vis` tensor of scaled similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    pub heads: usize,
    pub txt: usize,
    pub vis: usize,
    pub data: Vec<f64>,
}

impl AttentionScores {
    pub fn new(heads: usize, txt: usize, vis: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != heads * txt * vis {
            return Err(AdpError::invalid(
                "attention tensor shape does not match data",
            ));
        }
        Ok(Self {
            heads,
            txt,
            vis,
            data,
        })
    }

    pub fn get(&self, h: usize, t: usize, v: usize) -> f64 {
        self.data[(h * self.txt + t) * self.vis + v]
    }
}

fn project(m: &EmbeddingMatrix, rows: &[usize], w: &[f32]) -> Vec<f64> {
    let d = m.cols();
    let mut out = vec![0.0f64; rows.len() * d];
    for (o, &r) in rows.iter().enumerate() {
        let x = m.row(r);
        let dst = &mut out[o * d..(o + 1) * d];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let xi = xi as f64;
            let wrow = &w[i * d..(i + 1) * d];
            for (acc, &wij) in dst.iter_mut().zip(wrow) {
                *acc += xi * wij as f64;
            }
        }
    }
    out
}

/// Per-head scaled dot products between projected text and visual tokens.
pub fn attention_scores(
    embeddings: &EmbeddingMatrix,
    weights: &ProjectionWeights,
) -> Result<AttentionScores> {
    weights.validate()?;
    let d_model = embeddings.cols();
    if weights.width() != d_model {
        return Err(AdpError::invalid(format!(
            "projection width {} does not match embedding width {d_model}",
            weights.width()
        )));
    }
    let txt_rows = embeddings.rows_of(SegmentKind::Txt);
    let vis_rows = embeddings.rows_of(SegmentKind::Vis);
    if txt_rows.is_empty() {
        return Err(AdpError::state("embedding sequence has no text tokens"));
    }
    if vis_rows.is_empty() {
        return Err(AdpError::invalid("embedding sequence has no visual tokens"));
    }
    let q = project(embeddings, &txt_rows, &weights.w_q);
    let k = project(embeddings, &vis_rows, &weights.w_k);
    let (nh, hd) = (weights.num_heads, weights.head_dim);
    let (lt, lv) = (txt_rows.len(), vis_rows.len());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut data = vec![0.0f64; nh * lt * lv];
    for h in 0..nh {
        let cols = h * hd..(h + 1) * hd;
        for t in 0..lt {
            let qt = &q[t * d_model..(t + 1) * d_model][cols.clone()];
            for v in 0..lv {
                let kv = &k[v * d_model..(v + 1) * d_model][cols.clone()];
                let dot: f64 = qt.iter().zip(kv).map(|(a, b)| a * b).sum();
                data[(h * lt + t) * lv + v] = dot * scale;
            }
        }
    }
    AttentionScores::new(nh, lt, lv, data)
}

/// Per-visual-token importance, in visual sequence order, with view boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub values: Vec<f64>,
    pub view_lengths: Vec<usize>,
}

impl ImportanceScores {
    pub fn new(values: Vec<f64>, view_lengths: Vec<usize>) -> Result<Self> {
        if view_lengths.iter().sum::<usize>() != values.len() {
            return Err(AdpError::invalid(format!(
                "view lengths {:?} do not sum to {} scores",
                view_lengths,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AdpError::invalid("importance scores must be finite"));
        }
        Ok(Self {
            values,
            view_lengths,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn view(&self, c: usize) -> &[f64] {
        let start: usize = self.view_lengths[..c].iter().sum();
        &self.values[start..start + self.view_lengths[c]]
    }
}

/// Mean over heads and text queries. The result has a single view; use
/// [`ImportanceScores::new`] or [`score_importance`] to attach view boundaries.
pub fn aggregate_importance(scores: &AttentionScores) -> Result<ImportanceScores> {
    if scores.data.iter().any(|v| !v.is_finite()) {
        return Err(AdpError::invalid("attention scores must be finite"));
    }
    let mut phi = vec![0.0f64; scores.vis];
    for row in scores.data.chunks_exact(scores.vis.max(1)) {
        for (acc, a) in phi.iter_mut().zip(row) {
            *acc += a;
        }
    }
    let denom = (scores.heads * scores.txt) as f64;
    phi.iter_mut().for_each(|p| *p /= denom);
    let n = phi.len();
    ImportanceScores::new(phi, vec![n])
}

/// Attention scores aggregated into importance, keeping the embedding's views.
pub fn score_importance(
    embeddings: &EmbeddingMatrix,
    weights: &ProjectionWeights,
) -> Result<ImportanceScores> {
    let agg = aggregate_importance(&attention_scores(embeddings, weights)?)?;
    ImportanceScores::new(agg.values, embeddings.view_lengths())
}

/// `floor(ratio * n)`, tolerant to decimal representation error.
pub(crate) fn floor_fraction(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + FLOOR_EPS).floor() as usize
}

/// Number of visual tokens kept at retention ratio `rho`.
pub fn retained_count(rho: f64, l_vis: usize) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(AdpError::invalid(format!(
            "retention ratio must be in (0, 1], got {rho}"
        )));
    }
    Ok(floor_fraction(rho, l_vis).min(l_vis))
}

fn validate_alpha(alpha: &[f64], views: usize) -> Result<()> {
    if alpha.len() != views {
        return Err(AdpError::invalid(format!(
            "{} view weights given for {views} views",
            alpha.len()
        )));
    }
    if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(AdpError::invalid(
            "view weights must be finite and non-negative",
        ));
    }
    let sum: f64 = alpha.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(AdpError::invalid(format!(
            "view weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Per-view quotas: `floor(alpha_c * k)`, with the leftover handed out one at
/// a time in descending weight order (lower view index first on ties).
pub fn view_quotas(k: usize, alpha: &[f64]) -> Vec<usize> {
    let mut quotas: Vec<usize> = alpha.iter().map(|&a| floor_fraction(a, k)).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
    for &c in order.iter().cycle().take(k.saturating_sub(assigned)) {
        quotas[c] += 1;
    }
    quotas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub rho: f64,
    pub alpha: Vec<f64>,
    pub k: usize,
    pub k_per_view: Vec<usize>,
    /// Kept token indices local to each view, ascending.
    pub kept: Vec<Vec<usize>>,
    pub view_lengths: Vec<usize>,
}

impl PruneDecision {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().map(Vec::len).sum()
    }

    /// Kept indices into the whole visual sequence, ascending.
    pub fn global_indices(&self) -> Vec<usize> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.kept_count());
        for (kept, len) in self.kept.iter().zip(&self.view_lengths) {
            out.extend(kept.iter().map(|i| i + offset));
            offset += len;
        }
        out
    }
}

/// Keeps the `k_c` highest-scoring tokens of each view. Ties go to the lower
/// index and the kept indices come back in ascending order.
pub fn topk_per_view(phi: &ImportanceScores, rho: f64, alpha: &[f64]) -> Result<PruneDecision> {
    let views = phi.view_lengths.len();
    validate_alpha(alpha, views)?;
    let k = retained_count(rho, phi.len())?;
    if k == 0 {
        return Err(AdpError::invalid(format!(
            "retention ratio {rho} keeps no tokens out of {}",
            phi.len()
        )));
    }
    let quotas = view_quotas(k, alpha);
    let mut kept = Vec::with_capacity(views);
    for (c, &quota) in quotas.iter().enumerate() {
        let scores = phi.view(c);
        if quota > scores.len() {
            return Err(AdpError::invalid(format!(
                "view {c} has {} tokens but its quota is {quota}",
                scores.len()
            )));
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut chosen = order[..quota].to_vec();
        chosen.sort_unstable();
        kept.push(chosen);
    }
    Ok(PruneDecision {
        rho,
        alpha: alpha.to_vec(),
        k,
        k_per_view: quotas,
        kept,
        view_lengths: phi.view_lengths.clone(),
    })
}

/// Rebuilds the sequence with only the kept visual rows. Every other segment
/// is copied verbatim and all rows keep their relative order.
pub fn assemble_pruned(
    embeddings: &EmbeddingMatrix,
    decision: &PruneDecision,
) -> Result<EmbeddingMatrix> {
    let view_lengths = embeddings.view_lengths();
    if decision.kept.len() != view_lengths.len() {
        return Err(AdpError::invalid(format!(
            "decision covers {} views, embeddings have {}",
            decision.kept.len(),
            view_lengths.len()
        )));
    }
    let cols = embeddings.cols();
    let mut data = Vec::with_capacity(embeddings.data().len());
    let mut segments = Vec::with_capacity(embeddings.segments().len());
    let mut view = 0;
    for (seg, start) in embeddings.segment_offsets() {
        if seg.kind == SegmentKind::Vis {
            let kept = &decision.kept[view];
            if kept.windows(2).any(|w| w[0] >= w[1]) {
                return Err(AdpError::invalid(format!(
                    "kept indices for view {view} must be strictly ascending"
                )));
            }
            if let Some(&bad) = kept.iter().find(|&&i| i >= seg.len) {
                return Err(AdpError::invalid(format!(
                    "kept index {bad} out of range for view {view} of length {}",
                    seg.len
                )));
            }
            for &i in kept {
                data.extend_from_slice(embeddings.row(start + i));
            }
            segments.push(Segment::vis(seg.view, kept.len()));
            view += 1;
        } else {
            data.extend_from_slice(&embeddings.data()[start * cols..(start + seg.len) * cols]);
            segments.push(*seg);
        }
    }
    EmbeddingMatrix::new(cols, data, segments)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub pruned: EmbeddingMatrix,
    pub decision: PruneDecision,
    pub importance: ImportanceScores,
}

/// Score, select, and reassemble in one pass on the input embeddings.
pub fn prune_pipeline(
    embeddings: &EmbeddingMatrix,
    weights: &ProjectionWeights,
    rho: f64,
    alpha: &[f64],
) -> Result<PruneOutcome> {
    let importance = score_importance(embeddings, weights)?;
    let decision = topk_per_view(&importance, rho, alpha)?;
    let pruned = assemble_pruned(embeddings, &decision)?;
    Ok(PruneOutcome {
        pruned,
        decision,
        importance,
    })
}
