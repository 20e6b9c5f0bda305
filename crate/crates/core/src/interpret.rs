//! Post-hoc attention attribution: rollout to the CLS token, modality-share
//! decomposition, per-item importances, and cross-attention patch maps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttnRecord, StreamKind};
use crate::record::Modality;

/// Captured attention organized for attribution: the self-attention stack
/// over the unified bag plus the text-to-image cross matrices from the
/// bidirectional blocks.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// Head-averaged square matrices, one per self-attention block, in
    /// forward order; each is `n_tokens x n_tokens` row-major.
    pub self_blocks: Vec<Vec<f32>>,
    /// Text-to-image cross matrices (`n_text x n_image`), one per
    /// bidirectional block, in forward order.
    pub cross_text_to_image: Vec<Vec<f32>>,
    pub n_tokens: usize,
    pub n_image: usize,
    pub n_text: usize,
    /// Modality tag per unified-bag token.
    pub tags: Vec<Modality>,
    /// Index of the CLS token within the unified bag.
    pub cls: usize,
}

const ROW_SUM_TOL: f32 = 1e-5;

fn check_row_stochastic(m: &[f32], rows: usize, cols: usize, what: &str) -> Result<()> {
    for r in 0..rows {
        let s: f64 = m[r * cols..(r + 1) * cols].iter().map(|&v| v as f64).sum();
        if (s - 1.0).abs() > ROW_SUM_TOL as f64 {
            return Err(Error::Contract(format!(
                "{what}: row {r} sums to {s}, not 1"
            )));
        }
        if m[r * cols..(r + 1) * cols].iter().any(|&v| v < 0.0) {
            return Err(Error::Contract(format!("{what}: negative weight in row {r}")));
        }
    }
    Ok(())
}

impl AttentionTrace {
    /// Assemble a trace from raw capture records and the bag's tags. The
    /// model must have run in CLS pooling mode.
    pub fn from_records(records: &[AttnRecord], tags: &[Modality]) -> Result<AttentionTrace> {
        let cls = tags
            .iter()
            .position(|&t| t == Modality::Cls)
            .ok_or_else(|| Error::Contract("trace requires a CLS token (cls pooling mode)".into()))?;
        let n = tags.len();
        let mut self_blocks = Vec::new();
        let mut cross = Vec::new();
        let mut n_image = tags.iter().filter(|&&t| t == Modality::Image).count();
        let mut n_text = n - n_image - 1;
        for rec in records {
            match rec.kind {
                StreamKind::SelfAttn => {
                    if rec.rows != n || rec.cols != n {
                        return Err(Error::shape(
                            "attention_trace",
                            format!("self matrix {}x{} vs {} tags", rec.rows, rec.cols, n),
                        ));
                    }
                    check_row_stochastic(&rec.weights, rec.rows, rec.cols, "self attention")?;
                    self_blocks.push(rec.weights.clone());
                }
                StreamKind::CrossTextToImage => {
                    check_row_stochastic(&rec.weights, rec.rows, rec.cols, "cross attention")?;
                    n_image = rec.cols;
                    n_text = rec.rows;
                    cross.push(rec.weights.clone());
                }
                _ => {}
            }
        }
        if self_blocks.is_empty() {
            return Err(Error::Contract("trace has no self-attention matrices".into()));
        }
        Ok(AttentionTrace {
            self_blocks,
            cross_text_to_image: cross,
            n_tokens: n,
            n_image,
            n_text,
            tags: tags.to_vec(),
            cls,
        })
    }
}

/// Per-token relevance with its modality tags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub relevance: Vec<f64>,
    pub tags: Vec<Modality>,
    pub cls: usize,
}

/// Attention rollout: per block A' = row-normalize(A + I), then the product
/// R = A'_L ... A'_1; relevance of token j is R[CLS, j]. All arithmetic in
/// double precision.
pub fn attention_rollout(trace: &AttentionTrace) -> Result<RelevanceMap> {
    let n = trace.n_tokens;
    // R starts as the identity
    let mut r = vec![0.0f64; n * n];
    for i in 0..n {
        r[i * n + i] = 1.0;
    }
    for a in &trace.self_blocks {
        if a.len() != n * n {
            return Err(Error::shape("rollout", String::from("non-square attention matrix")));
        }
        // A' = rownorm(A + I)
        let mut ap = vec![0.0f64; n * n];
        for i in 0..n {
            let mut sum = 0.0f64;
            for j in 0..n {
                let v = a[i * n + j] as f64 + if i == j { 1.0 } else { 0.0 };
                ap[i * n + j] = v;
                sum += v;
            }
            for j in 0..n {
                ap[i * n + j] /= sum;
            }
        }
        // R <- A' . R  (later blocks applied on the left)
        let mut next = vec![0.0f64; n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = ap[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += aik * r[k * n + j];
                }
            }
        }
        r = next;
    }
    // rows of R stay stochastic
    for i in 0..n {
        let s: f64 = r[i * n..(i + 1) * n].iter().sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::Contract(format!("rollout row {i} sums to {s}")));
        }
    }
    let relevance = r[trace.cls * n..(trace.cls + 1) * n].to_vec();
    Ok(RelevanceMap {
        relevance,
        tags: trace.tags.clone(),
        cls: trace.cls,
    })
}

/// Relevance mass per modality group, CLS excluded, renormalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityShares {
    pub image: f64,
    pub cc: f64,
    pub lab: f64,
    /// Sex and age together.
    pub demographics: f64,
}

pub fn modality_shares(map: &RelevanceMap) -> Result<ModalityShares> {
    let mut image = 0.0;
    let mut cc = 0.0;
    let mut lab = 0.0;
    let mut demo = 0.0;
    for (&rel, &tag) in map.relevance.iter().zip(&map.tags) {
        match tag {
            Modality::Image => image += rel,
            Modality::Cc => cc += rel,
            Modality::Lab => lab += rel,
            Modality::Sex | Modality::Age => demo += rel,
            Modality::Cls => {}
        }
    }
    let total = image + cc + lab + demo;
    if total <= 0.0 {
        return Err(Error::Contract("all non-CLS relevance is zero".into()));
    }
    Ok(ModalityShares {
        image: image / total,
        cc: cc / total,
        lab: lab / total,
        demographics: demo / total,
    })
}

/// Relevance values of all tokens carrying one tag, in bag order.
pub fn group_scores(map: &RelevanceMap, tag: Modality) -> Vec<f64> {
    map.relevance
        .iter()
        .zip(&map.tags)
        .filter(|(_, &t)| t == tag)
        .map(|(&r, _)| r)
        .collect()
}

/// Min-max normalized scores within one group (flat groups map to zeros).
pub fn normalized_group_scores(map: &RelevanceMap, tag: Modality) -> Vec<f64> {
    let raw = group_scores(map, tag);
    if raw.is_empty() {
        return raw;
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Cross-attention patch map for one text token: its row of the text-to-
/// image cross matrix, averaged over the bidirectional blocks (the capture
/// is already head-averaged). Sums to 1 within the row-stochastic tolerance.
pub fn cross_attention_map(trace: &AttentionTrace, word_index: usize) -> Result<Vec<f64>> {
    if trace.cross_text_to_image.is_empty() {
        return Err(Error::Contract("trace has no cross-attention matrices".into()));
    }
    if word_index >= trace.n_text {
        return Err(Error::Contract(format!(
            "word index {} out of range ({} text tokens)",
            word_index, trace.n_text
        )));
    }
    let cols = trace.n_image;
    let mut grid = vec![0.0f64; cols];
    for m in &trace.cross_text_to_image {
        if m.len() != trace.n_text * cols {
            return Err(Error::shape("cross_attention_map", String::from("cross matrix size mismatch")));
        }
        for (g, &w) in grid.iter_mut().zip(&m[word_index * cols..(word_index + 1) * cols]) {
            *g += w as f64;
        }
    }
    let inv = 1.0 / trace.cross_text_to_image.len() as f64;
    for g in grid.iter_mut() {
        *g *= inv;
    }
    Ok(grid)
}

/// Sum of the top ceil(fraction * N) relevance values.
pub fn top_quartile_mass(values: &[f64], fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Contract("top_quartile_mass on empty input".into()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Contract(format!("fraction {fraction} outside [0,1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = (libm::ceil(fraction * values.len() as f64) as usize).max(1).min(values.len());
    Ok(sorted[..k].iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(n_image: usize, n_text: usize) -> Vec<Modality> {
        let mut t = vec![Modality::Cls];
        t.extend(core::iter::repeat(Modality::Image).take(n_image));
        t.extend(core::iter::repeat(Modality::Lab).take(n_text));
        t
    }

    fn uniform_trace(n_blocks: usize, n_image: usize, n_text: usize) -> AttentionTrace {
        let t = tags(n_image, n_text);
        let n = t.len();
        let m = vec![1.0f32 / n as f32; n * n];
        AttentionTrace {
            self_blocks: vec![m; n_blocks],
            cross_text_to_image: Vec::new(),
            n_tokens: n,
            n_image,
            n_text,
            tags: t,
            cls: 0,
        }
    }

    fn identity_trace(n_blocks: usize, n_image: usize, n_text: usize) -> AttentionTrace {
        let t = tags(n_image, n_text);
        let n = t.len();
        let mut m = vec![0.0f32; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        AttentionTrace {
            self_blocks: vec![m; n_blocks],
            cross_text_to_image: Vec::new(),
            n_tokens: n,
            n_image,
            n_text,
            tags: t,
            cls: 0,
        }
    }

    #[test]
    fn identity_attention_keeps_all_mass_on_cls() {
        let map = attention_rollout(&identity_trace(3, 2, 2)).unwrap();
        assert!((map.relevance[0] - 1.0).abs() < 1e-12);
        assert!(map.relevance[1..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn one_block_uniform_rollout_closed_form() {
        // A' = (uniform + I)/2, so every non-CLS token gets 1/(2N)
        let tr = uniform_trace(1, 3, 2);
        let n = tr.n_tokens as f64;
        let map = attention_rollout(&tr).unwrap();
        // the uniform weights are stored in f32, so allow that rounding
        for &r in &map.relevance[1..] {
            assert!((r - 1.0 / (2.0 * n)).abs() < 1e-6, "{r}");
        }
        assert!((map.relevance[0] - (0.5 + 1.0 / (2.0 * n))).abs() < 1e-6);
    }

    #[test]
    fn rollout_matches_brute_force_product() {
        // random-ish stochastic matrices; oracle multiplies explicitly
        let t = tags(3, 3);
        let n = t.len();
        let mut blocks = Vec::new();
        let mut v = 0.13f32;
        for _ in 0..3 {
            let mut m = vec![0.0f32; n * n];
            for r in 0..n {
                let mut sum = 0.0;
                for c in 0..n {
                    v = (v * 31.0 + 7.0) % 1.0 + 0.01;
                    m[r * n + c] = v;
                    sum += v;
                }
                for c in 0..n {
                    m[r * n + c] /= sum;
                }
            }
            blocks.push(m);
        }
        let tr = AttentionTrace {
            self_blocks: blocks.clone(),
            cross_text_to_image: Vec::new(),
            n_tokens: n,
            n_image: 3,
            n_text: 3,
            tags: t,
            cls: 0,
        };
        let map = attention_rollout(&tr).unwrap();
        // oracle
        let mut r = vec![0.0f64; n * n];
        for i in 0..n {
            r[i * n + i] = 1.0;
        }
        for a in &blocks {
            let mut ap = vec![0.0f64; n * n];
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    ap[i * n + j] = a[i * n + j] as f64 + if i == j { 1.0 } else { 0.0 };
                    s += ap[i * n + j];
                }
                for j in 0..n {
                    ap[i * n + j] /= s;
                }
            }
            let mut next = vec![0.0f64; n * n];
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        next[i * n + j] += ap[i * n + k] * r[k * n + j];
                    }
                }
            }
            r = next;
        }
        for j in 0..n {
            assert!((map.relevance[j] - r[j]).abs() < 1e-6);
        }
        let row_sum: f64 = map.relevance.iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-4);
    }

    #[test]
    fn shares_reflect_token_counts_under_uniform_relevance() {
        let t = tags(196, 134);
        let map = RelevanceMap {
            relevance: vec![1.0; t.len()],
            tags: t,
            cls: 0,
        };
        let shares = modality_shares(&map).unwrap();
        assert!((shares.image - 196.0 / 330.0).abs() < 1e-9);
        let total = shares.image + shares.cc + shares.lab + shares.demographics;
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shares_concentrate_when_relevance_does() {
        let t = tags(2, 3); // labs are the text tokens here
        let mut rel = vec![0.0; t.len()];
        rel[3] = 0.7; // a lab token
        let map = RelevanceMap {
            relevance: rel,
            tags: t,
            cls: 0,
        };
        let shares = modality_shares(&map).unwrap();
        assert_eq!(shares.lab, 1.0);
        assert_eq!(shares.image, 0.0);
    }

    #[test]
    fn cross_map_uniform_is_flat_and_sums_to_one() {
        let t = tags(4, 2);
        let m = vec![0.25f32; 2 * 4];
        let tr = AttentionTrace {
            self_blocks: vec![vec![1.0 / 7.0; 49]],
            cross_text_to_image: vec![m.clone(), m],
            n_tokens: 7,
            n_image: 4,
            n_text: 2,
            tags: t,
            cls: 0,
        };
        let grid = cross_attention_map(&tr, 1).unwrap();
        assert_eq!(grid.len(), 4);
        for &g in &grid {
            assert!((g - 0.25).abs() < 1e-12);
        }
        assert!(cross_attention_map(&tr, 2).is_err());
    }

    #[test]
    fn top_quartile_mass_properties() {
        // uniform: top quarter of 8 tokens = 2 tokens = 0.25 of total
        let uniform = vec![0.125f64; 8];
        let m = top_quartile_mass(&uniform, 0.25).unwrap();
        assert!((m - 0.25).abs() < 1e-12);
        // one-hot
        let mut onehot = vec![0.0f64; 8];
        onehot[5] = 1.0;
        assert_eq!(top_quartile_mass(&onehot, 0.25).unwrap(), 1.0);
        // monotone in added top mass
        let mut boosted = uniform.clone();
        boosted[0] += 0.5;
        assert!(top_quartile_mass(&boosted, 0.25).unwrap() >= m);
    }
}
