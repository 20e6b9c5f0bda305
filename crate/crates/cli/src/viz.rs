//! Attention attribution artifacts for one case: modality shares, per-item
//! lab and word importance tables, a pixel-level relevance heatmap and
//! cross-attention maps for the top-ranked chief-complaint words.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mdt_core::interpret::{
    attention_rollout, cross_attention_map, modality_shares, normalized_group_scores,
    AttentionTrace, RelevanceMap,
};
use mdt_core::model::{AttnSink, ForwardCtx, MdtModel};
use mdt_core::record::{Case, ChiefComplaint, Modality};
use mdt_core::tokenize::{pad_or_truncate_cc, Vocabulary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::manifest;
use crate::mimg;
use crate::pipeline::{load_case, load_dataset};
use crate::runs::{load_model, BuiltModel};
use crate::usage;

/// Run one eval-mode forward pass over the case's first slice with attention
/// capture enabled and assemble the trace.
pub fn capture_trace(model: &MdtModel, case: &Case) -> Result<AttentionTrace> {
    let mut single = case.clone();
    single.images.truncate(1);
    let sink = AttnSink::new();
    let tape = mdt_core::Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, Some(&sink));
    model.forward(&tape, &single, &mut ctx)?;
    let tags = model.bag_tags(&single)?;
    let records = sink.take();
    Ok(AttentionTrace::from_records(&records, &tags)?)
}

/// Nearest-neighbor upsample of a min-max-normalized square grid.
pub fn grid_to_image(grid: &[f64], side: usize, out_size: usize) -> Result<Vec<f32>> {
    anyhow::ensure!(grid.len() == side * side, "grid is not {side}x{side}");
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let cell = out_size / side;
    anyhow::ensure!(cell >= 1, "output {out_size} smaller than the grid side {side}");
    let mut pixels = vec![0.0f32; out_size * out_size];
    for y in 0..out_size {
        for x in 0..out_size {
            let g = (y / cell).min(side - 1) * side + (x / cell).min(side - 1);
            pixels[y * out_size + x] = ((grid[g] - lo) / range) as f32;
        }
    }
    Ok(pixels)
}

fn ramp(v: f32) -> (u8, u8, u8) {
    // two-point ramp from deep violet to bright yellow
    let lerp = |a: f32, b: f32| (a + (b - a) * v.clamp(0.0, 1.0)) as u8;
    (lerp(68.0, 253.0), lerp(1.0, 231.0), lerp(84.0, 37.0))
}

/// A grid rendered as SVG cells plus a vertical color bar with the value
/// range printed at its ends.
pub fn grid_svg(grid: &[f64], side: usize) -> String {
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let cell = 24;
    let w = side * cell;
    let bar_x = w + 16;
    let total_w = bar_x + 64;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total_w}\" height=\"{h}\">\n",
        h = side * cell
    );
    for y in 0..side {
        for x in 0..side {
            let v = ((grid[y * side + x] - lo) / range) as f32;
            let (r, g, b) = ramp(v);
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({r},{g},{b})\"/>\n",
                x * cell,
                y * cell
            ));
        }
    }
    // color bar, top = max
    let bar_h = side * cell;
    for i in 0..bar_h {
        let v = 1.0 - i as f32 / bar_h as f32;
        let (r, g, b) = ramp(v);
        svg.push_str(&format!(
            "<rect x=\"{bar_x}\" y=\"{i}\" width=\"12\" height=\"1\" fill=\"rgb({r},{g},{b})\"/>\n"
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{tx}\" y=\"10\" font-size=\"10\">{hi:.4}</text>\n<text x=\"{tx}\" y=\"{by}\" font-size=\"10\">{lo:.4}</text>\n</svg>\n",
        tx = bar_x + 16,
        by = bar_h - 2
    ));
    svg
}

fn write_grid(out: &Path, stem: &str, grid: &[f64], side: usize, image_size: usize) -> Result<()> {
    let pixels = grid_to_image(grid, side, image_size)?;
    let img = mdt_core::record::ImagePlane::new(image_size, image_size, 1, pixels)?;
    mimg::write_file(&out.join(format!("{stem}.mimg")), &img)?;
    fs::write(out.join(format!("{stem}.svg")), grid_svg(grid, side))?;
    Ok(())
}

fn word_of(vocab: &Vocabulary, id: u32) -> String {
    match id {
        0 => "<pad>".into(),
        1 => "<unk>".into(),
        _ => vocab
            .iter()
            .find(|&(_, vid)| vid == id)
            .map(|(w, _)| w.to_string())
            .unwrap_or_else(|| format!("<id:{id}>")),
    }
}

/// Chief-complaint word ids in bag order for a case, if the model keeps the
/// complaint tokenized.
fn bag_word_ids(cfg: &RunConfig, case: &Case) -> Option<Vec<u32>> {
    match &case.cc {
        ChiefComplaint::WordIds(ids) if !cfg.mask_pad => Some(pad_or_truncate_cc(ids, cfg.n_cc)),
        _ => None,
    }
}

pub struct VizArtifacts {
    pub shares: mdt_core::interpret::ModalityShares,
    pub relevance: RelevanceMap,
    /// (bag position, word id, rollout score) of the top-ranked words.
    pub top_words: Vec<(usize, u32, f64)>,
}

pub fn cmd_viz(
    cfg: &RunConfig,
    data_dir: &Path,
    model_dir: &Path,
    case_id: &str,
    out: &Path,
) -> Result<VizArtifacts> {
    if cfg.model != "irene" {
        return Err(usage(format!(
            "viz needs an irene run, this model directory holds {:?}",
            cfg.model
        )));
    }
    if cfg.pooling != "cls" {
        return Err(usage(
            "attention rollout needs a model trained with pooling=cls".to_string(),
        ));
    }
    let data = load_dataset(data_dir, cfg.task()?, cfg.image_size, cfg.class_count, cfg.n_lab)?;
    let case = load_case(data_dir, &data, cfg.task()?, cfg.image_size, case_id)?;
    let model = match load_model(cfg, model_dir)? {
        BuiltModel::Irene(m) => m,
        _ => unreachable!("checked above"),
    };

    let trace = capture_trace(&model, &case)?;
    let relevance = attention_rollout(&trace)?;
    let shares = modality_shares(&relevance)?;

    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;

    fs::write(
        out.join("shares.csv"),
        format!(
            "modality,share\nimage,{}\ncc,{}\nlab,{}\ndemographics,{}\n",
            shares.image, shares.cc, shares.lab, shares.demographics
        ),
    )?;

    let lab_scores = normalized_group_scores(&relevance, Modality::Lab);
    let lab_raw = mdt_core::interpret::group_scores(&relevance, Modality::Lab);
    let mut lab_csv = String::from("index,score,normalized\n");
    for (i, (raw, norm)) in lab_raw.iter().zip(&lab_scores).enumerate() {
        lab_csv.push_str(&format!("{i},{raw},{norm}\n"));
    }
    fs::write(out.join("lab_importance.csv"), lab_csv)?;

    // word table + top-k cross-attention maps
    let vocab = manifest::read_vocab(&data_dir.join("vocab.jsonl"))?;
    let cc_raw = mdt_core::interpret::group_scores(&relevance, Modality::Cc);
    let cc_norm = normalized_group_scores(&relevance, Modality::Cc);
    let word_ids = bag_word_ids(cfg, &case);
    let mut word_csv = String::from("position,word,score,normalized\n");
    for (i, (raw, norm)) in cc_raw.iter().zip(&cc_norm).enumerate() {
        let word = word_ids
            .as_ref()
            .map(|ids| word_of(&vocab, ids[i]))
            .unwrap_or_else(|| format!("component_{i}"));
        word_csv.push_str(&format!("{i},{word},{raw},{norm}\n"));
    }
    fs::write(out.join("word_importance.csv"), word_csv)?;

    let side = cfg.image_size / cfg.patch;
    let image_scores = mdt_core::interpret::group_scores(&relevance, Modality::Image);
    write_grid(out, "heatmap_relevance", &image_scores, side, cfg.image_size)?;

    let mut ranked: Vec<(usize, f64)> =
        cc_raw.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut top_words = Vec::new();
    for (rank, &(pos, score)) in ranked.iter().take(cfg.top_words).enumerate() {
        let map = cross_attention_map(&trace, pos)?;
        let word_id = word_ids.as_ref().map(|ids| ids[pos]).unwrap_or(pos as u32);
        let word = word_ids
            .as_ref()
            .map(|ids| word_of(&vocab, ids[pos]))
            .unwrap_or_else(|| format!("component_{pos}"));
        write_grid(out, &format!("heatmap_word{}_{word}", rank + 1), &map, side, cfg.image_size)
            .with_context(|| format!("rendering cross-attention map for {word}"))?;
        top_words.push((pos, word_id, score));
    }

    println!(
        "case {case_id}: image share {:.3}, cc share {:.3}, lab share {:.3}",
        shares.image, shares.cc, shares.lab
    );
    Ok(VizArtifacts {
        shares,
        relevance,
        top_words,
    })
}
