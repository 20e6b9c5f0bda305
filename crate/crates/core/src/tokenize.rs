//! Modality tokenizers: image patches to embedded tokens, and clinical text
//! (chief complaint, labs, sex, age) to one concatenated text-token bag.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamHandle, ParamSet};
use crate::record::{Case, ChiefComplaint, ImagePlane, Modality, Task, TokenSequence};
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
/// First id available for ordinary words.
pub const FIRST_WORD_ID: u32 = 2;
/// Chief-complaint length for the pulmonary task.
pub const TASK1_CC_LEN: usize = 40;
pub const TASK1_LAB_LEN: usize = 92;
pub const TASK2_CC_LEN: usize = 16;
pub const TASK2_LAB_LEN: usize = 19;

/// Dense word-id mapping with reserved PAD/UNK entries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    entries: Vec<(String, u32)>,
}

impl Vocabulary {
    pub fn new() -> Vocabulary {
        Vocabulary { entries: Vec::new() }
    }

    /// Insert words in order; ids are assigned densely starting at 2.
    pub fn insert(&mut self, word: &str) -> u32 {
        if let Some(id) = self.id_of(word) {
            return id;
        }
        let id = FIRST_WORD_ID + self.entries.len() as u32;
        self.entries.push((word.into(), id));
        id
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.entries.iter().find(|(w, _)| w == word).map(|(_, id)| *id)
    }

    pub fn lookup(&self, word: &str) -> u32 {
        self.id_of(word).unwrap_or(UNK_ID)
    }

    pub fn len(&self) -> usize {
        self.entries.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK always exist
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.entries.iter().map(|(w, id)| (w.as_str(), *id))
    }
}

/// Per-item normalization statistics, computed on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
    pub median: Vec<f32>,
}

impl NormStats {
    /// Derive stats from training-split lab vectors. Missing entries are
    /// ignored; an item with no present value gets min=max=median=0.
    pub fn from_train<'a>(labs: impl Iterator<Item = &'a [Option<f32>]>, n_items: usize) -> NormStats {
        let mut cols: Vec<Vec<f32>> = vec![Vec::new(); n_items];
        for lab in labs {
            for (i, v) in lab.iter().enumerate().take(n_items) {
                if let Some(v) = v {
                    cols[i].push(*v);
                }
            }
        }
        let mut min = vec![0.0; n_items];
        let mut max = vec![0.0; n_items];
        let mut median = vec![0.0; n_items];
        for (i, col) in cols.iter_mut().enumerate() {
            if col.is_empty() {
                continue;
            }
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            min[i] = col[0];
            max[i] = col[col.len() - 1];
            let mid = col.len() / 2;
            median[i] = if col.len() % 2 == 1 {
                col[mid]
            } else {
                0.5 * (col[mid - 1] + col[mid])
            };
        }
        NormStats { min, max, median }
    }
}

/// Min-max scaling to [0, 1] with -1 marking missing values. An item whose
/// training min equals its max maps every present value to 0; out-of-range
/// test values are clipped.
pub fn normalize_lab(values: &[Option<f32>], stats: &NormStats) -> Result<Vec<f32>> {
    if values.len() != stats.min.len() {
        return Err(Error::shape(
            "normalize_lab",
            format!("{} values vs {} stat items", values.len(), stats.min.len()),
        ));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            None => -1.0,
            Some(v) => {
                let range = stats.max[i] - stats.min[i];
                if range <= 0.0 {
                    0.0
                } else {
                    ((v - stats.min[i]) / range).clamp(0.0, 1.0)
                }
            }
        })
        .collect())
}

/// Replace missing entries with training medians; present entries untouched.
pub fn impute_median(values: &[Option<f32>], stats: &NormStats) -> Result<Vec<f32>> {
    if values.len() != stats.median.len() {
        return Err(Error::shape(
            "impute_median",
            format!("{} values vs {} medians", values.len(), stats.median.len()),
        ));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, v)| v.unwrap_or(stats.median[i]))
        .collect())
}

/// Exactly `len` ids: truncation keeps the first `len`, padding appends PAD.
pub fn pad_or_truncate_cc(ids: &[u32], len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = ids.iter().take(len).copied().collect();
    out.resize(len, PAD_ID);
    out
}

/// Learned patch embedding with positional table.
pub struct ImageEmbedder {
    pub patch: usize,
    pub dim: usize,
    pub channels: usize,
    w: ParamHandle,
    b: ParamHandle,
    pos: ParamHandle,
    dropout: f32,
}

impl ImageEmbedder {
    pub fn build(
        params: &mut ParamSet,
        prefix: &str,
        image_size: usize,
        patch: usize,
        channels: usize,
        dim: usize,
        dropout: f32,
        rng: &mut ChaCha8Rng,
    ) -> Result<ImageEmbedder> {
        if image_size % patch != 0 {
            return Err(Error::shape(
                "embed_image",
                format!("image size {image_size} not divisible by patch {patch}"),
            ));
        }
        let n_patches = (image_size / patch) * (image_size / patch);
        let ppc = patch * patch * channels;
        Ok(ImageEmbedder {
            patch,
            dim,
            channels,
            w: params.weight(&format!("{prefix}.patch_w"), &[ppc, dim], rng)?,
            b: params.zeros(&format!("{prefix}.patch_b"), &[dim])?,
            pos: params.weight(&format!("{prefix}.pos"), &[n_patches, dim], rng)?,
            dropout,
        })
    }

    /// Tokens = linear(flattened 16x16 patches) + positional rows, dropout in
    /// training mode only.
    pub fn embed(
        &self,
        tape: &Tape,
        image: &ImagePlane,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<TokenSequence> {
        let p = self.patch;
        if image.height % p != 0 || image.width % p != 0 {
            return Err(Error::shape(
                "embed_image",
                format!("{}x{} not divisible by patch {}", image.height, image.width, p),
            ));
        }
        if image.channels != self.channels {
            return Err(Error::shape(
                "embed_image",
                format!("{} channels, embedder wants {}", image.channels, self.channels),
            ));
        }
        let rows = image.height / p;
        let cols = image.width / p;
        let n = rows * cols;
        let pos = self.pos.borrow().clone();
        if pos.shape()[0] != n {
            return Err(Error::shape(
                "embed_image",
                format!("{} patches but positional table has {} rows", n, pos.shape()[0]),
            ));
        }
        let ppc = p * p * image.channels;
        let mut flat = vec![0.0f32; n * ppc];
        let stride = image.width * image.channels;
        for pr in 0..rows {
            for pc in 0..cols {
                let t = pr * cols + pc;
                for y in 0..p {
                    let src = (pr * p + y) * stride + pc * p * image.channels;
                    let dst = t * ppc + y * p * image.channels;
                    flat[dst..dst + p * image.channels]
                        .copy_from_slice(&image.pixels[src..src + p * image.channels]);
                }
            }
        }
        let patches = Tensor::new(&[n, ppc], flat)?;
        let proj = tape.matmul(&patches, &self.w.borrow())?;
        let proj = tape.add_bias(&proj, &self.b.borrow())?;
        let mut tokens = tape.add(&proj, &pos)?;
        if train && self.dropout > 0.0 {
            tokens = tape.dropout(&tokens, self.dropout, rng)?;
        }
        TokenSequence::new(tokens, vec![Modality::Image; n])
    }
}

/// Clinical-text embedding: chief complaint, labs, sex and age concatenated
/// into one bag in that order.
pub struct TextEmbedder {
    pub task: Task,
    pub dim: usize,
    pub n_cc: usize,
    pub n_lab: usize,
    /// When false, the chief complaint collapses to one averaged token and
    /// the lab vector to one jointly-projected token.
    pub tokenized: bool,
    /// When true, PAD chief-complaint positions are dropped from the bag.
    pub mask_pad: bool,
    vocab_emb: Option<ParamHandle>,
    cc_w: Option<ParamHandle>,
    cc_b: Option<ParamHandle>,
    lab_w: ParamHandle,
    lab_b: ParamHandle,
    lab_full_w: Option<ParamHandle>,
    lab_full_b: Option<ParamHandle>,
    sex_w: ParamHandle,
    sex_b: ParamHandle,
    age_w: ParamHandle,
    age_b: ParamHandle,
}

pub struct TextEmbedderConfig {
    pub task: Task,
    pub dim: usize,
    pub n_cc: usize,
    pub n_lab: usize,
    pub vocab_size: usize,
    pub tokenized: bool,
    pub mask_pad: bool,
}

impl TextEmbedder {
    pub fn build(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &TextEmbedderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<TextEmbedder> {
        let d = cfg.dim;
        let (vocab_emb, cc_w, cc_b) = match cfg.task {
            Task::One => (
                Some(params.weight(&format!("{prefix}.vocab_emb"), &[cfg.vocab_size, d], rng)?),
                None,
                None,
            ),
            Task::Two => (
                None,
                Some(params.weight(&format!("{prefix}.cc_w"), &[1, d], rng)?),
                Some(params.zeros(&format!("{prefix}.cc_b"), &[d])?),
            ),
        };
        let (lab_full_w, lab_full_b) = if cfg.tokenized {
            (None, None)
        } else {
            (
                Some(params.weight(&format!("{prefix}.lab_full_w"), &[cfg.n_lab, d], rng)?),
                Some(params.zeros(&format!("{prefix}.lab_full_b"), &[d])?),
            )
        };
        Ok(TextEmbedder {
            task: cfg.task,
            dim: d,
            n_cc: cfg.n_cc,
            n_lab: cfg.n_lab,
            tokenized: cfg.tokenized,
            mask_pad: cfg.mask_pad,
            vocab_emb,
            cc_w,
            cc_b,
            lab_w: params.weight(&format!("{prefix}.lab_w"), &[1, d], rng)?,
            lab_b: params.zeros(&format!("{prefix}.lab_b"), &[d])?,
            lab_full_w,
            lab_full_b,
            sex_w: params.weight(&format!("{prefix}.sex_w"), &[1, d], rng)?,
            sex_b: params.zeros(&format!("{prefix}.sex_b"), &[d])?,
            age_w: params.weight(&format!("{prefix}.age_w"), &[1, d], rng)?,
            age_b: params.zeros(&format!("{prefix}.age_b"), &[d])?,
        })
    }

    /// Chief-complaint token rows (without lab/sex/age).
    fn cc_tokens(&self, tape: &Tape, case: &Case) -> Result<(Tensor, Vec<Modality>)> {
        match (&case.cc, self.task) {
            (ChiefComplaint::WordIds(ids), Task::One) => {
                let padded = pad_or_truncate_cc(ids, self.n_cc);
                let table = self.vocab_emb.as_ref().unwrap().borrow().clone();
                let kept: Vec<usize> = if self.mask_pad {
                    let live: Vec<usize> = padded
                        .iter()
                        .filter(|&&id| id != PAD_ID)
                        .map(|&id| id as usize)
                        .collect();
                    if live.is_empty() {
                        vec![PAD_ID as usize] // keep one token so the bag is never empty
                    } else {
                        live
                    }
                } else {
                    padded.iter().map(|&id| id as usize).collect()
                };
                let tokens = tape.embedding(&table, &kept)?;
                let tags = vec![Modality::Cc; kept.len()];
                if self.tokenized {
                    Ok((tokens, tags))
                } else {
                    Ok((tape.mean_rows(&tokens)?, vec![Modality::Cc]))
                }
            }
            (ChiefComplaint::Structured(vals), Task::Two) => {
                if vals.len() != self.n_cc {
                    return Err(Error::shape(
                        "embed_clinical_text",
                        format!("{} cc components, expected {}", vals.len(), self.n_cc),
                    ));
                }
                let col = Tensor::new(&[vals.len(), 1], vals.clone())?;
                let tokens = tape.matmul(&col, &self.cc_w.as_ref().unwrap().borrow())?;
                let tokens = tape.add_bias(&tokens, &self.cc_b.as_ref().unwrap().borrow())?;
                if self.tokenized {
                    Ok((tokens, vec![Modality::Cc; vals.len()]))
                } else {
                    Ok((tape.mean_rows(&tokens)?, vec![Modality::Cc]))
                }
            }
            (cc, task) => Err(Error::Contract(format!(
                "chief complaint {:?} does not match task {:?}",
                core::mem::discriminant(cc),
                task
            ))),
        }
    }

    /// Full text bag in order [cc, lab, sex, age].
    pub fn embed(&self, tape: &Tape, case: &Case) -> Result<TokenSequence> {
        if case.lab.len() != self.n_lab {
            return Err(Error::shape(
                "embed_clinical_text",
                format!("{} lab values, expected {}", case.lab.len(), self.n_lab),
            ));
        }
        let (cc_tokens, mut tags) = self.cc_tokens(tape, case)?;

        let lab_tokens = if self.tokenized {
            // one shared scalar -> D projection per lab item
            let col = Tensor::new(&[case.lab.len(), 1], case.lab.clone())?;
            let t = tape.matmul(&col, &self.lab_w.borrow())?;
            let t = tape.add_bias(&t, &self.lab_b.borrow())?;
            tags.extend(core::iter::repeat(Modality::Lab).take(case.lab.len()));
            t
        } else {
            let row = Tensor::new(&[1, case.lab.len()], case.lab.clone())?;
            let t = tape.matmul(&row, &self.lab_full_w.as_ref().unwrap().borrow())?;
            let t = tape.add_bias(&t, &self.lab_full_b.as_ref().unwrap().borrow())?;
            tags.push(Modality::Lab);
            t
        };

        let sex_in = Tensor::new(&[1, 1], vec![case.sex])?;
        let sex_token = tape.add_bias(
            &tape.matmul(&sex_in, &self.sex_w.borrow())?,
            &self.sex_b.borrow(),
        )?;
        tags.push(Modality::Sex);

        // raw years scaled to about [0, 1] before the projection
        let age_in = Tensor::new(&[1, 1], vec![case.age / 100.0])?;
        let age_token = tape.add_bias(
            &tape.matmul(&age_in, &self.age_w.borrow())?,
            &self.age_b.borrow(),
        )?;
        tags.push(Modality::Age);

        let tokens = tape.concat_rows(&[&cc_tokens, &lab_tokens, &sex_token, &age_token])?;
        TokenSequence::new(tokens, tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_or_truncate_contract() {
        let long: Vec<u32> = (1..=45).collect();
        let t = pad_or_truncate_cc(&long, 40);
        assert_eq!(t.len(), 40);
        assert_eq!(t[39], 40);

        let short = [5, 6, 7];
        let t = pad_or_truncate_cc(&short, 40);
        assert_eq!(t.len(), 40);
        assert_eq!(&t[..3], &[5, 6, 7]);
        assert!(t[3..].iter().all(|&id| id == PAD_ID));

        assert_eq!(pad_or_truncate_cc(&[], 40), vec![PAD_ID; 40]);
    }

    #[test]
    fn normalize_endpoints_and_missing() {
        let stats = NormStats {
            min: vec![2.0, 0.0],
            max: vec![6.0, 0.0],
            median: vec![4.0, 0.0],
        };
        let vals = normalize_lab(&[Some(2.0), Some(123.0)], &stats).unwrap();
        assert_eq!(vals[0], 0.0);
        assert_eq!(vals[1], 0.0); // degenerate min==max rule
        let vals = normalize_lab(&[Some(6.0), None], &stats).unwrap();
        assert_eq!(vals[0], 1.0);
        assert_eq!(vals[1], -1.0);
        let vals = normalize_lab(&[Some(3.0), None], &stats).unwrap();
        assert!((vals[0] - 0.25).abs() < 1e-7);
        // clipping outside the training range
        let vals = normalize_lab(&[Some(100.0), None], &stats).unwrap();
        assert_eq!(vals[0], 1.0);
    }

    #[test]
    fn median_imputation() {
        let stats = NormStats {
            min: vec![0.0],
            max: vec![1.0],
            median: vec![2.0],
        };
        assert_eq!(impute_median(&[Some(5.0)], &stats).unwrap(), vec![5.0]);
        assert_eq!(impute_median(&[None], &stats).unwrap(), vec![2.0]);
    }

    #[test]
    fn median_from_train_is_sort_based() {
        let labs: Vec<Vec<Option<f32>>> =
            vec![vec![Some(1.0)], vec![Some(100.0)], vec![Some(2.0)]];
        let stats = NormStats::from_train(labs.iter().map(|l| l.as_slice()), 1);
        assert_eq!(stats.median[0], 2.0);
        assert_eq!(stats.min[0], 1.0);
        assert_eq!(stats.max[0], 100.0);
    }

    #[test]
    fn vocabulary_dense_ids() {
        let mut v = Vocabulary::new();
        assert_eq!(v.insert("cough"), 2);
        assert_eq!(v.insert("fever"), 3);
        assert_eq!(v.insert("cough"), 2);
        assert_eq!(v.lookup("unknown-word"), UNK_ID);
        assert_eq!(v.len(), 4);
    }
}
