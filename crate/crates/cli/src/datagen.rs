//! Synthetic multimodal dataset with a planted, class-specific decision rule.
//!
//! Every class draws one of three rule types per record:
//!
//! * cross-modal (probability `cross_modal_fraction`): the latent pair
//!   (z_img, z_txt) is uniform over {(1,1), (1,0), (0,1)} and the label is
//!   their conjunction. Either modality alone then has a Bayes AUROC of
//!   exactly 0.75 on noiseless data, while both together separate perfectly.
//! * image-only: the label equals z_img, and z_txt is an independent coin.
//! * text-only: symmetric.
//!
//! Rendering makes each latent a *location/identity* code rather than a
//! presence code, so pooled bag-of-features statistics do not expose it
//! directly: z_img = 1 lights a bright square motif on the class's own patch,
//! z_img = 0 lights the same motif on the class's reserved distractor patch
//! (a motif is always present). Likewise z_txt = 1 plants the class's cue
//! word in the chief complaint while z_txt = 0 plants the class's distractor
//! word (even classes), or places one lab item in a class-specific high value
//! band while z_txt = 0 places it in the mirrored low band (odd classes;
//! background values occupy the middle range, so the cue item is salient
//! either way and only the band's polarity carries the bit — the value, not
//! the item position, because the shared lab projection is
//! permutation-invariant). Either way each modality on its own still reveals
//! its latent exactly. The latent variables behind every record are written
//! to a sidecar file so tests can audit the construction.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mdt_core::record::{ChiefComplaint, ImagePlane, PatientRecord, Task};
use mdt_core::tape::Tape;
use mdt_core::tensor::Tensor;
use mdt_core::tokenize::{Vocabulary, FIRST_WORD_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{self, SplitBoundaries};
use crate::mimg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub class_count: usize,
    pub image_size: usize,
    pub patch: usize,
    pub vocab_size: usize,
    pub n_cc: usize,
    pub n_lab: usize,
    /// Fraction of the label signal decodable only by joining image and text.
    pub cross_modal_fraction: f64,
    /// Amplitude of the uniform jitter added to pixels and lab values.
    pub noise: f64,
    pub task: Task,
    /// Slices per record for the multi-slice task.
    pub slices: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> SyntheticSpec {
        SyntheticSpec {
            n_records: 256,
            class_count: 2,
            image_size: 32,
            patch: 16,
            vocab_size: 64,
            n_cc: 8,
            n_lab: 8,
            cross_modal_fraction: 0.7,
            noise: 0.05,
            task: Task::One,
            slices: 16,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            bail!("class_count must be positive");
        }
        if self.n_records == 0 {
            bail!("n_records must be positive");
        }
        if self.patch == 0 || self.image_size % self.patch != 0 {
            bail!("image size {} not divisible by patch {}", self.image_size, self.patch);
        }
        if !(0.0..=1.0).contains(&self.cross_modal_fraction) {
            bail!(
                "cross_modal_fraction {} outside [0, 1]",
                self.cross_modal_fraction
            );
        }
        if self.noise < 0.0 {
            bail!("noise must be nonnegative");
        }
        if self.vocab_size <= 2 + 2 * self.class_count {
            bail!(
                "vocab_size {} leaves no filler words after {} cue and distractor words",
                self.vocab_size,
                2 * self.class_count
            );
        }
        if self.n_cc == 0 || self.n_lab == 0 {
            bail!("n_cc and n_lab must be positive");
        }
        if self.task == Task::Two && self.slices == 0 {
            bail!("slices must be positive");
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        let side = self.image_size / self.patch;
        side * side
    }
}

/// Which rule produced a class's label for one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Cross,
    Image,
    Text,
}

/// Per-record latent variables, one entry per class, written alongside the
/// manifest so the planted signal can be audited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub id: String,
    pub rule: Vec<Rule>,
    pub z_img: Vec<u8>,
    pub z_txt: Vec<u8>,
}

pub struct Generated {
    pub records: Vec<PatientRecord>,
    /// Decoded slices parallel to `records`.
    pub images: Vec<Vec<ImagePlane>>,
    pub latents: Vec<LatentRecord>,
    pub vocab: Vocabulary,
    pub splits: SplitBoundaries,
}

/// Image patch lit by class `class`'s motif.
pub fn motif_patch_index(class: usize, n_patches: usize) -> usize {
    class % n_patches
}

/// Image patch lit instead when class `class`'s image latent is off. Kept
/// disjoint from every motif patch as long as `2 * class_count <= n_patches`.
pub fn distractor_patch_index(class: usize, class_count: usize, n_patches: usize) -> usize {
    (class + class_count) % n_patches
}

/// Word id planted by class `class`'s text cue (even classes only).
pub fn cue_word_id(class: usize) -> u32 {
    FIRST_WORD_ID + class as u32
}

/// Word id planted instead when class `class`'s text latent is off.
pub fn distractor_word_id(class: usize, class_count: usize) -> u32 {
    FIRST_WORD_ID + (class_count + class) as u32
}

/// Number of lab items that jointly carry one class's value-range cue.
/// One item keeps the cue out of reach of pooled bag statistics; more
/// redundancy makes the cue show up in the bag mean, which hands the
/// conjunction to models without any token-level fusion.
pub const CUE_LAB_REDUNDANCY: usize = 1;

/// Lab items carrying class `class`'s value-range cue (odd classes only):
/// `CUE_LAB_REDUNDANCY` consecutive items starting at `class % n_lab`.
/// Distinct odd classes get disjoint item groups while
/// `CUE_LAB_REDUNDANCY < 3` (odd classes are two apart).
pub fn cue_lab_indices(class: usize, n_lab: usize) -> [usize; CUE_LAB_REDUNDANCY] {
    core::array::from_fn(|k| (class + k) % n_lab)
}

/// Background lab values stay inside `[LAB_BACKGROUND_LO, LAB_BACKGROUND_HI)`;
/// cue bands sit outside that range on both sides so the cue item is salient
/// whether its latent is on or off. The lab projection is shared across
/// items, which makes lab tokens permutation-invariant: an item-keyed cue
/// would be invisible to the model, a value-range cue is not.
pub const LAB_BACKGROUND_LO: f32 = 0.25;
pub const LAB_BACKGROUND_HI: f32 = 0.75;

/// The value band `[lo, hi)` of odd class `class`'s cue item: a slice of the
/// high range [0.8, 1.0) when the text latent is on, of the low range
/// [0.0, 0.2) when it is off. The cue item is salient either way — only the
/// band's polarity encodes the latent — so negatives also supply gradient
/// toward attending the cue item (mirroring the motif/distractor patches and
/// cue/distractor words, where the carrier is always present and its
/// identity encodes the bit). Distinct odd classes get disjoint slices.
pub fn cue_lab_band(class: usize, class_count: usize, on: bool) -> (f32, f32) {
    let n_odd = (class_count / 2).max(1);
    let j = class / 2;
    let w = 0.2 / n_odd as f32;
    let base = if on { 0.8 } else { 0.0 };
    (base + j as f32 * w, base + (j + 1) as f32 * w)
}

fn date_string(day_offset: usize) -> String {
    // non-leap calendar starting 2021-01-01
    const MONTH_DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let mut day = day_offset;
    for (m, &len) in MONTH_DAYS.iter().enumerate() {
        if day < len {
            return format!("2021-{:02}-{:02}", m + 1, day + 1);
        }
        day -= len;
    }
    "2021-12-31".into()
}

fn render_slice(spec: &SyntheticSpec, z_img: &[u8], rng: &mut ChaCha8Rng) -> ImagePlane {
    let s = spec.image_size;
    let mut pixels: Vec<f32> = (0..s * s).map(|_| rng.gen_range(0.0..0.25)).collect();
    let grid = s / spec.patch;
    for (class, &z) in z_img.iter().enumerate() {
        let p = if z == 1 {
            motif_patch_index(class, spec.n_patches())
        } else {
            distractor_patch_index(class, z_img.len(), spec.n_patches())
        };
        let (pr, pc) = (p / grid, p % grid);
        for y in 0..spec.patch {
            for x in 0..spec.patch {
                pixels[(pr * spec.patch + y) * s + pc * spec.patch + x] = 1.0;
            }
        }
    }
    if spec.noise > 0.0 {
        for p in pixels.iter_mut() {
            *p = (*p + rng.gen_range(-spec.noise..=spec.noise) as f32).clamp(0.0, 1.0);
        }
    }
    ImagePlane::new(s, s, 1, pixels).expect("sized buffer")
}

pub fn generate(spec: &SyntheticSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut vocab = Vocabulary::new();
    for c in 0..spec.class_count {
        let id = vocab.insert(&format!("cue_{c}"));
        debug_assert_eq!(id, cue_word_id(c));
    }
    for c in 0..spec.class_count {
        let id = vocab.insert(&format!("dis_{c}"));
        debug_assert_eq!(id, distractor_word_id(c, spec.class_count));
    }
    let mut filler = 0usize;
    while vocab.len() < spec.vocab_size {
        vocab.insert(&format!("tok_{filler}"));
        filler += 1;
    }
    let filler_lo = FIRST_WORD_ID + 2 * spec.class_count as u32;
    let filler_hi = spec.vocab_size as u32;

    let f = spec.cross_modal_fraction;
    let mut records = Vec::with_capacity(spec.n_records);
    let mut images = Vec::with_capacity(spec.n_records);
    let mut latents = Vec::with_capacity(spec.n_records);

    for i in 0..spec.n_records {
        let id = format!("case{i:05}");
        let admission_date = date_string(rng.gen_range(0..300));

        let mut rule = Vec::with_capacity(spec.class_count);
        let mut z_img = Vec::with_capacity(spec.class_count);
        let mut z_txt = Vec::with_capacity(spec.class_count);
        let mut labels = Vec::with_capacity(spec.class_count);
        for _ in 0..spec.class_count {
            let u: f64 = rng.gen_range(0.0..1.0);
            let r = if u < f {
                Rule::Cross
            } else if u < f + (1.0 - f) / 2.0 {
                Rule::Image
            } else {
                Rule::Text
            };
            let (zi, zt, y) = match r {
                Rule::Cross => {
                    // uniform over {(1,1), (1,0), (0,1)}; label is the AND
                    let (zi, zt) = match rng.gen_range(0..3u8) {
                        0 => (1u8, 1u8),
                        1 => (1, 0),
                        _ => (0, 1),
                    };
                    (zi, zt, zi & zt)
                }
                Rule::Image => {
                    let zi = rng.gen_range(0..2u8);
                    let zt = rng.gen_range(0..2u8);
                    (zi, zt, zi)
                }
                Rule::Text => {
                    let zi = rng.gen_range(0..2u8);
                    let zt = rng.gen_range(0..2u8);
                    (zi, zt, zt)
                }
            };
            rule.push(r);
            z_img.push(zi);
            z_txt.push(zt);
            labels.push(y);
        }

        let n_slices = match spec.task {
            Task::One => 1,
            Task::Two => spec.slices,
        };
        let slices: Vec<ImagePlane> =
            (0..n_slices).map(|_| render_slice(spec, &z_img, &mut rng)).collect();
        let image_paths: Vec<String> = if n_slices == 1 {
            vec![format!("images/{id}.mimg")]
        } else {
            (0..n_slices).map(|s| format!("images/{id}_{s:02}.mimg")).collect()
        };

        // chief complaint: filler words, with one cue or distractor word
        // planted per even class
        let cc = match spec.task {
            Task::One => {
                let mut ids: Vec<u32> =
                    (0..spec.n_cc).map(|_| rng.gen_range(filler_lo..filler_hi)).collect();
                let mut slots: Vec<usize> = (0..spec.n_cc).collect();
                for k in (1..slots.len()).rev() {
                    let j = rng.gen_range(0..=k);
                    slots.swap(k, j);
                }
                let mut next_slot = 0;
                for c in (0..spec.class_count).step_by(2) {
                    if next_slot < slots.len() {
                        ids[slots[next_slot]] = if z_txt[c] == 1 {
                            cue_word_id(c)
                        } else {
                            distractor_word_id(c, spec.class_count)
                        };
                        next_slot += 1;
                    }
                }
                ChiefComplaint::WordIds(ids)
            }
            Task::Two => {
                let mut vals: Vec<f32> = (0..spec.n_cc).map(|_| rng.gen_range(0.0..1.0)).collect();
                for c in (0..spec.class_count).step_by(2) {
                    vals[c % spec.n_cc] = z_txt[c] as f32;
                }
                ChiefComplaint::Structured(vals)
            }
        };

        // labs: background values in the middle range; an odd class's cue
        // items sit in the class's high band when the text latent is on and
        // in the low band when it is off, readable from the values alone
        // (the shared lab projection makes item identity invisible);
        // occasional missing values elsewhere
        let mut cue_owner: Vec<Option<usize>> = vec![None; spec.n_lab];
        for c in (1..spec.class_count).step_by(2) {
            for j in cue_lab_indices(c, spec.n_lab) {
                cue_owner[j] = Some(c);
            }
        }
        let mut lab: Vec<Option<f32>> = Vec::with_capacity(spec.n_lab);
        for j in 0..spec.n_lab {
            let value = if let Some(c) = cue_owner[j] {
                let (lo, hi) = cue_lab_band(c, spec.class_count, z_txt[c] == 1);
                rng.gen_range(lo..hi)
            } else {
                rng.gen_range(LAB_BACKGROUND_LO..LAB_BACKGROUND_HI)
            };
            let jittered = (value + rng.gen_range(-spec.noise..=spec.noise) as f32).clamp(0.0, 1.0);
            let missing = cue_owner[j].is_none() && rng.gen_bool(0.05);
            lab.push(if missing { None } else { Some(jittered) });
        }

        records.push(PatientRecord {
            id: id.clone(),
            admission_date,
            image_paths,
            cc,
            lab,
            sex: rng.gen_range(0..2u8),
            age: rng.gen_range(20.0..90.0f32),
            labels,
        });
        images.push(slices);
        latents.push(LatentRecord { id, rule, z_img, z_txt });
    }

    // date boundaries at the 70% / 85% quantiles of the drawn dates
    let mut dates: Vec<String> = records.iter().map(|r| r.admission_date.clone()).collect();
    dates.sort();
    let quantile = |q_num: usize, q_den: usize| {
        let idx = (dates.len() * q_num).div_ceil(q_den).saturating_sub(1);
        dates[idx.min(dates.len() - 1)].clone()
    };
    let splits = SplitBoundaries {
        b1: quantile(70, 100),
        b2: quantile(85, 100),
    };

    Ok(Generated {
        records,
        images,
        latents,
        vocab,
        splits,
    })
}

/// Write a generated dataset under `out`: manifest.jsonl, latents.jsonl,
/// vocab.jsonl, splits.json and one MIMG file per image. Returns the
/// manifest path.
pub fn write_dataset(out: &Path, gen: &Generated) -> Result<PathBuf> {
    fs::create_dir_all(out.join("images"))
        .with_context(|| format!("creating {}", out.display()))?;
    for (record, slices) in gen.records.iter().zip(&gen.images) {
        for (path, img) in record.image_paths.iter().zip(slices) {
            mimg::write_file(&out.join(path), img)?;
        }
    }
    let manifest_path = out.join("manifest.jsonl");
    manifest::write_manifest(&manifest_path, &gen.records)?;
    manifest::write_vocab(&out.join("vocab.jsonl"), &gen.vocab)?;
    manifest::write_splits(&out.join("splits.json"), &gen.splits)?;
    let mut sidecar = String::new();
    for l in &gen.latents {
        sidecar.push_str(&serde_json::to_string(l)?);
        sidecar.push('\n');
    }
    fs::write(out.join("latents.jsonl"), sidecar)?;
    Ok(manifest_path)
}

pub fn read_latents(path: &Path) -> Result<Vec<LatentRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading latents {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}: malformed latent line", path.display(), lineno + 1))?,
        );
    }
    Ok(out)
}

/// Bayes-optimal score for one class from a chosen subset of the latents:
/// the empirical P(y = 1 | visible latents) over the table itself.
pub fn bayes_scores(
    latents: &[LatentRecord],
    labels: &[f32],
    class: usize,
    see_image: bool,
    see_text: bool,
) -> Vec<f32> {
    let key = |l: &LatentRecord| {
        (
            if see_image { l.z_img[class] } else { 2 },
            if see_text { l.z_txt[class] } else { 2 },
        )
    };
    let mut sums = std::collections::BTreeMap::new();
    for (l, &y) in latents.iter().zip(labels) {
        let e = sums.entry(key(l)).or_insert((0.0f64, 0usize));
        e.0 += y as f64;
        e.1 += 1;
    }
    latents
        .iter()
        .map(|l| {
            let (s, n) = sums[&key(l)];
            (s / n as f64) as f32
        })
        .collect()
}

/// Scores from a small logistic regression trained on explicit features by
/// plain gradient descent; used to certify that the planted signal is
/// linearly decodable from the latents.
pub fn logistic_probe_scores(
    features: &[Vec<f32>],
    labels: &[f32],
    steps: usize,
    lr: f32,
) -> Result<Vec<f32>> {
    let n = features.len();
    let d = features.first().map(|f| f.len()).unwrap_or(0);
    if n == 0 || d == 0 || labels.len() != n {
        bail!("probe wants matching non-empty features and labels");
    }
    let flat: Vec<f32> = features.iter().flatten().copied().collect();
    let x = Tensor::new(&[n, d], flat)?;
    let mut w = vec![0.0f32; d];
    let mut b = vec![0.0f32];
    for _ in 0..steps {
        let tape = Tape::new();
        let wt = Tensor::param(&[d, 1], w.clone())?;
        let bt = Tensor::param(&[1], b.clone())?;
        let logits = tape.add_bias(&tape.matmul(&x, &wt)?, &bt)?;
        let loss = tape.bce_with_logits(&logits, labels)?;
        let grads = tape.backward(&loss)?;
        if let Some(g) = grads.get(&wt) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
        if let Some(g) = grads.get(&bt) {
            b[0] -= lr * g[0];
        }
    }
    Ok(features
        .iter()
        .map(|f| f.iter().zip(&w).map(|(a, b)| a * b).sum::<f32>() + b[0])
        .collect())
}

/// Joint probe features for one class: [z_img, z_txt, z_img * z_txt].
pub fn joint_features(latents: &[LatentRecord], class: usize) -> Vec<Vec<f32>> {
    latents
        .iter()
        .map(|l| {
            let (i, t) = (l.z_img[class] as f32, l.z_txt[class] as f32);
            vec![i, t, i * t]
        })
        .collect()
}

/// Full latent cue variables for one class, rule indicators included. A
/// linear function of these decodes the label exactly, which certifies that
/// the planted signal exists.
pub fn full_latent_features(latents: &[LatentRecord], class: usize) -> Vec<Vec<f32>> {
    latents
        .iter()
        .map(|l| {
            let (i, t) = (l.z_img[class] as f32, l.z_txt[class] as f32);
            vec![
                (l.rule[class] == Rule::Cross) as u8 as f32 * i * t,
                (l.rule[class] == Rule::Image) as u8 as f32 * i,
                (l.rule[class] == Rule::Text) as u8 as f32 * t,
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdt_core::metrics::auroc;
    use sha2::{Digest, Sha256};

    fn class_labels(records: &[PatientRecord], class: usize) -> Vec<f32> {
        records.iter().map(|r| r.labels[class] as f32).collect()
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = SyntheticSpec {
            n_records: 64,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.latents, b.latents);
        let hash = |g: &Generated| {
            let mut h = Sha256::new();
            for (r, slices) in g.records.iter().zip(&g.images) {
                h.update(serde_json::to_string(r).unwrap());
                for img in slices {
                    h.update(mimg::encode(img));
                }
            }
            h.finalize()
        };
        assert_eq!(hash(&a), hash(&b));

        let c = generate(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn split_counts_sum_to_n() {
        let spec = SyntheticSpec {
            n_records: 200,
            seed: 3,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        let (train, val, test) = manifest::split_by_date(&g.records, &g.splits).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), 200);
        assert!(train.len() >= 120, "train split too small: {}", train.len());
        assert!(!val.is_empty() && !test.is_empty());
    }

    #[test]
    fn fully_cross_modal_signal_has_the_constructed_bayes_bounds() {
        let spec = SyntheticSpec {
            n_records: 2000,
            cross_modal_fraction: 1.0,
            noise: 0.0,
            seed: 11,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        for class in 0..2 {
            let labels = class_labels(&g.records, class);
            let joint = bayes_scores(&g.latents, &labels, class, true, true);
            assert!(auroc(&joint, &labels).unwrap() > 0.999);
            let image_only = bayes_scores(&g.latents, &labels, class, true, false);
            let a = auroc(&image_only, &labels).unwrap();
            assert!((a - 0.75).abs() < 0.03, "image-only Bayes {a}");
            let text_only = bayes_scores(&g.latents, &labels, class, false, true);
            let a = auroc(&text_only, &labels).unwrap();
            assert!((a - 0.75).abs() < 0.03, "text-only Bayes {a}");
        }
    }

    #[test]
    fn logistic_probe_recovers_the_signal_and_respects_modality_bounds() {
        let spec = SyntheticSpec {
            n_records: 1200,
            cross_modal_fraction: 0.7,
            noise: 0.0,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        let labels = class_labels(&g.records, 0);
        let full = logistic_probe_scores(&full_latent_features(&g.latents, 0), &labels, 400, 0.5).unwrap();
        assert!(auroc(&full, &labels).unwrap() > 0.99, "full-latent probe too weak");

        // even without the rule indicators, seeing both modalities beats the
        // best single-modality predictor by a clear margin
        let joint = logistic_probe_scores(&joint_features(&g.latents, 0), &labels, 400, 0.5).unwrap();
        let joint_auroc = auroc(&joint, &labels).unwrap();

        // restricted to the image latent, the probe sits at the constructed
        // single-modality Bayes bound
        let image_feats: Vec<Vec<f32>> =
            g.latents.iter().map(|l| vec![l.z_img[0] as f32]).collect();
        let restricted = logistic_probe_scores(&image_feats, &labels, 400, 0.5).unwrap();
        let probe_auroc = auroc(&restricted, &labels).unwrap();
        let bound = auroc(&bayes_scores(&g.latents, &labels, 0, true, false), &labels).unwrap();
        assert!(
            (probe_auroc - bound).abs() < 0.05,
            "restricted probe {probe_auroc} vs bound {bound}"
        );
        assert!(bound < 0.9, "single modality should not separate the data");
        assert!(
            joint_auroc > bound + 0.05,
            "joint probe {joint_auroc} should beat the single-modality bound {bound}"
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let ok = SyntheticSpec::default();
        assert!(generate(&SyntheticSpec { class_count: 0, ..ok.clone() }).is_err());
        assert!(generate(&SyntheticSpec { image_size: 33, ..ok.clone() }).is_err());
        assert!(generate(&SyntheticSpec { cross_modal_fraction: 1.5, ..ok.clone() }).is_err());
        assert!(generate(&SyntheticSpec { vocab_size: 3, ..ok }).is_err());
    }

    #[test]
    fn task_two_emits_slice_stacks() {
        let spec = SyntheticSpec {
            n_records: 4,
            task: Task::Two,
            slices: 16,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        assert!(g.images.iter().all(|s| s.len() == 16));
        assert!(g.records.iter().all(|r| r.image_paths.len() == 16));
        assert!(g
            .records
            .iter()
            .all(|r| matches!(r.cc, ChiefComplaint::Structured(_))));
    }
}
