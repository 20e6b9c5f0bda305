//! From files on disk to model-ready cases: manifest reading, date-based
//! splitting, train-only normalization statistics, image decoding and the
//! per-task lab handling (min-max scaling with missing markers for task one,
//! median imputation for task two).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mdt_core::record::{Case, ImagePlane, PatientRecord, Task};
use mdt_core::tokenize::{impute_median, normalize_lab, NormStats};

use crate::manifest;
use crate::mimg;
use crate::{augment, usage};

pub struct LoadedDataset {
    pub train: Vec<Case>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
    /// Computed on the training split only.
    pub stats: NormStats,
    pub train_records: Vec<PatientRecord>,
    pub val_records: Vec<PatientRecord>,
    pub test_records: Vec<PatientRecord>,
}

impl LoadedDataset {
    pub fn split(&self, name: &str) -> Result<&[Case]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(usage(format!("split must be train, val or test, got {other:?}"))),
        }
    }
}

fn load_images(dir: &Path, record: &PatientRecord, target: usize) -> Result<Vec<ImagePlane>> {
    let mut out = Vec::with_capacity(record.image_paths.len());
    for rel in &record.image_paths {
        let path: PathBuf = dir.join(rel);
        if !path.exists() {
            bail!("record {}: missing image file {}", record.id, path.display());
        }
        let img = mimg::read_file(&path)?;
        out.push(fit_image(&img, target)?);
    }
    Ok(out)
}

/// Adapt a stored raster to the model's input size. Matching sizes pass
/// through untouched; a 256-pixel source takes the deterministic
/// resize/center-crop path; anything else is bilinear-resized directly.
pub fn fit_image(img: &ImagePlane, target: usize) -> Result<ImagePlane> {
    if img.width == target && img.height == target {
        return Ok(img.clone());
    }
    if img.width == augment::RESIZE_SIZE
        && img.height == augment::RESIZE_SIZE
        && target == augment::CROP_SIZE
    {
        return augment::preprocess_eval_image(img);
    }
    augment::bilinear_resize(img, target, target)
}

fn build_case(
    dir: &Path,
    record: &PatientRecord,
    stats: &NormStats,
    task: Task,
    image_size: usize,
) -> Result<Case> {
    let images = load_images(dir, record, image_size)
        .with_context(|| format!("loading images for record {}", record.id))?;
    let lab = match task {
        Task::One => normalize_lab(&record.lab, stats)?,
        Task::Two => {
            let filled = impute_median(&record.lab, stats)?;
            let present: Vec<Option<f32>> = filled.into_iter().map(Some).collect();
            normalize_lab(&present, stats)?
        }
    };
    Ok(Case {
        id: record.id.clone(),
        images,
        cc: record.cc.clone(),
        lab,
        sex: record.sex as f32,
        age: record.age,
        labels: record.labels.iter().map(|&l| l as f32).collect(),
    })
}

/// Load a dataset directory produced by `gen-data` (or hand-assembled in the
/// same layout). Normalization statistics come from the training split only.
pub fn load_dataset(
    dir: &Path,
    task: Task,
    image_size: usize,
    class_count: usize,
    n_lab: usize,
) -> Result<LoadedDataset> {
    let records = manifest::read_manifest(&dir.join("manifest.jsonl"))?;
    for r in &records {
        r.validate(class_count, n_lab)
            .with_context(|| format!("validating record {}", r.id))?;
    }
    let splits = manifest::read_splits(&dir.join("splits.json"))?;
    let (train_records, val_records, test_records) = manifest::split_by_date(&records, &splits)?;
    if train_records.is_empty() || val_records.is_empty() || test_records.is_empty() {
        bail!(
            "degenerate split: {} train / {} val / {} test",
            train_records.len(),
            val_records.len(),
            test_records.len()
        );
    }
    let stats = NormStats::from_train(train_records.iter().map(|r| r.lab.as_slice()), n_lab);
    let build_all = |rs: &[PatientRecord]| -> Result<Vec<Case>> {
        rs.iter().map(|r| build_case(dir, r, &stats, task, image_size)).collect()
    };
    Ok(LoadedDataset {
        train: build_all(&train_records)?,
        val: build_all(&val_records)?,
        test: build_all(&test_records)?,
        stats,
        train_records,
        val_records,
        test_records,
    })
}

/// Build one case by id (any split) with the training statistics; used by
/// the visualization command.
pub fn load_case(dir: &Path, loaded: &LoadedDataset, task: Task, image_size: usize, id: &str) -> Result<Case> {
    let record = loaded
        .train_records
        .iter()
        .chain(&loaded.val_records)
        .chain(&loaded.test_records)
        .find(|r| r.id == id)
        .ok_or_else(|| usage(format!("unknown case id {id:?}")))?;
    build_case(dir, record, &loaded.stats, task, image_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, write_dataset, SyntheticSpec};
    use mdt_core::tokenize::NormStats;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("mdt-pipeline-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn stats_come_from_the_training_split_only() {
        // leak detector: train-only stats differ from train+test stats, and
        // the loader uses the former
        let spec = SyntheticSpec {
            n_records: 120,
            seed: 9,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        let dir = tmp_dir("leak");
        write_dataset(&dir, &g).unwrap();
        let loaded = load_dataset(&dir, Task::One, 32, 2, 8).unwrap();

        let train_stats =
            NormStats::from_train(loaded.train_records.iter().map(|r| r.lab.as_slice()), 8);
        let all_stats = NormStats::from_train(
            loaded
                .train_records
                .iter()
                .chain(&loaded.test_records)
                .map(|r| r.lab.as_slice()),
            8,
        );
        assert_eq!(loaded.stats, train_stats);
        assert_ne!(train_stats, all_stats, "pooled stats should differ");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn cases_carry_normalized_labs_and_float_labels() {
        let spec = SyntheticSpec {
            n_records: 60,
            seed: 2,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        let dir = tmp_dir("cases");
        write_dataset(&dir, &g).unwrap();
        let loaded = load_dataset(&dir, Task::One, 32, 2, 8).unwrap();
        for case in loaded.train.iter().chain(&loaded.val).chain(&loaded.test) {
            assert_eq!(case.images[0].width, 32);
            assert!(case.lab.iter().all(|&v| v == -1.0 || (0.0..=1.0).contains(&v)));
            assert!(case.labels.iter().all(|&l| l == 0.0 || l == 1.0));
        }
        // a missing lab value survives as the -1 marker somewhere
        assert!(loaded
            .train
            .iter()
            .any(|c| c.lab.contains(&-1.0)));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_image_files_are_reported_with_path() {
        let spec = SyntheticSpec {
            n_records: 20,
            seed: 4,
            ..SyntheticSpec::default()
        };
        let g = generate(&spec).unwrap();
        let dir = tmp_dir("missing");
        write_dataset(&dir, &g).unwrap();
        std::fs::remove_file(dir.join("images/case00000.mimg")).unwrap();
        let err = match load_dataset(&dir, Task::One, 32, 2, 8) {
            Ok(_) => panic!("missing image should fail the load"),
            Err(e) => e,
        };
        assert!(format!("{err:#}").contains("case00000"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
