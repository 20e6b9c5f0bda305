//! Command implementations: dataset generation, training runs, evaluation
//! reports and the full ablation table. Every command writes its resolved
//! configuration next to its outputs, and all artifacts are deterministic
//! functions of that file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mdt_core::baselines::{
    late_fusion_predict, AblationSpec, EarlyFusionConfig, EarlyFusionModel, TextOnlyModel,
    ViTConfig, ViTModel,
};
use mdt_core::metrics::{eval_report, BootstrapCi, EvalReport};
use mdt_core::model::MdtModel;
use mdt_core::record::Case;
use mdt_core::train::{predict, train, EpochLog, TrainConfig, TrainResult, TrainableModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::datagen;
use crate::pipeline::{load_dataset, LoadedDataset};
use crate::{usage, util};

pub const MODEL_NAMES: [&str; 4] = ["irene", "image-only", "early-fusion", "late-fusion"];

/// A model selected by the `model` (and, for irene, `ablation`) config keys.
pub enum BuiltModel {
    Irene(MdtModel),
    ImageOnly(ViTModel),
    EarlyFusion(EarlyFusionModel),
    LateFusion { image: ViTModel, text: TextOnlyModel },
}

impl BuiltModel {
    pub fn label(cfg: &RunConfig) -> String {
        if cfg.model == "irene" {
            format!("irene/{}", cfg.ablation)
        } else {
            cfg.model.clone()
        }
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<BuiltModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mdt_cfg = cfg.mdt_config()?;
    Ok(match cfg.model.as_str() {
        "irene" => BuiltModel::Irene(MdtModel::build(mdt_cfg, &mut rng)?),
        "image-only" => BuiltModel::ImageOnly(ViTModel::build(ViTConfig::from_mdt(&mdt_cfg), &mut rng)?),
        "early-fusion" => {
            BuiltModel::EarlyFusion(EarlyFusionModel::build(EarlyFusionConfig::from_mdt(&mdt_cfg), &mut rng)?)
        }
        "late-fusion" => BuiltModel::LateFusion {
            image: ViTModel::build(ViTConfig::from_mdt(&mdt_cfg), &mut rng)?,
            text: TextOnlyModel::build(
                mdt_cfg.task,
                mdt_cfg.vocab_size,
                mdt_cfg.dim,
                mdt_cfg.n_lab,
                mdt_cfg.class_count,
                &mut rng,
            )?,
        },
        other => {
            return Err(usage(format!(
                "unknown model {other:?}; expected one of {}",
                MODEL_NAMES.join("|")
            )))
        }
    })
}

/// Eval-mode class probabilities for every case.
pub fn predict_probs(model: &BuiltModel, cases: &[Case]) -> Result<Vec<Vec<f32>>> {
    Ok(match model {
        BuiltModel::Irene(m) => predict(m, cases)?,
        BuiltModel::ImageOnly(m) => predict(m, cases)?,
        BuiltModel::EarlyFusion(m) => predict(m, cases)?,
        BuiltModel::LateFusion { image, text } => {
            late_fusion_predict(&predict(image, cases)?, &predict(text, cases)?)?
        }
    })
}

pub fn log_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for l in logs {
        out.push_str(&format!("{},{},{},{}\n", l.epoch, l.train_loss, l.val_loss, l.lr));
    }
    out
}

fn train_branch<M: TrainableModel>(
    model: &M,
    tc: &TrainConfig,
    data: &LoadedDataset,
    out: Option<(&Path, &str, &str)>,
) -> Result<TrainResult> {
    let result = train(model, tc, &data.train, &data.val, None)?;
    if let Some((dir, log_name, ckpt_name)) = out {
        fs::write(dir.join(log_name), log_csv(&result.logs))?;
        fs::write(dir.join(ckpt_name), &result.best_checkpoint)?;
    }
    Ok(result)
}

/// Train the configured model on an already-loaded dataset, optionally
/// writing logs and best checkpoints into `out`. Late fusion trains its two
/// branches independently and reports the image branch's log as primary.
pub fn train_model(
    cfg: &RunConfig,
    data: &LoadedDataset,
    out: Option<&Path>,
) -> Result<(BuiltModel, Vec<TrainResult>)> {
    let model = build_model(cfg)?;
    let tc = cfg.train_config();
    let results = match &model {
        BuiltModel::Irene(m) => vec![train_branch(m, &tc, data, out.map(|d| (d, "log.csv", "model.mdtc")))?],
        BuiltModel::ImageOnly(m) => {
            vec![train_branch(m, &tc, data, out.map(|d| (d, "log.csv", "model.mdtc")))?]
        }
        BuiltModel::EarlyFusion(m) => {
            vec![train_branch(m, &tc, data, out.map(|d| (d, "log.csv", "model.mdtc")))?]
        }
        BuiltModel::LateFusion { image, text } => vec![
            train_branch(image, &tc, data, out.map(|d| (d, "log_image.csv", "image.mdtc")))?,
            train_branch(text, &tc, data, out.map(|d| (d, "log_text.csv", "text.mdtc")))?,
        ],
    };
    Ok((model, results))
}

/// Rebuild the configured model and load its saved checkpoint(s) from a
/// training output directory.
pub fn load_model(cfg: &RunConfig, model_dir: &Path) -> Result<BuiltModel> {
    let model = build_model(cfg)?;
    let load = |params: &mdt_core::params::ParamSet, name: &str| -> Result<()> {
        let path = model_dir.join(name);
        let bytes =
            fs::read(&path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        mdt_core::checkpoint::load_params(params, &bytes)?;
        Ok(())
    };
    match &model {
        BuiltModel::Irene(m) => load(&m.params, "model.mdtc")?,
        BuiltModel::ImageOnly(m) => load(&m.params, "model.mdtc")?,
        BuiltModel::EarlyFusion(m) => load(&m.params, "model.mdtc")?,
        BuiltModel::LateFusion { image, text } => {
            load(&image.params, "image.mdtc")?;
            load(&text.params, "text.mdtc")?;
        }
    }
    Ok(model)
}

fn labels_of(cases: &[Case]) -> Vec<Vec<f32>> {
    cases.iter().map(|c| c.labels.clone()).collect()
}

/// Percentile bootstrap of the macro (class-averaged) metric over cases,
/// with the same index convention and redraw policy as the per-class CIs.
pub fn macro_bootstrap<F>(
    scores: &[Vec<f32>],
    labels: &[Vec<f32>],
    metric: F,
    n_resamples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BootstrapCi>
where
    F: Fn(&[f32], &[f32]) -> mdt_core::Result<f64>,
{
    let n = scores.len();
    let classes = scores[0].len();
    let macro_of = |idx: &[usize]| -> mdt_core::Result<f64> {
        let mut total = 0.0;
        for c in 0..classes {
            let s: Vec<f32> = idx.iter().map(|&i| scores[i][c]).collect();
            let l: Vec<f32> = idx.iter().map(|&i| labels[i][c]).collect();
            total += metric(&s, &l)?;
        }
        Ok(total / classes as f64)
    };
    let all: Vec<usize> = (0..n).collect();
    let point = macro_of(&all)?;
    let mut stats = Vec::with_capacity(n_resamples);
    let mut failures = 0usize;
    let mut idx = vec![0usize; n];
    while stats.len() < n_resamples {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        match macro_of(&idx) {
            Ok(v) => stats.push(v),
            Err(_) => {
                failures += 1;
                if failures > (n_resamples + failures) / 2 {
                    bail!("bootstrap degenerate: {failures} undefined resamples");
                }
            }
        }
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo = stats[(n_resamples * 25).div_ceil(1000) - 1];
    let hi = stats[(n_resamples * 975).div_ceil(1000) - 1];
    Ok(BootstrapCi {
        point,
        lo,
        hi,
        resamples: n_resamples,
    })
}

/// An evaluation report plus the bootstrapped macro-metric intervals.
pub struct FullReport {
    pub report: EvalReport,
    pub macro_auroc_ci: Option<BootstrapCi>,
    pub macro_auprc_ci: Option<BootstrapCi>,
}

pub fn evaluate(
    label: &str,
    split: &str,
    scores: &[Vec<f32>],
    labels: &[Vec<f32>],
    n_boot: usize,
    seed: u64,
) -> Result<FullReport> {
    let (report, macro_auroc_ci, macro_auprc_ci) = if n_boot > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let report = eval_report(label, split, scores, labels, Some((n_boot, &mut rng)))?;
        let auroc_ci = macro_bootstrap(scores, labels, mdt_core::metrics::auroc, n_boot, &mut rng)?;
        let auprc_ci = macro_bootstrap(scores, labels, mdt_core::metrics::auprc, n_boot, &mut rng)?;
        (report, Some(auroc_ci), Some(auprc_ci))
    } else {
        (eval_report(label, split, scores, labels, None)?, None, None)
    };
    Ok(FullReport {
        report,
        macro_auroc_ci,
        macro_auprc_ci,
    })
}

pub fn report_csv(full: &FullReport) -> String {
    let r = &full.report;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from("name,auroc,auroc_lo,auroc_hi,auprc,auprc_lo,auprc_hi\n");
    for c in 0..r.class_auroc.len() {
        let roc_ci = r.auroc_ci.as_ref().map(|cis| cis[c]);
        let prc_ci = r.auprc_ci.as_ref().map(|cis| cis[c]);
        out.push_str(&format!(
            "class_{c},{},{},{},{},{},{}\n",
            r.class_auroc[c],
            cell(roc_ci.map(|ci| ci.lo)),
            cell(roc_ci.map(|ci| ci.hi)),
            r.class_auprc[c],
            cell(prc_ci.map(|ci| ci.lo)),
            cell(prc_ci.map(|ci| ci.hi)),
        ));
    }
    out.push_str(&format!(
        "mean,{},{},{},{},{},{}\n",
        r.macro_auroc,
        cell(full.macro_auroc_ci.map(|ci| ci.lo)),
        cell(full.macro_auroc_ci.map(|ci| ci.hi)),
        r.macro_auprc,
        cell(full.macro_auprc_ci.map(|ci| ci.lo)),
        cell(full.macro_auprc_ci.map(|ci| ci.hi)),
    ));
    out
}

fn write_report_files(out: &Path, full: &FullReport) -> Result<()> {
    fs::write(out.join("report.csv"), report_csv(full))?;
    let json = serde_json::json!({
        "report": full.report,
        "macro_auroc_ci": full.macro_auroc_ci,
        "macro_auprc_ci": full.macro_auprc_ci,
    });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

fn load_for(cfg: &RunConfig, data_dir: &Path) -> Result<LoadedDataset> {
    load_dataset(data_dir, cfg.task()?, cfg.image_size, cfg.class_count, cfg.n_lab)
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.synthetic_spec()?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let generated = datagen::generate(&spec)?;
    fs::create_dir_all(out)?;
    let manifest_path = datagen::write_dataset(out, &generated)?;
    cfg.write_resolved(out)?;
    let digest: String = Sha256::digest(fs::read(&manifest_path)?)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let (train, val, test) = crate::manifest::split_by_date(&generated.records, &generated.splits)?;
    println!(
        "wrote {} records ({} train / {} val / {} test) to {}",
        generated.records.len(),
        train.len(),
        val.len(),
        test.len(),
        out.display()
    );
    println!("manifest sha256 {digest}");
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_for(cfg, data_dir)?;
    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;
    let (_, results) = train_model(cfg, &data, Some(out))?;
    let summary: Vec<serde_json::Value> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "best_epoch": r.best_epoch,
                "best_val_loss": r.best_val_loss,
            })
        })
        .collect();
    fs::write(
        out.join("train.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "model": BuiltModel::label(cfg),
            "branches": summary,
        }))?,
    )?;
    for r in &results {
        println!(
            "{}: best epoch {} with validation loss {}",
            BuiltModel::label(cfg),
            r.best_epoch,
            r.best_val_loss
        );
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, data_dir: &Path, model_dir: &Path, out: &Path) -> Result<()> {
    let data = load_for(cfg, data_dir)?;
    let model = load_model(cfg, model_dir)?;
    let cases = data.split(&cfg.split)?;
    let scores = predict_probs(&model, cases)?;
    let labels = labels_of(cases);
    let full = evaluate(&BuiltModel::label(cfg), &cfg.split, &scores, &labels, cfg.n_boot, cfg.seed)?;
    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;
    write_report_files(out, &full)?;
    println!(
        "{} on {}: macro AUROC {:.4}, macro AUPRC {:.4}",
        full.report.model, full.report.split, full.report.macro_auroc, full.report.macro_auprc
    );
    Ok(())
}

/// Train and evaluate every ablation row, in parallel up to MDT_THREADS.
pub fn cmd_ablate(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let data = load_for(cfg, data_dir)?;
    fs::create_dir_all(out)?;
    cfg.write_resolved(out)?;
    let names: Vec<&str> = AblationSpec::names().to_vec();
    let rows = util::parallel_map(names, |name| -> Result<(String, FullReport)> {
        let mut variant = cfg.clone();
        variant.model = "irene".into();
        variant.ablation = name.into();
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        variant.write_resolved(&dir)?;
        let (model, _) = train_model(&variant, &data, Some(&dir))?;
        let cases = data.split(&variant.split)?;
        let scores = predict_probs(&model, cases)?;
        let full = evaluate(
            &BuiltModel::label(&variant),
            &variant.split,
            &scores,
            &labels_of(cases),
            variant.n_boot,
            variant.seed,
        )?;
        write_report_files(&dir, &full)?;
        Ok((name.to_string(), full))
    });
    let mut table = String::from("ablation,macro_auroc,auroc_lo,auroc_hi,macro_auprc,auprc_lo,auprc_hi\n");
    for row in rows {
        let (name, full) = row?;
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        table.push_str(&format!(
            "{name},{},{},{},{},{},{}\n",
            full.report.macro_auroc,
            cell(full.macro_auroc_ci.map(|ci| ci.lo)),
            cell(full.macro_auroc_ci.map(|ci| ci.hi)),
            full.report.macro_auprc,
            cell(full.macro_auprc_ci.map(|ci| ci.lo)),
            cell(full.macro_auprc_ci.map(|ci| ci.hi)),
        ));
        println!("{name}: macro AUROC {:.4}", full.report.macro_auroc);
    }
    fs::write(out.join("ablation_table.csv"), table)?;
    Ok(())
}

/// One in-memory experiment (train + test-split macro AUROC); the acceptance
/// suite runs many of these across seeds and variants.
pub struct ExperimentOutcome {
    pub label: String,
    pub seed: u64,
    pub macro_auroc: f64,
    pub report: EvalReport,
    pub logs: Vec<EpochLog>,
}

pub fn run_experiment(cfg: &RunConfig, data: &LoadedDataset) -> Result<ExperimentOutcome> {
    let (model, results) = train_model(cfg, data, None)?;
    let cases = data.split(&cfg.split)?;
    let scores = predict_probs(&model, cases)?;
    let report = eval_report(&BuiltModel::label(cfg), &cfg.split, &scores, &labels_of(cases), None)?;
    Ok(ExperimentOutcome {
        label: BuiltModel::label(cfg),
        seed: cfg.seed,
        macro_auroc: report.macro_auroc,
        logs: results.into_iter().next().map(|r| r.logs).unwrap_or_default(),
        report,
    })
}

/// Output paths that every training run produces for a given model kind.
pub fn checkpoint_names(model: &str) -> Vec<&'static str> {
    match model {
        "late-fusion" => vec!["image.mdtc", "text.mdtc"],
        _ => vec!["model.mdtc"],
    }
}

/// Convenience wrapper used by tests: generate a dataset to `dir` and load it.
pub fn generate_and_load(cfg: &RunConfig, dir: &Path) -> Result<LoadedDataset> {
    let spec = cfg.synthetic_spec()?;
    let generated = datagen::generate(&spec)?;
    datagen::write_dataset(dir, &generated)?;
    load_for(cfg, dir)
}

/// The path of a run artifact, for tests and tooling.
pub fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
