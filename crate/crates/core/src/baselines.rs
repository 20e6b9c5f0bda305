//! Comparison models: image-only ViT, non-unified early fusion, late fusion,
//! and the ablation-variant factory.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathx;
use crate::model::{ForwardCtx, Linear, MdtConfig, SelfBlock};
use crate::params::{ParamHandle, ParamSet};
use crate::record::{Case, ChiefComplaint, Task};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::tokenize::ImageEmbedder;
use crate::train::TrainableModel;

/// Patch-embed + CLS + self-attention stack shared by the image-only model
/// and the early-fusion image branch.
struct ViTTrunk {
    image_emb: ImageEmbedder,
    cls: ParamHandle,
    blocks: Vec<SelfBlock>,
    heads: usize,
}

impl ViTTrunk {
    fn build(
        params: &mut ParamSet,
        prefix: &str,
        cfg: &ViTConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<ViTTrunk> {
        let image_emb = ImageEmbedder::build(
            params,
            &format!("{prefix}.embed"),
            cfg.image_size,
            cfg.patch,
            cfg.channels,
            cfg.dim,
            cfg.dropout,
            rng,
        )?;
        let cls = params.weight(&format!("{prefix}.cls"), &[1, cfg.dim], rng)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            blocks.push(SelfBlock::build(params, &format!("{prefix}.block{i}"), cfg.dim, rng)?);
        }
        Ok(ViTTrunk {
            image_emb,
            cls,
            blocks,
            heads: cfg.heads,
        })
    }

    /// CLS vector (`[1, D]`) of one slice.
    fn cls_vector(&self, tape: &Tape, case: &Case, slice: usize, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let img = case
            .images
            .get(slice)
            .ok_or_else(|| Error::Contract(format!("case {}: slice {} missing", case.id, slice)))?;
        let seq = self.image_emb.embed(tape, img, ctx.train, ctx.rng)?;
        let cls = self.cls.borrow().clone();
        let mut x = tape.concat_rows(&[&cls, &seq.tokens])?;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(tape, &x, self.heads, ctx, i)?;
        }
        tape.slice_rows(&x, 0, 1)
    }

    /// Slice-averaged CLS vector for the whole case.
    fn case_vector(&self, tape: &Tape, case: &Case, ctx: &mut ForwardCtx) -> Result<Tensor> {
        if case.images.is_empty() {
            return Err(Error::Contract(format!("case {} has no images", case.id)));
        }
        let mut reps = Vec::with_capacity(case.images.len());
        for s in 0..case.images.len() {
            reps.push(self.cls_vector(tape, case, s, ctx)?);
        }
        crate::model::aggregate_slices(tape, &reps)
    }
}

/// Image-only vision transformer baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub dim: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub dropout: f32,
    pub image_size: usize,
    pub patch: usize,
    pub channels: usize,
    pub class_count: usize,
}

impl ViTConfig {
    /// Full-scale baseline: 12 blocks at D=768 (4D = 3072 hidden), dropout 0.3.
    pub fn paper() -> ViTConfig {
        ViTConfig {
            dim: 768,
            heads: 12,
            n_blocks: 12,
            dropout: 0.3,
            image_size: 224,
            patch: 16,
            channels: 1,
            class_count: 8,
        }
    }

    pub fn desk() -> ViTConfig {
        ViTConfig {
            dim: 16,
            heads: 2,
            n_blocks: 4,
            dropout: 0.3,
            image_size: 32,
            class_count: 2,
            ..ViTConfig::paper()
        }
    }

    /// Match the geometry of an MDT configuration so results are comparable.
    pub fn from_mdt(cfg: &MdtConfig) -> ViTConfig {
        ViTConfig {
            dim: cfg.dim,
            heads: cfg.heads,
            n_blocks: cfg.n_bidirectional + cfg.n_self,
            dropout: 0.3,
            image_size: cfg.image_size,
            patch: cfg.patch,
            channels: cfg.channels,
            class_count: cfg.class_count,
        }
    }
}

pub struct ViTModel {
    pub cfg: ViTConfig,
    pub params: ParamSet,
    trunk: ViTTrunk,
    head: Linear,
}

impl ViTModel {
    pub fn build(cfg: ViTConfig, rng: &mut ChaCha8Rng) -> Result<ViTModel> {
        if cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0 {
            return Err(Error::Contract(format!(
                "dim {} must be a positive multiple of heads {}",
                cfg.dim, cfg.heads
            )));
        }
        let mut params = ParamSet::new();
        let trunk = ViTTrunk::build(&mut params, "vit", &cfg, rng)?;
        let head = Linear::build(&mut params, "vit.head", cfg.dim, cfg.class_count, rng)?;
        Ok(ViTModel {
            cfg,
            params,
            trunk,
            head,
        })
    }
}

impl TrainableModel for ViTModel {
    fn forward(&self, tape: &Tape, case: &Case, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let cls = self.trunk.case_vector(tape, case, ctx)?;
        self.head.apply(tape, &cls)
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn dropout_rate(&self) -> f32 {
        self.cfg.dropout
    }

    fn class_count(&self) -> usize {
        self.cfg.class_count
    }
}

/// Non-unified early fusion: per-modality feature extractors whose outputs
/// are concatenated once, just before the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyFusionConfig {
    pub vit: ViTConfig,
    pub vocab_size: usize,
    pub n_lab: usize,
    /// Hidden width of the modality MLPs (1024 at full scale).
    pub hidden: usize,
    /// Output width of the modality MLPs (512 at full scale).
    pub feature: usize,
    pub task: Task,
}

impl EarlyFusionConfig {
    pub fn paper() -> EarlyFusionConfig {
        EarlyFusionConfig {
            vit: ViTConfig::paper(),
            vocab_size: 512,
            n_lab: 92,
            hidden: 1024,
            feature: 512,
            task: Task::One,
        }
    }

    pub fn from_mdt(cfg: &MdtConfig) -> EarlyFusionConfig {
        EarlyFusionConfig {
            vit: ViTConfig::from_mdt(cfg),
            vocab_size: cfg.vocab_size,
            n_lab: cfg.n_lab,
            hidden: 4 * cfg.dim,
            feature: 2 * cfg.dim,
            task: cfg.task,
        }
    }

    /// Width of the concatenated fusion input: image CLS (D) plus the three
    /// modality features (768 + 3*512 = 2304 at full scale).
    pub fn fusion_width(&self) -> usize {
        self.vit.dim + 3 * self.feature
    }
}

/// One-hidden-layer MLP (in -> hidden -> out) with ReLU and dropout.
struct FeatureMlp {
    fc1: Linear,
    fc2: Linear,
}

impl FeatureMlp {
    fn build(
        params: &mut ParamSet,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<FeatureMlp> {
        Ok(FeatureMlp {
            fc1: Linear::build(params, &format!("{name}.fc1"), d_in, hidden, rng)?,
            fc2: Linear::build(params, &format!("{name}.fc2"), hidden, d_out, rng)?,
        })
    }

    fn apply(&self, tape: &Tape, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let h = tape.relu(&self.fc1.apply(tape, x)?)?;
        let h = if ctx.train && ctx.dropout > 0.0 {
            tape.dropout(&h, ctx.dropout, ctx.rng)?
        } else {
            h
        };
        self.fc2.apply(tape, &h)
    }
}

/// Averaged chief-complaint feature: mean word embedding (task one) or the
/// structured component vector projected to D (task two).
struct CcFeature {
    emb: Option<ParamHandle>,
    proj: Option<Linear>,
}

impl CcFeature {
    fn build(
        params: &mut ParamSet,
        name: &str,
        task: Task,
        vocab_size: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<CcFeature> {
        match task {
            Task::One => Ok(CcFeature {
                emb: Some(params.weight(&format!("{name}.emb"), &[vocab_size, dim], rng)?),
                proj: None,
            }),
            Task::Two => Ok(CcFeature {
                emb: None,
                proj: Some(Linear::build(params, &format!("{name}.proj"), 1, dim, rng)?),
            }),
        }
    }

    fn apply(&self, tape: &Tape, case: &Case) -> Result<Tensor> {
        match (&case.cc, &self.emb, &self.proj) {
            (ChiefComplaint::WordIds(ids), Some(emb), _) => {
                if ids.is_empty() {
                    return Err(Error::Contract(format!("case {}: empty chief complaint", case.id)));
                }
                let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
                let rows = tape.embedding(&emb.borrow(), &idx)?;
                tape.mean_rows(&rows)
            }
            (ChiefComplaint::Structured(vals), _, Some(proj)) => {
                // mean of per-component projections of the structured vector
                let col = Tensor::new(&[vals.len(), 1], vals.clone())?;
                tape.mean_rows(&proj.apply(tape, &col)?)
            }
            _ => Err(Error::Contract(format!(
                "case {}: chief-complaint form does not match task",
                case.id
            ))),
        }
    }
}

fn demographics_row(case: &Case) -> Result<Tensor> {
    Tensor::new(&[1, 2], alloc::vec![case.sex, case.age / 100.0])
}

fn lab_row(case: &Case, n_lab: usize) -> Result<Tensor> {
    if case.lab.len() != n_lab {
        return Err(Error::Contract(format!(
            "case {}: {} lab values, model expects {}",
            case.id,
            case.lab.len(),
            n_lab
        )));
    }
    Tensor::new(&[1, n_lab], case.lab.clone())
}

pub struct EarlyFusionModel {
    pub cfg: EarlyFusionConfig,
    pub params: ParamSet,
    trunk: ViTTrunk,
    cc_feat: CcFeature,
    cc_mlp: FeatureMlp,
    lab_mlp: FeatureMlp,
    demo_mlp: FeatureMlp,
    fusion: FeatureMlp,
}

impl EarlyFusionModel {
    pub fn build(cfg: EarlyFusionConfig, rng: &mut ChaCha8Rng) -> Result<EarlyFusionModel> {
        let mut params = ParamSet::new();
        let d = cfg.vit.dim;
        let trunk = ViTTrunk::build(&mut params, "image", &cfg.vit, rng)?;
        let cc_feat = CcFeature::build(&mut params, "cc", cfg.task, cfg.vocab_size, d, rng)?;
        let cc_mlp = FeatureMlp::build(&mut params, "cc.mlp", d, cfg.hidden, cfg.feature, rng)?;
        let lab_mlp = FeatureMlp::build(&mut params, "lab.mlp", cfg.n_lab, cfg.hidden, cfg.feature, rng)?;
        let demo_mlp =
            FeatureMlp::build(&mut params, "demo.mlp", 2, cfg.feature, cfg.feature, rng)?;
        let fusion = FeatureMlp::build(
            &mut params,
            "fusion",
            cfg.fusion_width(),
            cfg.hidden,
            cfg.vit.class_count,
            rng,
        )?;
        Ok(EarlyFusionModel {
            cfg,
            params,
            trunk,
            cc_feat,
            cc_mlp,
            lab_mlp,
            demo_mlp,
            fusion,
        })
    }
}

impl TrainableModel for EarlyFusionModel {
    fn forward(&self, tape: &Tape, case: &Case, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let image = self.trunk.case_vector(tape, case, ctx)?;
        let cc = self.cc_mlp.apply(tape, &self.cc_feat.apply(tape, case)?, ctx)?;
        let lab = self.lab_mlp.apply(tape, &lab_row(case, self.cfg.n_lab)?, ctx)?;
        let demo = self.demo_mlp.apply(tape, &demographics_row(case)?, ctx)?;
        let fused = tape.concat_cols(&[&image, &cc, &lab, &demo])?;
        self.fusion.apply(tape, &fused, ctx)
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn dropout_rate(&self) -> f32 {
        self.cfg.vit.dropout
    }

    fn class_count(&self) -> usize {
        self.cfg.vit.class_count
    }
}

/// Text-only linear classifier used as the text half of late fusion:
/// concat(averaged cc embedding D, lab, demographics 2) -> classes
/// (862 -> 8 at full scale).
pub struct TextOnlyModel {
    pub params: ParamSet,
    cc_feat: CcFeature,
    head: Linear,
    n_lab: usize,
    class_count: usize,
}

impl TextOnlyModel {
    pub fn build(
        task: Task,
        vocab_size: usize,
        dim: usize,
        n_lab: usize,
        class_count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<TextOnlyModel> {
        let mut params = ParamSet::new();
        let cc_feat = CcFeature::build(&mut params, "cc", task, vocab_size, dim, rng)?;
        let head = Linear::build(&mut params, "head", dim + n_lab + 2, class_count, rng)?;
        Ok(TextOnlyModel {
            params,
            cc_feat,
            head,
            n_lab,
            class_count,
        })
    }

    pub fn input_width(&self) -> usize {
        let (w, _) = self.head.w.borrow().dims2("text_only").unwrap_or((0, 0));
        w
    }
}

impl TrainableModel for TextOnlyModel {
    fn forward(&self, tape: &Tape, case: &Case, _ctx: &mut ForwardCtx) -> Result<Tensor> {
        let cc = self.cc_feat.apply(tape, case)?;
        let lab = lab_row(case, self.n_lab)?;
        let demo = demographics_row(case)?;
        let x = tape.concat_cols(&[&cc, &lab, &demo])?;
        self.head.apply(tape, &x)
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn dropout_rate(&self) -> f32 {
        0.0
    }

    fn class_count(&self) -> usize {
        self.class_count
    }
}

/// Elementwise mean of the two classifiers' predicted probabilities. Both
/// models are trained independently on the same labels beforehand.
pub fn late_fusion_predict(image_probs: &[Vec<f32>], text_probs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    if image_probs.len() != text_probs.len() {
        return Err(Error::Contract(format!(
            "late fusion: {} image rows vs {} text rows",
            image_probs.len(),
            text_probs.len()
        )));
    }
    let mut out = Vec::with_capacity(image_probs.len());
    for (a, b) in image_probs.iter().zip(text_probs) {
        if a.len() != b.len() {
            return Err(Error::Contract("late fusion: class-count mismatch".into()));
        }
        let mut row = Vec::with_capacity(a.len());
        for (&pa, &pb) in a.iter().zip(b) {
            if !(0.0..=1.0).contains(&pa) || !(0.0..=1.0).contains(&pb) {
                return Err(Error::Contract(format!(
                    "late fusion: probability outside [0,1]: {pa}, {pb}"
                )));
            }
            row.push(0.5 * (pa + pb));
        }
        out.push(row);
    }
    Ok(out)
}

/// Sigmoid map for turning raw logits into late-fusion probabilities.
pub fn sigmoid_rows(logits: &[Vec<f32>]) -> Vec<Vec<f32>> {
    logits
        .iter()
        .map(|row| row.iter().map(|&z| mathx::sigmoidf(z)).collect())
        .collect()
}

/// One ablation-matrix row: how many bidirectional blocks, directionality,
/// modality switches, tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub ha_blocks: usize,
    pub uni_direction: bool,
    pub use_image: bool,
    pub use_cc: bool,
    pub use_lab: bool,
    pub tokenized_text: bool,
}

impl AblationSpec {
    /// The default model: two bidirectional blocks, everything on.
    pub fn full() -> AblationSpec {
        AblationSpec {
            ha_blocks: 2,
            uni_direction: false,
            use_image: true,
            use_cc: true,
            use_lab: true,
            tokenized_text: true,
        }
    }

    /// CLI names for the ablation-matrix rows.
    pub fn from_name(name: &str) -> Result<AblationSpec> {
        let full = AblationSpec::full();
        Ok(match name {
            "ha2" => full,
            "ha0" => AblationSpec { ha_blocks: 0, ..full },
            "ha6" => AblationSpec { ha_blocks: 6, ..full },
            "uni" => AblationSpec {
                uni_direction: true,
                ..full
            },
            "no-cc" => AblationSpec { use_cc: false, ..full },
            "no-lab" => AblationSpec { use_lab: false, ..full },
            "no-token" => AblationSpec {
                tokenized_text: false,
                ..full
            },
            "no-image" => AblationSpec {
                use_image: false,
                ..full
            },
            other => {
                return Err(Error::Contract(format!(
                    "unknown ablation {other}; expected ha0|ha2|ha6|uni|no-cc|no-lab|no-token|no-image"
                )))
            }
        })
    }

    pub fn names() -> [&'static str; 8] {
        ["ha2", "ha0", "ha6", "uni", "no-cc", "no-lab", "no-token", "no-image"]
    }

    pub fn name(&self) -> String {
        let full = AblationSpec::full();
        if *self == full {
            return "ha2".into();
        }
        if *self == (AblationSpec { ha_blocks: 0, ..full }) {
            return "ha0".into();
        }
        if *self == (AblationSpec { ha_blocks: 6, ..full }) {
            return "ha6".into();
        }
        if *self
            == (AblationSpec {
                uni_direction: true,
                ..full
            })
        {
            return "uni".into();
        }
        if *self == (AblationSpec { use_cc: false, ..full }) {
            return "no-cc".into();
        }
        if *self == (AblationSpec { use_lab: false, ..full }) {
            return "no-lab".into();
        }
        if *self
            == (AblationSpec {
                tokenized_text: false,
                ..full
            })
        {
            return "no-token".into();
        }
        if *self
            == (AblationSpec {
                use_image: false,
                ..full
            })
        {
            return "no-image".into();
        }
        "custom".into()
    }
}

/// Derive a variant configuration from the base model. The total block
/// count is preserved: `ha_blocks` become bidirectional, the rest stay
/// self-attention.
pub fn build_ablation(spec: &AblationSpec, base: &MdtConfig) -> Result<MdtConfig> {
    let total = base.n_bidirectional + base.n_self;
    if spec.ha_blocks > total {
        return Err(Error::Contract(format!(
            "{} bidirectional blocks exceed the {} total blocks",
            spec.ha_blocks, total
        )));
    }
    if !spec.use_image && !spec.use_cc && !spec.use_lab {
        return Err(Error::Contract("ablation removes every modality".into()));
    }
    let cfg = MdtConfig {
        n_bidirectional: spec.ha_blocks,
        n_self: total - spec.ha_blocks,
        uni_directional: spec.uni_direction,
        use_image: spec.use_image,
        use_cc: spec.use_cc,
        use_lab: spec.use_lab,
        tokenized_text: spec.tokenized_text,
        ..base.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_width_matches_layer_arithmetic() {
        let cfg = EarlyFusionConfig::paper();
        assert_eq!(cfg.fusion_width(), 2304);
    }

    #[test]
    fn text_only_input_width_at_full_scale() {
        // 768 (cc) + 92 (lab) + 2 (demographics) = 862
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let m = TextOnlyModel::build(Task::One, 16, 768, 92, 8, &mut rng).unwrap();
        assert_eq!(m.input_width(), 862);
    }

    #[test]
    fn late_fusion_mean_is_bounded_and_exact() {
        let img = alloc::vec![alloc::vec![0.2f32, 1.0]];
        let txt = alloc::vec![alloc::vec![0.8f32, 1.0]];
        let out = late_fusion_predict(&img, &txt).unwrap();
        assert_eq!(out[0], alloc::vec![0.5, 1.0]);
        assert!(late_fusion_predict(&alloc::vec![alloc::vec![1.5f32]], &txt[..1].to_vec()).is_err());
    }

    #[test]
    fn ablation_names_round_trip() {
        for name in AblationSpec::names() {
            let spec = AblationSpec::from_name(name).unwrap();
            assert_eq!(spec.name(), name, "{name}");
        }
        assert!(AblationSpec::from_name("bogus").is_err());
    }

    #[test]
    fn ha2_reproduces_default_config() {
        let base = MdtConfig::desk(Task::One);
        let cfg = build_ablation(&AblationSpec::full(), &base).unwrap();
        assert_eq!(cfg, base);
    }

    #[test]
    fn ablation_block_budget_is_preserved() {
        let base = MdtConfig::paper_task1();
        for name in AblationSpec::names() {
            let spec = AblationSpec::from_name(name).unwrap();
            let cfg = build_ablation(&spec, &base).unwrap();
            assert_eq!(cfg.n_bidirectional + cfg.n_self, 12, "{name}");
        }
        let ha0 = build_ablation(&AblationSpec::from_name("ha0").unwrap(), &base).unwrap();
        assert_eq!(ha0.n_bidirectional, 0);
        assert_eq!(ha0.n_self, 12);
    }

    #[test]
    fn oversized_ha_count_is_rejected() {
        let base = MdtConfig::desk(Task::One); // 4 blocks total
        let err = build_ablation(&AblationSpec::from_name("ha6").unwrap(), &base);
        assert!(err.is_err());
    }

    #[test]
    fn token_counts_match_ablation_rows() {
        // full-scale bags: tokenized 40+92+2 = 134 text tokens;
        // untokenized 1+1+1+1 = 4
        let base = MdtConfig::paper_task1();
        assert_eq!(base.n_text_tokens(), 134);
        assert_eq!(base.n_image_tokens(), 196);
        let no_token = build_ablation(&AblationSpec::from_name("no-token").unwrap(), &base).unwrap();
        assert_eq!(no_token.n_text_tokens(), 4);
        let no_image = build_ablation(&AblationSpec::from_name("no-image").unwrap(), &base).unwrap();
        assert_eq!(no_image.n_text_tokens(), 134);
    }
}
