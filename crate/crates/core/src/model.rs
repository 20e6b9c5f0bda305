//! The unified multimodal diagnostic transformer (MDT).
//!
//! Image-patch tokens and clinical-text tokens first traverse a stack of
//! bidirectional multimodal attention blocks as two parallel streams: each
//! stream attends within itself and, weighted by lambda, across to the other
//! stream. The streams are then concatenated into one unified token bag that
//! traverses standard pre-norm self-attention blocks, is pooled (average or
//! CLS), and classified by a two-layer MLP.
//!
//! Per-block attention weights can be captured through [`AttnSink`] for the
//! attribution tooling in [`crate::interpret`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamHandle, ParamSet};
use crate::record::{Case, Modality, Task, TokenSequence};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::tokenize::{ImageEmbedder, TextEmbedder, TextEmbedderConfig};

pub const LAYER_NORM_EPS: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Average,
    Cls,
}

/// Architecture switches for the MDT, including the ablation toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdtConfig {
    pub dim: usize,
    pub heads: usize,
    pub n_bidirectional: usize,
    pub n_self: usize,
    pub dropout: f32,
    pub pooling: Pooling,
    pub uni_directional: bool,
    /// Also add a residual around the attention stage (off reproduces the
    /// block update X' = MLP(Norm(attn)) + X exactly).
    pub standard_residual: bool,
    pub class_count: usize,
    pub image_size: usize,
    pub patch: usize,
    pub channels: usize,
    pub vocab_size: usize,
    pub n_cc: usize,
    pub n_lab: usize,
    pub task: Task,
    pub lambda: f32,
    pub mask_pad: bool,
    pub use_image: bool,
    pub use_cc: bool,
    pub use_lab: bool,
    pub tokenized_text: bool,
}

impl MdtConfig {
    /// Paper-scale configuration for the pulmonary task.
    pub fn paper_task1() -> MdtConfig {
        MdtConfig {
            dim: 768,
            heads: 12,
            n_bidirectional: 2,
            n_self: 10,
            dropout: 0.1,
            pooling: Pooling::Average,
            uni_directional: false,
            standard_residual: false,
            class_count: 8,
            image_size: 224,
            patch: 16,
            channels: 1,
            vocab_size: 512,
            n_cc: 40,
            n_lab: 92,
            task: Task::One,
            lambda: 1.0,
            mask_pad: false,
            use_image: true,
            use_cc: true,
            use_lab: true,
            tokenized_text: true,
        }
    }

    /// Paper-scale configuration for the COVID-19 outcome task.
    pub fn paper_task2() -> MdtConfig {
        MdtConfig {
            class_count: 3,
            n_cc: 16,
            n_lab: 19,
            task: Task::Two,
            ..MdtConfig::paper_task1()
        }
    }

    /// Small configuration usable on a laptop CPU: 32x32 single-channel
    /// images (4 patch tokens), 8 chief-complaint words, 8 lab items.
    pub fn desk(task: Task) -> MdtConfig {
        MdtConfig {
            dim: 16,
            heads: 2,
            n_bidirectional: 2,
            n_self: 2,
            dropout: 0.1,
            class_count: 2,
            image_size: 32,
            vocab_size: 64,
            n_cc: 8,
            n_lab: 8,
            task,
            ..MdtConfig::paper_task1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Contract(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.image_size % self.patch != 0 {
            return Err(Error::Contract(format!(
                "image size {} not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        if self.n_bidirectional + self.n_self == 0 {
            return Err(Error::Contract("model must have at least one block".into()));
        }
        if self.class_count == 0 {
            return Err(Error::Contract("class_count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.use_image && !self.use_cc && !self.use_lab {
            return Err(Error::Contract("all modalities removed".into()));
        }
        Ok(())
    }

    pub fn n_image_tokens(&self) -> usize {
        let side = self.image_size / self.patch;
        side * side
    }

    /// Text-bag size for this configuration ([cc, lab, sex, age]).
    pub fn n_text_tokens(&self) -> usize {
        let cc = if !self.use_cc {
            0
        } else if self.tokenized_text {
            self.n_cc
        } else {
            1
        };
        let lab = if !self.use_lab {
            0
        } else if self.tokenized_text {
            self.n_lab
        } else {
            1
        };
        cc + lab + 2
    }
}

/// Which attention computation a captured weight matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    SelfAttn,
    IntraImage,
    IntraText,
    /// Image queries against text keys/values.
    CrossImageToText,
    /// Text queries against image keys/values.
    CrossTextToImage,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::SelfAttn => "self",
            StreamKind::IntraImage => "intra_image",
            StreamKind::IntraText => "intra_text",
            StreamKind::CrossImageToText => "cross_image_to_text",
            StreamKind::CrossTextToImage => "cross_text_to_image",
        }
    }
}

/// One head-averaged attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnRecord {
    pub block: usize,
    pub kind: StreamKind,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
}

/// In-memory capture sink for attention weights.
#[derive(Debug, Default)]
pub struct AttnSink {
    records: RefCell<Vec<AttnRecord>>,
}

impl AttnSink {
    pub fn new() -> AttnSink {
        AttnSink::default()
    }

    fn push(&self, rec: AttnRecord) {
        self.records.borrow_mut().push(rec);
    }

    pub fn take(&self) -> Vec<AttnRecord> {
        core::mem::take(&mut self.records.borrow_mut())
    }

    pub fn records(&self) -> Vec<AttnRecord> {
        self.records.borrow().clone()
    }
}

// ---- parameter bundles ----

pub(crate) struct Linear {
    pub(crate) w: ParamHandle,
    pub(crate) b: ParamHandle,
}

impl Linear {
    pub(crate) fn build(params: &mut ParamSet, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Linear> {
        Ok(Linear {
            w: params.weight(&format!("{name}.w"), &[d_in, d_out], rng)?,
            b: params.zeros(&format!("{name}.b"), &[d_out])?,
        })
    }

    pub(crate) fn apply(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.add_bias(&tape.matmul(x, &self.w.borrow())?, &self.b.borrow())
    }
}

pub(crate) struct LayerNorm {
    pub(crate) g: ParamHandle,
    pub(crate) b: ParamHandle,
}

impl LayerNorm {
    pub(crate) fn build(params: &mut ParamSet, name: &str, d: usize) -> Result<LayerNorm> {
        Ok(LayerNorm {
            g: params.ones(&format!("{name}.g"), &[d])?,
            b: params.zeros(&format!("{name}.b"), &[d])?,
        })
    }

    pub(crate) fn apply(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        tape.layer_norm(x, &self.g.borrow(), &self.b.borrow(), LAYER_NORM_EPS)
    }
}

pub(crate) struct Mlp {
    pub(crate) fc1: Linear,
    pub(crate) fc2: Linear,
}

impl Mlp {
    pub(crate) fn build(params: &mut ParamSet, name: &str, d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Mlp> {
        Ok(Mlp {
            fc1: Linear::build(params, &format!("{name}.fc1"), d, hidden, rng)?,
            fc2: Linear::build(params, &format!("{name}.fc2"), hidden, d, rng)?,
        })
    }

    pub(crate) fn apply(&self, tape: &Tape, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let h = tape.gelu(&self.fc1.apply(tape, x)?)?;
        let h = ctx.dropout(tape, &h)?;
        let out = self.fc2.apply(tape, &h)?;
        ctx.dropout(tape, &out)
    }
}

pub(crate) struct AttnParams {
    pub(crate) ln: LayerNorm,
    pub(crate) wq: Linear,
    pub(crate) wk: Linear,
    pub(crate) wv: Linear,
    pub(crate) out: Linear,
}

impl AttnParams {
    pub(crate) fn build(params: &mut ParamSet, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<AttnParams> {
        Ok(AttnParams {
            ln: LayerNorm::build(params, &format!("{name}.ln"), d)?,
            wq: Linear::build(params, &format!("{name}.wq"), d, d, rng)?,
            wk: Linear::build(params, &format!("{name}.wk"), d, d, rng)?,
            wv: Linear::build(params, &format!("{name}.wv"), d, d, rng)?,
            out: Linear::build(params, &format!("{name}.out"), d, d, rng)?,
        })
    }

    /// Q, K, V = LP(Norm(X)).
    pub(crate) fn project(&self, tape: &Tape, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let n = self.ln.apply(tape, x)?;
        Ok((
            self.wq.apply(tape, &n)?,
            self.wk.apply(tape, &n)?,
            self.wv.apply(tape, &n)?,
        ))
    }
}

struct BidirStream {
    attn: AttnParams,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl BidirStream {
    fn build(params: &mut ParamSet, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<BidirStream> {
        Ok(BidirStream {
            attn: AttnParams::build(params, &format!("{name}.attn"), d, rng)?,
            ln2: LayerNorm::build(params, &format!("{name}.ln2"), d)?,
            mlp: Mlp::build(params, &format!("{name}.mlp"), d, 4 * d, rng)?,
        })
    }
}

struct BidirBlock {
    image: BidirStream,
    text: BidirStream,
}

pub(crate) struct SelfBlock {
    pub(crate) attn: AttnParams,
    pub(crate) ln2: LayerNorm,
    pub(crate) mlp: Mlp,
}

impl SelfBlock {
    pub(crate) fn build(params: &mut ParamSet, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<SelfBlock> {
        Ok(SelfBlock {
            attn: AttnParams::build(params, &format!("{name}.attn"), d, rng)?,
            ln2: LayerNorm::build(params, &format!("{name}.ln2"), d)?,
            mlp: Mlp::build(params, &format!("{name}.mlp"), d, 4 * d, rng)?,
        })
    }

    /// Standard pre-norm self-attention block: residuals on both stages.
    pub(crate) fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        heads: usize,
        ctx: &mut ForwardCtx,
        block_idx: usize,
    ) -> Result<Tensor> {
        let (q, k, v) = self.attn.project(tape, x)?;
        let attn = multi_head_attention(tape, &q, &k, &v, heads, ctx, block_idx, StreamKind::SelfAttn)?;
        let attn = ctx.dropout(tape, &self.attn.out.apply(tape, &attn)?)?;
        let h = tape.add(x, &attn)?;
        let m = self.mlp.apply(tape, &self.ln2.apply(tape, &h)?, ctx)?;
        tape.add(&h, &m)
    }
}

/// Per-forward mutable context: dropout stream and optional attention sink.
pub struct ForwardCtx<'a> {
    pub train: bool,
    pub dropout: f32,
    pub rng: &'a mut ChaCha8Rng,
    pub sink: Option<&'a AttnSink>,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(train: bool, dropout: f32, rng: &'a mut ChaCha8Rng, sink: Option<&'a AttnSink>) -> Self {
        ForwardCtx {
            train,
            dropout,
            rng,
            sink,
        }
    }

    fn dropout(&mut self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        if self.train && self.dropout > 0.0 {
            tape.dropout(x, self.dropout, self.rng)
        } else {
            Ok(x.clone())
        }
    }
}

/// softmax(Q Khᵀ / sqrt(d_k)) V per head, heads concatenated. The
/// head-averaged weight matrix is pushed to the sink when capture is on.
pub fn multi_head_attention(
    tape: &Tape,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    ctx: &mut ForwardCtx,
    block: usize,
    kind: StreamKind,
) -> Result<Tensor> {
    let (n_q, d) = q.dims2("attention")?;
    let (n_k, dk_k) = k.dims2("attention")?;
    let (n_v, d_v) = v.dims2("attention")?;
    if d != dk_k {
        return Err(Error::shape(
            "attention",
            format!("Q width {} vs K width {}", d, dk_k),
        ));
    }
    if n_k != n_v || d != d_v {
        return Err(Error::shape(
            "attention",
            format!("K {:?} vs V {:?}", k.shape(), v.shape()),
        ));
    }
    if d % heads != 0 {
        return Err(Error::shape(
            "attention",
            format!("width {} not divisible by {} heads", d, heads),
        ));
    }
    let dk = d / heads;
    let scale = 1.0 / crate::mathx::sqrtf(dk as f32);
    let mut outs = Vec::with_capacity(heads);
    let mut avg = if ctx.sink.is_some() {
        Some(vec![0.0f32; n_q * n_k])
    } else {
        None
    };
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dk, (h + 1) * dk)?;
        let kh = tape.slice_cols(k, h * dk, (h + 1) * dk)?;
        let vh = tape.slice_cols(v, h * dk, (h + 1) * dk)?;
        let scores = tape.scale(&tape.matmul(&qh, &tape.transpose(&kh)?)?, scale)?;
        let weights = tape.softmax_lastdim(&scores)?;
        if let Some(acc) = avg.as_mut() {
            let inv = 1.0 / heads as f32;
            for (a, &w) in acc.iter_mut().zip(weights.data()) {
                *a += w * inv;
            }
        }
        outs.push(tape.matmul(&weights, &vh)?);
    }
    if let (Some(sink), Some(acc)) = (ctx.sink, avg) {
        sink.push(AttnRecord {
            block,
            kind,
            rows: n_q,
            cols: n_k,
            weights: acc,
        });
    }
    let refs: Vec<&Tensor> = outs.iter().collect();
    tape.concat_cols(&refs)
}

/// Scaled dot-product attention as a standalone operation (single head).
pub fn scaled_attention(tape: &Tape, q: &Tensor, k: &Tensor, v: &Tensor, d_k: usize) -> Result<Tensor> {
    let scale = 1.0 / crate::mathx::sqrtf(d_k as f32);
    let scores = tape.scale(&tape.matmul(q, &tape.transpose(k)?)?, scale)?;
    let weights = tape.softmax_lastdim(&scores)?;
    tape.matmul(&weights, v)
}

/// Elementwise mean of per-slice holistic representations.
pub fn aggregate_slices(tape: &Tape, reps: &[Tensor]) -> Result<Tensor> {
    if reps.is_empty() {
        return Err(Error::Contract("no slice representations to aggregate".into()));
    }
    if reps.len() == 1 {
        return Ok(reps[0].clone());
    }
    let refs: Vec<&Tensor> = reps.iter().collect();
    let stacked = tape.concat_rows(&refs)?;
    tape.mean_rows(&stacked)
}

pub struct MdtModel {
    pub cfg: MdtConfig,
    pub params: ParamSet,
    image_emb: ImageEmbedder,
    text_emb: TextEmbedder,
    bidir: Vec<BidirBlock>,
    selfs: Vec<SelfBlock>,
    cls: Option<ParamHandle>,
    head1: Linear,
    head2: Linear,
}

impl MdtModel {
    pub fn build(cfg: MdtConfig, rng: &mut ChaCha8Rng) -> Result<MdtModel> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let d = cfg.dim;
        let image_emb = ImageEmbedder::build(
            &mut params,
            "embed.image",
            cfg.image_size,
            cfg.patch,
            cfg.channels,
            d,
            cfg.dropout,
            rng,
        )?;
        let text_emb = TextEmbedder::build(
            &mut params,
            "embed.text",
            &TextEmbedderConfig {
                task: cfg.task,
                dim: d,
                n_cc: cfg.n_cc,
                n_lab: cfg.n_lab,
                vocab_size: cfg.vocab_size,
                tokenized: cfg.tokenized_text,
                mask_pad: cfg.mask_pad,
            },
            rng,
        )?;
        let mut bidir = Vec::with_capacity(cfg.n_bidirectional);
        for i in 0..cfg.n_bidirectional {
            bidir.push(BidirBlock {
                image: BidirStream::build(&mut params, &format!("bidir{i}.image"), d, rng)?,
                text: BidirStream::build(&mut params, &format!("bidir{i}.text"), d, rng)?,
            });
        }
        let mut selfs = Vec::with_capacity(cfg.n_self);
        for i in 0..cfg.n_self {
            selfs.push(SelfBlock::build(&mut params, &format!("self{i}"), d, rng)?);
        }
        let cls = match cfg.pooling {
            Pooling::Cls => Some(params.weight("cls", &[1, d], rng)?),
            Pooling::Average => None,
        };
        let head1 = Linear::build(&mut params, "head.fc1", d, d, rng)?;
        let head2 = Linear::build(&mut params, "head.fc2", d, cfg.class_count, rng)?;
        Ok(MdtModel {
            cfg,
            params,
            image_emb,
            text_emb,
            bidir,
            selfs,
            cls,
            head1,
            head2,
        })
    }

    fn bidir_stream_update(
        &self,
        tape: &Tape,
        stream: &BidirStream,
        x: &Tensor,
        mixed: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<Tensor> {
        let attn_out = stream.attn.out.apply(tape, mixed)?;
        let attn_out = ctx.dropout(tape, &attn_out)?;
        if self.cfg.standard_residual {
            let h = tape.add(x, &attn_out)?;
            let m = stream.mlp.apply(tape, &stream.ln2.apply(tape, &h)?, ctx)?;
            tape.add(&h, &m)
        } else {
            // block update exactly as written: X' = MLP(Norm(attn)) + X
            let m = stream.mlp.apply(tape, &stream.ln2.apply(tape, &attn_out)?, ctx)?;
            tape.add(&m, x)
        }
    }

    /// One bidirectional multimodal attention block over both streams.
    fn bidirectional_block(
        &self,
        tape: &Tape,
        idx: usize,
        x_img: &Tensor,
        x_txt: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, Tensor)> {
        let block = &self.bidir[idx];
        let h = self.cfg.heads;
        let lambda = self.cfg.lambda;
        let (qi, ki, vi) = block.image.attn.project(tape, x_img)?;
        let (qt, kt, vt) = block.text.attn.project(tape, x_txt)?;

        let intra_i = multi_head_attention(tape, &qi, &ki, &vi, h, ctx, idx, StreamKind::IntraImage)?;
        let intra_t = multi_head_attention(tape, &qt, &kt, &vt, h, ctx, idx, StreamKind::IntraText)?;

        let mixed_i = if self.cfg.uni_directional || lambda == 0.0 {
            intra_i
        } else {
            let cross_i =
                multi_head_attention(tape, &qi, &kt, &vt, h, ctx, idx, StreamKind::CrossImageToText)?;
            tape.add(&intra_i, &tape.scale(&cross_i, lambda)?)?
        };
        let mixed_t = if lambda == 0.0 {
            intra_t
        } else {
            let cross_t =
                multi_head_attention(tape, &qt, &ki, &vi, h, ctx, idx, StreamKind::CrossTextToImage)?;
            tape.add(&intra_t, &tape.scale(&cross_t, lambda)?)?
        };

        let out_i = self.bidir_stream_update(tape, &block.image, x_img, &mixed_i, ctx)?;
        let out_t = self.bidir_stream_update(tape, &block.text, x_txt, &mixed_t, ctx)?;
        Ok((out_i, out_t))
    }

    /// Run one bidirectional block on explicit streams. Exposed so the
    /// decoupling and attention-algebra contracts can be checked directly.
    pub fn bidir_forward(
        &self,
        tape: &Tape,
        idx: usize,
        x_img: &Tensor,
        x_txt: &Tensor,
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, Tensor)> {
        if idx >= self.bidir.len() {
            return Err(Error::Contract(format!("no bidirectional block {idx}")));
        }
        self.bidirectional_block(tape, idx, x_img, x_txt, ctx)
    }

    fn self_block(&self, tape: &Tape, idx: usize, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        self.selfs[idx].forward(tape, x, self.cfg.heads, ctx, self.cfg.n_bidirectional + idx)
    }

    /// Text token bag for the active modality switches; `None` when every
    /// text modality is ablated away.
    fn text_tokens(&self, tape: &Tape, case: &Case) -> Result<Option<TokenSequence>> {
        if !self.cfg.use_cc && !self.cfg.use_lab {
            // sex/age alone still form a text bag
        }
        let full = self.text_emb.embed(tape, case)?;
        if self.cfg.use_cc && self.cfg.use_lab {
            return Ok(Some(full));
        }
        // drop ablated modalities row-wise
        let keep: Vec<usize> = full
            .tags
            .iter()
            .enumerate()
            .filter(|(_, tag)| match tag {
                Modality::Cc => self.cfg.use_cc,
                Modality::Lab => self.cfg.use_lab,
                _ => true,
            })
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Ok(None);
        }
        let mut parts: Vec<Tensor> = Vec::new();
        let mut tags = Vec::new();
        let mut run_start = keep[0];
        let mut prev = keep[0];
        for &i in keep.iter().skip(1) {
            if i != prev + 1 {
                parts.push(tape.slice_rows(&full.tokens, run_start, prev + 1)?);
                run_start = i;
            }
            prev = i;
        }
        parts.push(tape.slice_rows(&full.tokens, run_start, prev + 1)?);
        for &i in &keep {
            tags.push(full.tags[i]);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let tokens = tape.concat_rows(&refs)?;
        Ok(Some(TokenSequence::new(tokens, tags)?))
    }

    /// Pooled holistic representation (`[1, D]`) of one slice plus its tags.
    fn holistic(
        &self,
        tape: &Tape,
        case: &Case,
        slice_idx: usize,
        ctx: &mut ForwardCtx,
    ) -> Result<(Tensor, Vec<Modality>)> {
        let image_seq = if self.cfg.use_image {
            let img = case.images.get(slice_idx).ok_or_else(|| {
                Error::Contract(format!("case {}: slice {} missing", case.id, slice_idx))
            })?;
            Some(self.image_emb.embed(tape, img, ctx.train, ctx.rng)?)
        } else {
            None
        };
        let text_seq = self.text_tokens(tape, case)?;

        let (mut x_img, mut x_txt, img_tags, txt_tags) = match (image_seq, text_seq) {
            (Some(i), Some(t)) => (Some(i.tokens), Some(t.tokens), i.tags, t.tags),
            (Some(i), None) => (Some(i.tokens), None, i.tags, Vec::new()),
            (None, Some(t)) => (None, Some(t.tokens), Vec::new(), t.tags),
            (None, None) => return Err(Error::Contract("all modalities removed".into())),
        };

        for b in 0..self.cfg.n_bidirectional {
            match (&x_img, &x_txt) {
                (Some(i), Some(t)) => {
                    let (ni, nt) = self.bidirectional_block(tape, b, i, t, ctx)?;
                    x_img = Some(ni);
                    x_txt = Some(nt);
                }
                // single-modality ablations degrade the block to one
                // intra-modal stream
                (Some(i), None) => {
                    let block = &self.bidir[b];
                    let (q, k, v) = block.image.attn.project(tape, i)?;
                    let intra = multi_head_attention(
                        tape,
                        &q,
                        &k,
                        &v,
                        self.cfg.heads,
                        ctx,
                        b,
                        StreamKind::IntraImage,
                    )?;
                    x_img = Some(self.bidir_stream_update(tape, &block.image, i, &intra, ctx)?);
                }
                (None, Some(t)) => {
                    let block = &self.bidir[b];
                    let (q, k, v) = block.text.attn.project(tape, t)?;
                    let intra = multi_head_attention(
                        tape,
                        &q,
                        &k,
                        &v,
                        self.cfg.heads,
                        ctx,
                        b,
                        StreamKind::IntraText,
                    )?;
                    x_txt = Some(self.bidir_stream_update(tape, &block.text, t, &intra, ctx)?);
                }
                (None, None) => unreachable!(),
            }
        }

        // unified bag: [CLS?] + image tokens + text tokens
        let mut parts: Vec<Tensor> = Vec::new();
        let mut tags: Vec<Modality> = Vec::new();
        if let Some(cls) = &self.cls {
            parts.push(cls.borrow().clone());
            tags.push(Modality::Cls);
        }
        if let Some(i) = x_img {
            parts.push(i);
            tags.extend(img_tags);
        }
        if let Some(t) = x_txt {
            parts.push(t);
            tags.extend(txt_tags);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let mut bag = tape.concat_rows(&refs)?;
        for s in 0..self.cfg.n_self {
            bag = self.self_block(tape, s, &bag, ctx)?;
        }
        let pooled = match self.cfg.pooling {
            Pooling::Average => tape.mean_rows(&bag)?,
            Pooling::Cls => tape.slice_rows(&bag, 0, 1)?,
        };
        Ok((pooled, tags))
    }

    /// Raw logits (`[1, class_count]`) for one case; multi-slice cases are
    /// averaged at the holistic-representation level.
    pub fn forward(&self, tape: &Tape, case: &Case, ctx: &mut ForwardCtx) -> Result<Tensor> {
        if case.labels.len() != self.cfg.class_count {
            return Err(Error::Contract(format!(
                "case {} has {} labels, model expects {}",
                case.id,
                case.labels.len(),
                self.cfg.class_count
            )));
        }
        let n_slices = if self.cfg.use_image {
            case.images.len().max(1)
        } else {
            1
        };
        if self.cfg.use_image && case.images.is_empty() {
            return Err(Error::Contract(format!("case {} has no images", case.id)));
        }
        let mut reps = Vec::with_capacity(n_slices);
        for s in 0..n_slices {
            let (pooled, _) = self.holistic(tape, case, s, ctx)?;
            reps.push(pooled);
        }
        let pooled = aggregate_slices(tape, &reps)?;
        let h = tape.gelu(&self.head1.apply(tape, &pooled)?)?;
        self.head2.apply(tape, &h)
    }

    /// Unified-bag modality tags (single slice), e.g. for attribution.
    pub fn bag_tags(&self, case: &Case) -> Result<Vec<Modality>> {
        let tape = Tape::new();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut ctx = ForwardCtx::new(false, 0.0, &mut rng, None);
        let (_, tags) = self.holistic(&tape, case, 0, &mut ctx)?;
        Ok(tags)
    }

    pub fn checkpoint(&self) -> Result<Vec<u8>> {
        crate::checkpoint::encode_params(&self.params)
    }

    pub fn load_checkpoint(&self, bytes: &[u8]) -> Result<()> {
        crate::checkpoint::load_params(&self.params, bytes)
    }
}

/// Serialize captured attention records in the binary trace container.
pub fn encode_trace(records: &[AttnRecord]) -> Result<Vec<u8>> {
    let entries: Vec<crate::checkpoint::Entry> = records
        .iter()
        .enumerate()
        .map(|(i, r)| crate::checkpoint::Entry {
            name: format!("{i:04}.block{}.{}", r.block, r.kind.name()),
            dims: vec![r.rows, r.cols],
            values: r.weights.clone(),
        })
        .collect();
    crate::checkpoint::encode(crate::checkpoint::TRACE_MAGIC, &entries)
}

/// Tags for `holistic`'s unified bag are Cls-first; expose the CLS index.
pub fn cls_index(tags: &[Modality]) -> Option<usize> {
    tags.iter().position(|t| *t == Modality::Cls)
}

/// Helper shared with tests and tooling: a String describing token counts.
pub fn bag_summary(tags: &[Modality]) -> String {
    let count = |m: Modality| tags.iter().filter(|&&t| t == m).count();
    format!(
        "cls={} image={} cc={} lab={} sex={} age={}",
        count(Modality::Cls),
        count(Modality::Image),
        count(Modality::Cc),
        count(Modality::Lab),
        count(Modality::Sex),
        count(Modality::Age)
    )
}
