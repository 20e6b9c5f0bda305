//! Patient-level domain types shared by the tokenizers, models and trainer.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which clinical task a record belongs to. Task one couples a single
/// radiograph with an unstructured chief complaint; task two couples a stack
/// of CT slices with a structured chief-complaint vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    One,
    Two,
}

impl Task {
    pub fn from_u8(v: u8) -> Result<Task> {
        match v {
            1 => Ok(Task::One),
            2 => Ok(Task::Two),
            other => Err(Error::Contract(alloc::format!("unknown task {other}"))),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            Task::One => 1,
            Task::Two => 2,
        }
    }
}

/// Chief complaint: word ids (task one) or structured real components (task two).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChiefComplaint {
    WordIds(Vec<u32>),
    Structured(Vec<f32>),
}

/// One patient case as stored in the dataset manifest. Images are referenced
/// by relative path and loaded separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// ISO-8601 calendar date (YYYY-MM-DD); lexicographic order is date order.
    pub admission_date: String,
    pub image_paths: Vec<String>,
    pub cc: ChiefComplaint,
    /// Raw laboratory values; `None` marks a missing result.
    pub lab: Vec<Option<f32>>,
    pub sex: u8,
    pub age: f32,
    pub labels: Vec<u8>,
}

impl PatientRecord {
    pub fn validate(&self, class_count: usize, lab_count: usize) -> Result<()> {
        if self.labels.len() != class_count {
            return Err(Error::Contract(alloc::format!(
                "record {}: {} labels, task wants {}",
                self.id,
                self.labels.len(),
                class_count
            )));
        }
        if self.lab.len() != lab_count {
            return Err(Error::Contract(alloc::format!(
                "record {}: {} lab items, task wants {}",
                self.id,
                self.lab.len(),
                lab_count
            )));
        }
        if self.labels.iter().any(|&l| l > 1) {
            return Err(Error::Contract(alloc::format!(
                "record {}: labels must be multi-hot 0/1",
                self.id
            )));
        }
        if self.sex > 1 {
            return Err(Error::Contract(alloc::format!("record {}: sex must be 0/1", self.id)));
        }
        if !(self.age >= 0.0) {
            return Err(Error::Contract(alloc::format!(
                "record {}: age must be nonnegative",
                self.id
            )));
        }
        Ok(())
    }
}

/// A record after preprocessing, ready for a model forward pass: decoded
/// pixel tensors plus normalized clinical fields.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    /// One `[H, W, C]`-flattened pixel tensor per slice, shaped `[H*W*C]`
    /// conceptually but stored as `[H, W]` planes times channels; kept as a
    /// raw buffer with explicit dims for the patch embedder.
    pub images: Vec<ImagePlane>,
    pub cc: ChiefComplaint,
    /// Min-max normalized lab values; -1 marks missing (task one) or imputed
    /// medians already substituted (task two).
    pub lab: Vec<f32>,
    pub sex: f32,
    pub age: f32,
    pub labels: Vec<f32>,
}

/// Raw raster with explicit dimensions, row-major, channel-interleaved.
#[derive(Debug, Clone)]
pub struct ImagePlane {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<ImagePlane> {
        if width * height * channels != pixels.len() {
            return Err(Error::shape(
                "image",
                alloc::format!(
                    "{}x{}x{} wants {} pixels, got {}",
                    width,
                    height,
                    channels,
                    width * height * channels,
                    pixels.len()
                ),
            ));
        }
        Ok(ImagePlane {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(&[self.height, self.width * self.channels], self.pixels.clone())
    }
}

/// Modality tag attached to every token in a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Image,
    Cc,
    Lab,
    Sex,
    Age,
    Cls,
}

/// Ordered token embeddings with per-token modality tags.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub tags: Vec<Modality>,
}

impl TokenSequence {
    pub fn new(tokens: Tensor, tags: Vec<Modality>) -> Result<TokenSequence> {
        let (n, _) = tokens.dims2("token_sequence")?;
        if n != tags.len() {
            return Err(Error::shape(
                "token_sequence",
                alloc::format!("{} tokens vs {} tags", n, tags.len()),
            ));
        }
        Ok(TokenSequence { tokens, tags })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}
