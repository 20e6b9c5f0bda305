//! "MIMG" raster files: 4-byte magic, then width, height and channel count
//! as u32 little-endian, then row-major channel-interleaved float32
//! little-endian pixels. Bit-exact round-trips are part of the contract.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mdt_core::record::ImagePlane;

pub const MAGIC: &[u8; 4] = b"MIMG";
const HEADER_LEN: usize = 4 + 3 * 4;

pub fn encode(img: &ImagePlane) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + img.pixels.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    out.extend_from_slice(&(img.channels as u32).to_le_bytes());
    for &p in &img.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ImagePlane> {
    if bytes.len() < HEADER_LEN {
        bail!("truncated image: {} bytes is shorter than the header", bytes.len());
    }
    if &bytes[..4] != MAGIC {
        bail!("bad image magic {:?}", &bytes[..4]);
    }
    let word = |i: usize| {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[4 + 4 * i..8 + 4 * i]);
        u32::from_le_bytes(b) as usize
    };
    let (width, height, channels) = (word(0), word(1), word(2));
    let n = width * height * channels;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != n * 4 {
        bail!(
            "image payload size mismatch: {}x{}x{} wants {} bytes, file has {}",
            width,
            height,
            channels,
            n * 4,
            payload.len()
        );
    }
    let pixels = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(ImagePlane::new(width, height, channels, pixels)?)
}

pub fn write_file(path: &Path, img: &ImagePlane) -> Result<()> {
    fs::write(path, encode(img)).with_context(|| format!("writing image {}", path.display()))
}

pub fn read_file(path: &Path) -> Result<ImagePlane> {
    let bytes = fs::read(path).with_context(|| format!("reading image {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding image {}", path.display()))
}
