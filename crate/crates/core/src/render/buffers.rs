//! Byte layouts for render buffers, shared by the wire protocol and the
//! on-disk run directory.
//!
//! | buffer | layout (row-major, top-left first)                                   |
//! |--------|----------------------------------------------------------------------|
//! | rgb    | `f32` little-endian triples, or an 8-bit PNG                          |
//! | uv     | 12-byte records: `f32` u, `f32` v, `u32` triangle id (all LE); background = NaN, NaN, `u32::MAX` |
//! | depth  | `f32` little-endian, `+inf` for background                            |
//! | seg    | one byte per pixel, 0 or 1                                            |
//!
//! On the wire each buffer is base64 in a JSON envelope alongside the CRC32
//! (IEEE) of its raw bytes.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Modality, RenderOutput, UvSample};
use crate::image::RgbBuffer;

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("{0} buffer: invalid base64")]
    Base64(&'static str),
    #[error("{modality} buffer: checksum mismatch (expected {expected:08x}, got {actual:08x})")]
    Checksum { modality: &'static str, expected: u32, actual: u32 },
    #[error("{modality} buffer: {actual} bytes, expected {expected}")]
    Length { modality: &'static str, expected: usize, actual: usize },
    #[error("{modality} buffer: {message}")]
    Format { modality: &'static str, message: String },
    #[error("{modality} buffer missing")]
    Missing { modality: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    F32le,
    Png,
    Uv12,
    U8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedBuffer {
    pub encoding: Encoding,
    pub crc32: u32,
    /// Base64 (standard alphabet, padded) of the raw bytes.
    pub data: String,
}

impl EncodedBuffer {
    pub fn new(encoding: Encoding, raw: &[u8]) -> Self {
        Self { encoding, crc32: crc32fast::hash(raw), data: STANDARD.encode(raw) }
    }

    pub fn raw(&self, modality: Modality) -> Result<Vec<u8>, BufferError> {
        let raw = STANDARD.decode(&self.data).map_err(|_| BufferError::Base64(modality.name()))?;
        let actual = crc32fast::hash(&raw);
        if actual != self.crc32 {
            return Err(BufferError::Checksum { modality: modality.name(), expected: self.crc32, actual });
        }
        Ok(raw)
    }
}

pub fn rgb_to_f32le(rgb: &[[f32; 3]]) -> Vec<u8> {
    rgb.iter().flatten().flat_map(|c| c.to_le_bytes()).collect()
}

pub fn uv_to_bytes(uv: &[Option<UvSample>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(uv.len() * 12);
    for s in uv {
        let (u, v, t) = match s {
            Some(s) => (s.u, s.v, s.triangle),
            None => (f32::NAN, f32::NAN, u32::MAX),
        };
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn depth_to_bytes(depth: &[f32]) -> Vec<u8> {
    depth.iter().flat_map(|d| d.to_le_bytes()).collect()
}

pub fn seg_to_bytes(seg: &[bool]) -> Vec<u8> {
    seg.iter().map(|s| *s as u8).collect()
}

fn check_len(modality: Modality, raw: &[u8], expected: usize) -> Result<(), BufferError> {
    if raw.len() != expected {
        return Err(BufferError::Length { modality: modality.name(), expected, actual: raw.len() });
    }
    Ok(())
}

fn f32s(raw: &[u8]) -> impl Iterator<Item = f32> + '_ {
    raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn rgb_from_f32le(raw: &[u8], pixels: usize) -> Result<Vec<[f32; 3]>, BufferError> {
    check_len(Modality::Rgb, raw, pixels * 12)?;
    let v: Vec<f32> = f32s(raw).collect();
    Ok(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

pub fn rgb_from_png(raw: &[u8], width: u32, height: u32) -> Result<Vec<[f32; 3]>, BufferError> {
    let img = RgbBuffer::decode(raw).map_err(|e| BufferError::Format { modality: "rgb", message: e.to_string() })?;
    if (img.width(), img.height()) != (width, height) {
        return Err(BufferError::Format {
            modality: "rgb",
            message: format!("png is {}x{}, expected {width}x{height}", img.width(), img.height()),
        });
    }
    Ok(img.into_pixels())
}

pub fn uv_from_bytes(raw: &[u8], pixels: usize) -> Result<Vec<Option<UvSample>>, BufferError> {
    check_len(Modality::Uv, raw, pixels * 12)?;
    Ok(raw
        .chunks_exact(12)
        .map(|r| {
            let triangle = u32::from_le_bytes([r[8], r[9], r[10], r[11]]);
            if triangle == u32::MAX {
                None
            } else {
                Some(UvSample {
                    u: f32::from_le_bytes([r[0], r[1], r[2], r[3]]),
                    v: f32::from_le_bytes([r[4], r[5], r[6], r[7]]),
                    triangle,
                })
            }
        })
        .collect())
}

pub fn depth_from_bytes(raw: &[u8], pixels: usize) -> Result<Vec<f32>, BufferError> {
    check_len(Modality::Depth, raw, pixels * 4)?;
    Ok(f32s(raw).collect())
}

pub fn seg_from_bytes(raw: &[u8], pixels: usize) -> Result<Vec<bool>, BufferError> {
    check_len(Modality::Seg, raw, pixels)?;
    raw.iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(BufferError::Format { modality: "seg", message: format!("byte {other} is not 0 or 1") }),
        })
        .collect()
}

/// JSON envelope for a render crossing a process boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRender {
    pub width: u32,
    pub height: u32,
    pub render_time: f64,
    pub buffers: BTreeMap<Modality, EncodedBuffer>,
}

impl WireRender {
    /// Encode the listed modalities present in `out`. `rgb_png` selects the
    /// lossy 8-bit PNG form for the colour buffer.
    pub fn encode(out: &RenderOutput, modalities: &[Modality], rgb_png: bool) -> Self {
        let mut buffers = BTreeMap::new();
        for &m in modalities {
            if !out.has(m) {
                continue;
            }
            let buf = match m {
                Modality::Rgb if rgb_png => EncodedBuffer::new(Encoding::Png, &out.rgb_image().to_png()),
                Modality::Rgb => EncodedBuffer::new(Encoding::F32le, &rgb_to_f32le(&out.rgb)),
                Modality::Uv => EncodedBuffer::new(Encoding::Uv12, &uv_to_bytes(&out.uv)),
                Modality::Depth => EncodedBuffer::new(Encoding::F32le, &depth_to_bytes(&out.depth)),
                Modality::Seg => EncodedBuffer::new(Encoding::U8, &seg_to_bytes(&out.seg)),
            };
            buffers.insert(m, buf);
        }
        Self { width: out.width, height: out.height, render_time: out.render_time, buffers }
    }

    /// Decode, verifying checksums and lengths. Absent modalities come back
    /// as empty buffers.
    pub fn decode(&self) -> Result<RenderOutput, BufferError> {
        let n = self.width as usize * self.height as usize;
        let mut out = RenderOutput {
            width: self.width,
            height: self.height,
            rgb: Vec::new(),
            uv: Vec::new(),
            depth: Vec::new(),
            seg: Vec::new(),
            render_time: self.render_time,
        };
        for (&m, buf) in &self.buffers {
            let raw = buf.raw(m)?;
            let wrong = || BufferError::Format { modality: m.name(), message: format!("unexpected encoding {:?}", buf.encoding) };
            match (m, buf.encoding) {
                (Modality::Rgb, Encoding::F32le) => out.rgb = rgb_from_f32le(&raw, n)?,
                (Modality::Rgb, Encoding::Png) => out.rgb = rgb_from_png(&raw, self.width, self.height)?,
                (Modality::Uv, Encoding::Uv12) => out.uv = uv_from_bytes(&raw, n)?,
                (Modality::Depth, Encoding::F32le) => out.depth = depth_from_bytes(&raw, n)?,
                (Modality::Seg, Encoding::U8) => out.seg = seg_from_bytes(&raw, n)?,
                _ => return Err(wrong()),
            }
        }
        if out.rgb.is_empty() {
            return Err(BufferError::Missing { modality: "rgb" });
        }
        Ok(out)
    }
}

/// File name of each saved buffer inside `buffers/{id}/`.
pub fn file_name(m: Modality) -> &'static str {
    match m {
        Modality::Rgb => "rgb.png",
        Modality::Uv => "uv.bin",
        Modality::Depth => "depth.bin",
        Modality::Seg => "seg.bin",
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BufferError + '_ {
    move |source| BufferError::Io { path: path.display().to_string(), source }
}

/// Write the requested buffers of `out` into `dir` (created if needed).
pub fn save(dir: &Path, out: &RenderOutput, modalities: &[Modality]) -> Result<(), BufferError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for &m in modalities {
        if !out.has(m) {
            continue;
        }
        let bytes = match m {
            Modality::Rgb => out.rgb_image().to_png(),
            Modality::Uv => uv_to_bytes(&out.uv),
            Modality::Depth => depth_to_bytes(&out.depth),
            Modality::Seg => seg_to_bytes(&out.seg),
        };
        let path = dir.join(file_name(m));
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn load_uv(path: &Path, width: u32, height: u32) -> Result<Vec<Option<UvSample>>, BufferError> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    uv_from_bytes(&raw, width as usize * height as usize)
}

pub fn load_seg(path: &Path, width: u32, height: u32) -> Result<Vec<bool>, BufferError> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    seg_from_bytes(&raw, width as usize * height as usize)
}

pub fn load_depth(path: &Path, width: u32, height: u32) -> Result<Vec<f32>, BufferError> {
    let raw = std::fs::read(path).map_err(io_err(path))?;
    depth_from_bytes(&raw, width as usize * height as usize)
}
