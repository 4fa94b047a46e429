//! Scene rendering: the built-in rasterizer, its buffers, and the seam for
//! substituting an external renderer.

mod backend;
pub mod buffers;
mod raster;
mod sample;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use glam::DVec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageError, RgbBuffer};
use crate::scene::{EnvironmentAsset, MeshAsset, SceneError, SceneState};

pub use backend::{BuiltinRasterizer, RenderBackend};
pub use raster::render;
pub use sample::{sample_equirect, sample_texture};

/// Triangle ids at or above this value belong to the liquid fill disc rather
/// than to the mesh.
pub const LIQUID_TRIANGLE_BASE: u32 = 0x8000_0000;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("unknown {kind} '{name}'")]
    MissingAsset { kind: &'static str, name: String },
    #[error("invalid scene: {0}")]
    Scene(#[from] SceneError),
    #[error("mesh '{0}' declares no opening radius; cannot draw a liquid fill")]
    NoOpening(String),
    #[error("render output violates buffer invariants: {0}")]
    Invariant(String),
    #[error("remote renderer: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Rgb,
    Uv,
    Depth,
    Seg,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Rgb, Modality::Uv, Modality::Depth, Modality::Seg];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Uv => "uv",
            Modality::Depth => "depth",
            Modality::Seg => "seg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Surface coordinate seen through one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UvSample {
    pub u: f32,
    pub v: f32,
    pub triangle: u32,
}

/// Buffers produced by one render, row-major from the top-left pixel.
///
/// A backend that does not produce a modality leaves its buffer empty.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    /// `None` marks background pixels.
    pub uv: Vec<Option<UvSample>>,
    /// Euclidean distance from the camera centre; `+inf` for background.
    pub depth: Vec<f32>,
    pub seg: Vec<bool>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub render_time: f64,
}

impl RenderOutput {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn has(&self, m: Modality) -> bool {
        let n = match m {
            Modality::Rgb => self.rgb.len(),
            Modality::Uv => self.uv.len(),
            Modality::Depth => self.depth.len(),
            Modality::Seg => self.seg.len(),
        };
        n > 0
    }

    pub fn modalities(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|m| self.has(*m)).collect()
    }

    pub fn rgb_image(&self) -> RgbBuffer {
        RgbBuffer::new(self.width, self.height, self.rgb.clone()).expect("rgb buffer matches resolution")
    }

    /// Same buffers with a different rgb image (e.g. after post controls).
    pub fn with_rgb(mut self, image: RgbBuffer) -> Self {
        assert_eq!((image.width(), image.height()), (self.width, self.height));
        self.rgb = image.into_pixels();
        self
    }

    pub fn object_pixels(&self) -> usize {
        self.seg.iter().filter(|s| **s).count()
    }

    /// Check resolution agreement, value ranges, and that segmentation,
    /// uv and depth agree on which pixels show the object.
    pub fn check_invariants(&self) -> Result<(), RenderError> {
        let n = self.pixel_count();
        let bad = |msg: String| Err(RenderError::Invariant(msg));
        for m in self.modalities() {
            let len = match m {
                Modality::Rgb => self.rgb.len(),
                Modality::Uv => self.uv.len(),
                Modality::Depth => self.depth.len(),
                Modality::Seg => self.seg.len(),
            };
            if len != n {
                return bad(format!("{} buffer has {len} pixels, expected {n}", m.name()));
            }
        }
        if !self.has(Modality::Rgb) {
            return bad("rgb buffer missing".into());
        }
        if let Some(i) = self.rgb.iter().position(|p| p.iter().any(|c| !(0.0..=1.0).contains(c))) {
            return bad(format!("rgb value out of [0,1] at pixel {i}"));
        }
        for i in 0..n {
            let mut flags = Vec::with_capacity(3);
            if self.has(Modality::Seg) {
                flags.push(self.seg[i]);
            }
            if self.has(Modality::Uv) {
                if let Some(s) = self.uv[i] {
                    if !(0.0..=1.0).contains(&s.u) || !(0.0..=1.0).contains(&s.v) {
                        return bad(format!("uv out of [0,1] at pixel {i}"));
                    }
                }
                flags.push(self.uv[i].is_some());
            }
            if self.has(Modality::Depth) {
                let d = self.depth[i];
                if d.is_nan() || d < 0.0 {
                    return bad(format!("invalid depth {d} at pixel {i}"));
                }
                flags.push(d.is_finite());
            }
            if flags.windows(2).any(|w| w[0] != w[1]) {
                return bad(format!("seg/uv/depth disagree at pixel {i}"));
            }
        }
        Ok(())
    }

    /// Buffers with identical contents (render time ignored).
    pub fn same_buffers(&self, other: &RenderOutput) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.rgb == other.rgb
            && self.uv == other.uv
            && self.depth.iter().map(|d| d.to_bits()).eq(other.depth.iter().map(|d| d.to_bits()))
            && self.seg == other.seg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureAsset {
    pub name: String,
    pub image: RgbBuffer,
    /// Wrap UVs outside the image (repeat) instead of clamping to the edge.
    pub tiling: bool,
}

impl TextureAsset {
    pub fn solid(name: &str, color: [f32; 3]) -> Self {
        Self { name: name.to_string(), image: RgbBuffer::solid(1, 1, color), tiling: false }
    }

    pub fn load(name: &str, path: &Path, tiling: bool) -> Result<Self, ImageError> {
        Ok(Self { name: name.to_string(), image: RgbBuffer::load(path)?, tiling })
    }
}

/// Texture name that always resolves, to plain white, unless overridden.
pub const WHITE_TEXTURE: &str = "white";

/// Loaded assets addressable by name; immutable once built.
#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    meshes: BTreeMap<String, Arc<MeshAsset>>,
    environments: BTreeMap<String, Arc<EnvironmentAsset>>,
    textures: BTreeMap<String, Arc<TextureAsset>>,
}

impl AssetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_mesh(&mut self, mesh: MeshAsset) -> &mut Self {
        self.meshes.insert(mesh.name.clone(), Arc::new(mesh));
        self
    }

    pub fn add_environment(&mut self, env: EnvironmentAsset) -> &mut Self {
        self.environments.insert(env.name.clone(), Arc::new(env));
        self
    }

    pub fn add_texture(&mut self, texture: TextureAsset) -> &mut Self {
        self.textures.insert(texture.name.clone(), Arc::new(texture));
        self
    }

    pub fn mesh(&self, name: &str) -> Result<&MeshAsset, RenderError> {
        self.meshes
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| RenderError::MissingAsset { kind: "mesh", name: name.into() })
    }

    pub fn environment(&self, name: &str) -> Result<&EnvironmentAsset, RenderError> {
        self.environments
            .get(name)
            .map(|e| e.as_ref())
            .ok_or_else(|| RenderError::MissingAsset { kind: "environment", name: name.into() })
    }

    pub fn texture(&self, name: &str) -> Result<TextureRef<'_>, RenderError> {
        match self.textures.get(name) {
            Some(t) => Ok(TextureRef::Asset(t)),
            None if name == WHITE_TEXTURE => Ok(TextureRef::White),
            None => Err(RenderError::MissingAsset { kind: "texture", name: name.into() }),
        }
    }

    pub fn mesh_names(&self) -> impl Iterator<Item = &str> {
        self.meshes.keys().map(String::as_str)
    }

    pub fn environment_names(&self) -> impl Iterator<Item = &str> {
        self.environments.keys().map(String::as_str)
    }

    pub fn texture_names(&self) -> impl Iterator<Item = &str> {
        self.textures.keys().map(String::as_str)
    }
}

pub enum TextureRef<'a> {
    Asset(&'a TextureAsset),
    White,
}

impl TextureRef<'_> {
    pub fn sample(&self, uv: DVec2) -> [f64; 3] {
        match self {
            TextureRef::Asset(t) => sample_texture(&t.image, uv.x, uv.y, t.tiling),
            TextureRef::White => [1.0; 3],
        }
    }
}

/// Base colours blended by the liquid fill. Water is tinted towards the
/// environment's mean radiance by `water_env_mix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiquidPalette {
    pub water: [f64; 3],
    pub water_env_mix: f64,
    pub milk: [f64; 3],
    pub coffee: [f64; 3],
}

impl Default for LiquidPalette {
    fn default() -> Self {
        Self {
            water: [0.55, 0.65, 0.75],
            water_env_mix: 0.3,
            milk: [0.95, 0.94, 0.9],
            coffee: [0.3, 0.18, 0.09],
        }
    }
}

impl LiquidPalette {
    /// Colour of a normalized `(water, milk, coffee)` mixture.
    pub fn blend(&self, ratios: [f64; 3], env_mean: [f64; 3]) -> [f64; 3] {
        let m = self.water_env_mix;
        let water = [0, 1, 2].map(|c| (1.0 - m) * self.water[c] + m * env_mean[c]);
        [0, 1, 2].map(|c| ratios[0] * water[c] + ratios[1] * self.milk[c] + ratios[2] * self.coffee[c])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub palette: LiquidPalette,
}

/// Projected triangle corner: pixel coordinates and reciprocal view depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    pub inv_w: f64,
}

/// Perspective-correct barycentric weights of `pixel` in `tri`, or `None`
/// for a zero-area triangle.
pub fn perspective_weights(pixel: (f64, f64), tri: &[ScreenVertex; 3]) -> Option<[f64; 3]> {
    let [a, b, c] = tri;
    let area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if area.abs() < 1e-12 {
        return None;
    }
    let (px, py) = pixel;
    let w0 = ((c.x - b.x) * (py - b.y) - (c.y - b.y) * (px - b.x)) / area;
    let w1 = ((a.x - c.x) * (py - c.y) - (a.y - c.y) * (px - c.x)) / area;
    let w2 = 1.0 - w0 - w1;
    let q = [w0 * a.inv_w, w1 * b.inv_w, w2 * c.inv_w];
    let s = q[0] + q[1] + q[2];
    Some(q.map(|x| x / s))
}

/// Perspective-correct UV at `pixel`; `None` for a degenerate triangle.
pub fn barycentric_uv(pixel: (f64, f64), tri: &[ScreenVertex; 3], uvs: &[DVec2; 3]) -> Option<DVec2> {
    let w = perspective_weights(pixel, tri)?;
    Some(uvs[0] * w[0] + uvs[1] * w[1] + uvs[2] * w[2])
}

/// Resolve the texture a scene shows: `"original"` maps to the mesh's own.
pub fn active_texture<'a>(state: &'a SceneState, mesh: &'a MeshAsset) -> &'a str {
    if state.texture == crate::scene::ORIGINAL_TEXTURE {
        &mesh.base_texture
    } else {
        &state.texture
    }
}
