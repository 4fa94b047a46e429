//! Bilinear image lookups: equirectangular backgrounds and UV textures.

use std::f64::consts::{PI, TAU};

use glam::DVec3;

use crate::image::RgbBuffer;

/// Bilinear fetch at continuous texel coordinates (texel centres at integer
/// positions). Columns wrap when `wrap_x`, rows wrap when `wrap_y`; otherwise
/// coordinates clamp to the edge texels.
pub(crate) fn bilinear(img: &RgbBuffer, x: f64, y: f64, wrap_x: bool, wrap_y: bool) -> [f64; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let index = |i: i64, n: i64, wrap: bool| if wrap { i.rem_euclid(n) } else { i.clamp(0, n - 1) };
    let x0 = x.floor();
    let y0 = y.floor();
    let tx = x - x0;
    let ty = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let xa = index(x0, w, wrap_x) as u32;
    let xb = index(x0 + 1, w, wrap_x) as u32;
    let ya = index(y0, h, wrap_y) as u32;
    let yb = index(y0 + 1, h, wrap_y) as u32;
    let lerp = |a: [f32; 3], b: [f32; 3], t: f64| [0, 1, 2].map(|c| a[c] as f64 + (b[c] as f64 - a[c] as f64) * t);
    let top = lerp(img.get(xa, ya), img.get(xb, ya), tx);
    let bottom = lerp(img.get(xa, yb), img.get(xb, yb), tx);
    [0, 1, 2].map(|c| top[c] + (bottom[c] - top[c]) * ty)
}

/// Radiance of an equirectangular map along a unit `direction`.
///
/// Longitude is measured from −Z (the default camera's forward direction)
/// towards +X and maps to the horizontal axis with −Z at the centre column;
/// latitude maps +Y to the top row. Filtering is bilinear, wrapping
/// horizontally and clamping at the poles.
pub fn sample_equirect(direction: DVec3, image: &RgbBuffer) -> [f64; 3] {
    let lon = direction.x.atan2(-direction.z);
    let lat = direction.y.clamp(-1.0, 1.0).asin();
    let u = 0.5 + lon / TAU;
    let v = 0.5 - lat / PI;
    let x = u * image.width() as f64 - 0.5;
    let y = v * image.height() as f64 - 0.5;
    bilinear(image, x, y, true, false)
}

/// Texture lookup at `(u, v)` with `v = 0` at the bottom image row.
pub fn sample_texture(image: &RgbBuffer, u: f64, v: f64, tiling: bool) -> [f64; 3] {
    let x = u * image.width() as f64 - 0.5;
    let y = (1.0 - v) * image.height() as f64 - 0.5;
    bilinear(image, x, y, tiling, tiling)
}
