use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::image::RgbBuffer;

/// Default multiplier from mean environment radiance to ambient light.
pub const DEFAULT_AMBIENT_SCALE: f64 = 0.35;

#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Uniform([f32; 3]),
    /// Equirectangular image, width exactly twice the height.
    Equirect(RgbBuffer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentAsset {
    pub name: String,
    pub tags: Vec<String>,
    pub background: Background,
    pub ambient_scale: f64,
}

impl EnvironmentAsset {
    pub fn mean_radiance(&self) -> [f64; 3] {
        match &self.background {
            Background::Uniform(c) => [c[0] as f64, c[1] as f64, c[2] as f64],
            Background::Equirect(img) => img.mean(),
        }
    }

    /// Ambient term: mean radiance scaled by `ambient_scale`.
    pub fn ambient(&self) -> [f64; 3] {
        self.mean_radiance().map(|c| c * self.ambient_scale)
    }

    pub fn with_ambient_scale(mut self, scale: f64) -> Self {
        self.ambient_scale = scale;
        self
    }

    pub fn with_tags(mut self, tags: Vec<String>) -> Self {
        self.tags = tags;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSource {
    Color([f32; 3]),
    Path(PathBuf),
}

pub fn load_environment(name: &str, source: &EnvironmentSource) -> Result<EnvironmentAsset, SceneError> {
    let background = match source {
        EnvironmentSource::Color(c) => {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SceneError::Invariant {
                    rule: "color in [0,1]^3",
                    detail: format!("{c:?}"),
                });
            }
            Background::Uniform(*c)
        }
        EnvironmentSource::Path(path) => {
            let img = RgbBuffer::load(path)?;
            if img.width() != 2 * img.height() {
                return Err(SceneError::Aspect { width: img.width(), height: img.height() });
            }
            Background::Equirect(img)
        }
    };
    Ok(EnvironmentAsset {
        name: name.to_string(),
        tags: Vec::new(),
        background,
        ambient_scale: DEFAULT_AMBIENT_SCALE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_image(dir: &std::path::Path, name: &str, w: u32, h: u32) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, RgbBuffer::solid(w, h, [0.2, 0.4, 0.6]).to_png()).unwrap();
        path
    }

    #[test]
    fn uniform_white() {
        let env = load_environment("white", &EnvironmentSource::Color([1.0, 1.0, 1.0])).unwrap();
        assert_eq!(env.background, Background::Uniform([1.0, 1.0, 1.0]));
        assert_eq!(env.mean_radiance(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn equirect_aspect_rule() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write_image(dir.path(), "ok.png", 512, 256);
        let env = load_environment("sky", &EnvironmentSource::Path(ok)).unwrap();
        assert!(matches!(env.background, Background::Equirect(ref img) if img.width() == 512));

        let bad = write_image(dir.path(), "bad.png", 300, 200);
        assert!(matches!(
            load_environment("bad", &EnvironmentSource::Path(bad)),
            Err(SceneError::Aspect { width: 300, height: 200 })
        ));
    }

    #[test]
    fn out_of_range_color_is_rejected() {
        assert!(load_environment("x", &EnvironmentSource::Color([1.5, 0.0, 0.0])).is_err());
    }
}
