use std::sync::Arc;

use super::{render, AssetStore, Modality, RenderError, RenderOutput, RenderSettings};
use crate::scene::SceneState;

/// Anything that can turn a scene state into render buffers.
pub trait RenderBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Buffers every render from this backend carries.
    fn modalities(&self) -> Vec<Modality>;
    fn render(&self, state: &SceneState) -> Result<RenderOutput, RenderError>;
}

/// The in-process software rasterizer.
#[derive(Clone)]
pub struct BuiltinRasterizer {
    assets: Arc<AssetStore>,
    settings: RenderSettings,
}

impl BuiltinRasterizer {
    pub fn new(assets: Arc<AssetStore>, settings: RenderSettings) -> Self {
        Self { assets, settings }
    }

    pub fn assets(&self) -> &AssetStore {
        &self.assets
    }
}

impl RenderBackend for BuiltinRasterizer {
    fn name(&self) -> &str {
        "builtin"
    }

    fn modalities(&self) -> Vec<Modality> {
        Modality::ALL.to_vec()
    }

    fn render(&self, state: &SceneState) -> Result<RenderOutput, RenderError> {
        render(state, &self.assets, &self.settings)
    }
}
