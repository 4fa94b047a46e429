use std::f64::consts::{FRAC_PI_2, PI, TAU};

use super::{ControlDescriptor, ControlError, ControlKind, Literal, ParamDecl, Params, RenderedControl};
use crate::math::spherical_direction;
use crate::scene::{SceneState, ORIGINAL_TEXTURE};

pub const LIQUID_WATER: &str = "liquid_fill.water";
pub const LIQUID_MILK: &str = "liquid_fill.milk";
pub const LIQUID_COFFEE: &str = "liquid_fill.coffee";
pub const LIQUID_LEVEL: &str = "liquid_fill.level";

macro_rules! descriptor_accessor {
    () => {
        fn descriptor(&self) -> &ControlDescriptor {
            &self.descriptor
        }
    };
}

/// Euler rotation, additive per axis.
pub struct Orientation {
    descriptor: ControlDescriptor,
}

impl Orientation {
    pub fn new() -> Self {
        let p = |n| ParamDecl::continuous(n, -TAU, TAU, 0.0);
        Self { descriptor: ControlDescriptor::new("orientation", ControlKind::Rendered, vec![p("yaw"), p("pitch"), p("roll")]) }
    }
}

impl RenderedControl for Orientation {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let mut next = state.clone();
        next.object.rotation.yaw += params.number("yaw");
        next.object.rotation.pitch += params.number("pitch");
        next.object.rotation.roll += params.number("roll");
        Ok(next)
    }
}

/// Orbit camera around its look-at point.
///
/// Azimuth/elevation are absolute angles (0, 0 is the default +Z view);
/// `distance_scale` multiplies the current distance; `zoom` narrows the
/// field of view so that `tan(fov'/2) = tan(fov/2) / zoom`.
pub struct CameraControl {
    descriptor: ControlDescriptor,
}

impl CameraControl {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "camera",
                ControlKind::Rendered,
                vec![
                    ParamDecl::continuous("azimuth", -PI, PI, 0.0),
                    ParamDecl::continuous("elevation", -FRAC_PI_2, FRAC_PI_2, 0.0),
                    ParamDecl::continuous("distance_scale", 0.25, 4.0, 1.0),
                    ParamDecl::continuous("zoom", 0.25, 4.0, 1.0),
                ],
            ),
        }
    }
}

impl RenderedControl for CameraControl {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let mut next = state.clone();
        let cam = &mut next.camera;
        let radius = cam.position.distance(cam.look_at) * params.number("distance_scale");
        cam.position = cam.look_at + spherical_direction(params.number("azimuth"), params.number("elevation")) * radius;
        cam.fov_y = 2.0 * ((cam.fov_y * 0.5).tan() / params.number("zoom")).atan();
        Ok(next)
    }
}

/// Ground-plane (XZ) translation, additive.
pub struct Position {
    descriptor: ControlDescriptor,
}

impl Position {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "position",
                ControlKind::Rendered,
                vec![ParamDecl::continuous("dx", -10.0, 10.0, 0.0), ParamDecl::continuous("dy", -10.0, 10.0, 0.0)],
            ),
        }
    }
}

impl RenderedControl for Position {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let mut next = state.clone();
        next.object.translation.x += params.number("dx");
        next.object.translation.z += params.number("dy");
        Ok(next)
    }
}

/// Uniform scale, multiplicative.
pub struct Scale {
    descriptor: ControlDescriptor,
}

impl Scale {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "scale",
                ControlKind::Rendered,
                vec![ParamDecl::continuous("factor", 0.05, 20.0, 1.0)],
            ),
        }
    }
}

impl RenderedControl for Scale {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let mut next = state.clone();
        next.object.scale *= params.number("factor");
        Ok(next)
    }
}

/// Selects the environment by index into the experiment's environment list.
pub struct Background {
    descriptor: ControlDescriptor,
}

impl Background {
    /// # Panics
    /// If `environments` is empty.
    pub fn new(environments: &[String]) -> Self {
        assert!(!environments.is_empty(), "background control needs at least one environment");
        let values = environments.iter().cloned().map(Literal::Text).collect();
        Self {
            descriptor: ControlDescriptor::new(
                "background",
                ControlKind::Rendered,
                vec![ParamDecl::discrete("environment", values, 0)],
            ),
        }
    }
}

impl RenderedControl for Background {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let mut next = state.clone();
        next.environment = params.choice("environment").to_string();
        Ok(next)
    }
}

/// Replaces the object's texture; index 0 is always the original texture.
pub struct TextureSwap {
    descriptor: ControlDescriptor,
}

impl TextureSwap {
    pub fn new(textures: &[String]) -> Self {
        let values = std::iter::once(ORIGINAL_TEXTURE.to_string())
            .chain(textures.iter().filter(|t| t.as_str() != ORIGINAL_TEXTURE).cloned())
            .map(Literal::Text)
            .collect();
        Self {
            descriptor: ControlDescriptor::new(
                "texture_swap",
                ControlKind::Rendered,
                vec![ParamDecl::discrete("texture", values, 0)],
            ),
        }
    }
}

impl RenderedControl for TextureSwap {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let mut next = state.clone();
        next.texture = params.choice("texture").to_string();
        Ok(next)
    }
}

/// Sun position and colour as a function of the hour.
///
/// Elevation follows `(pi/2) sin(pi (hour - 6) / 12)`: sunrise at 6, zenith
/// at 12, below the horizon at night (zero direct light). Colour ramps from
/// warm near the horizon to cool white at high elevation.
pub struct TimeOfDay {
    descriptor: ControlDescriptor,
}

pub(crate) const SUN_WARM: [f64; 3] = [1.0, 0.55, 0.3];
pub(crate) const SUN_COOL: [f64; 3] = [0.85, 0.92, 1.0];

impl TimeOfDay {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "time_of_day",
                ControlKind::Rendered,
                vec![ParamDecl::continuous("hour", 0.0, 24.0, 12.0)],
            ),
        }
    }

    /// `(direction towards the sun, color, intensity)` for an hour in `[0, 24]`.
    pub fn sun(hour: f64) -> (glam::DVec3, [f64; 3], f64) {
        let phase = PI * (hour.rem_euclid(24.0) - 6.0) / 12.0;
        let elevation = FRAC_PI_2 * phase.sin();
        let azimuth = phase - FRAC_PI_2;
        let t = elevation.max(0.0).sin();
        let color = [0, 1, 2].map(|c| SUN_WARM[c] + (SUN_COOL[c] - SUN_WARM[c]) * t);
        (spherical_direction(azimuth, elevation).normalize(), color, t)
    }
}

impl RenderedControl for TimeOfDay {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let (direction, color, intensity) = Self::sun(params.number("hour"));
        let mut next = state.clone();
        next.light.direction = direction;
        next.light.color = color;
        next.light.intensity = intensity;
        Ok(next)
    }
}

/// Liquid mixture inside the mesh's opening. Ratios are normalized to sum to
/// one and stored in the scene extras; the renderer draws the fill disc.
pub struct LiquidFill {
    descriptor: ControlDescriptor,
}

impl LiquidFill {
    pub fn new() -> Self {
        Self {
            descriptor: ControlDescriptor::new(
                "liquid_fill",
                ControlKind::Rendered,
                vec![
                    ParamDecl::continuous("water", 0.0, 1.0, 0.0),
                    ParamDecl::continuous("milk", 0.0, 1.0, 0.0),
                    ParamDecl::continuous("coffee", 0.0, 1.0, 1.0),
                    ParamDecl::continuous("level", 0.0, 1.0, 0.7),
                ],
            ),
        }
    }
}

impl RenderedControl for LiquidFill {
    descriptor_accessor!();

    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError> {
        let ratios = [params.number("water"), params.number("milk"), params.number("coffee")];
        let total: f64 = ratios.iter().sum();
        if !(total > 0.0) {
            return Err(ControlError::Invalid {
                control: params.control().to_string(),
                reason: "liquid ratios (0, 0, 0) cannot be normalized".into(),
            });
        }
        let mut next = state.clone();
        for (key, r) in [LIQUID_WATER, LIQUID_MILK, LIQUID_COFFEE].into_iter().zip(ratios) {
            next.extras.insert(key.to_string(), r / total);
        }
        next.extras.insert(LIQUID_LEVEL.to_string(), params.number("level"));
        Ok(next)
    }
}
