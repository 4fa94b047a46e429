//! Assets and the mutable scene state that controls act upon.

mod environment;
mod obj;
pub mod primitives;

use std::collections::{BTreeMap, BTreeSet};

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{look_at_basis, rotation_from_euler};

pub use environment::{load_environment, Background, EnvironmentAsset, EnvironmentSource};
pub use obj::{load_mesh, parse_obj};

/// Margin applied on top of the tight bounding-sphere framing distance.
pub const FRAMING_MARGIN: f64 = 1.15;
/// Default vertical field of view (radians).
pub const DEFAULT_FOV_Y: f64 = std::f64::consts::FRAC_PI_4;
pub const MIN_RESOLUTION: u32 = 16;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violated ({rule}): {detail}")]
    Invariant { rule: &'static str, detail: String },
    #[error("environment aspect must be exactly 2:1, got {width}x{height}")]
    Aspect { width: u32, height: u32 },
    #[error("degenerate mesh '{0}': bounding sphere has zero radius")]
    DegenerateMesh(String),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

fn invariant(rule: &'static str, detail: impl Into<String>) -> SceneError {
    SceneError::Invariant { rule, detail: detail.into() }
}

/// One triangle corner: indices into the vertex, uv and normal lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corner {
    pub vertex: usize,
    pub uv: usize,
    pub normal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshAsset {
    pub name: String,
    pub label_set: BTreeSet<String>,
    pub vertices: Vec<DVec3>,
    pub uvs: Vec<DVec2>,
    /// Unit normals. Faces without authored normals reference a per-face
    /// normal computed from winding order at load time.
    pub normals: Vec<DVec3>,
    pub triangles: Vec<[Corner; 3]>,
    pub base_texture: String,
    /// Radius of the interior opening used by the liquid fill, if the mesh
    /// declares one.
    pub opening_radius: Option<f64>,
}

impl MeshAsset {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.triangles.is_empty() {
            return Err(invariant("at least one triangle", format!("mesh '{}' has none", self.name)));
        }
        if self.label_set.is_empty() {
            return Err(invariant("label_set non-empty", format!("mesh '{}'", self.name)));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            for c in tri {
                if c.vertex >= self.vertices.len() {
                    return Err(invariant(
                        "vertex index in range",
                        format!("triangle {t} references vertex {} of {}", c.vertex + 1, self.vertices.len()),
                    ));
                }
                if c.uv >= self.uvs.len() {
                    return Err(invariant(
                        "uv index in range",
                        format!("triangle {t} references uv {} of {}", c.uv + 1, self.uvs.len()),
                    ));
                }
                if c.normal >= self.normals.len() {
                    return Err(invariant(
                        "normal index in range",
                        format!("triangle {t} references normal {} of {}", c.normal + 1, self.normals.len()),
                    ));
                }
            }
        }
        for (i, uv) in self.uvs.iter().enumerate() {
            if !(0.0..=1.0).contains(&uv.x) || !(0.0..=1.0).contains(&uv.y) {
                return Err(invariant("uv in [0,1]", format!("uv {} = ({}, {})", i + 1, uv.x, uv.y)));
            }
        }
        if let Some(r) = self.opening_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invariant("opening radius > 0", format!("{r}")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (DVec3, DVec3) {
        self.vertices.iter().fold(
            (DVec3::splat(f64::INFINITY), DVec3::splat(f64::NEG_INFINITY)),
            |(lo, hi), v| (lo.min(*v), hi.max(*v)),
        )
    }

    /// Bounding sphere centred on the bounding-box centre.
    pub fn bounding_sphere(&self) -> (DVec3, f64) {
        let (lo, hi) = self.bounds();
        let center = (lo + hi) * 0.5;
        let radius = self.vertices.iter().map(|v| v.distance(center)).fold(0.0, f64::max);
        (center, radius)
    }

    /// Serialize as a Wavefront OBJ that [`parse_obj`] reads back.
    pub fn to_obj(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for label in &self.label_set {
            let _ = writeln!(s, "# @label {label}");
        }
        let _ = writeln!(s, "# @texture {}", self.base_texture);
        if let Some(r) = self.opening_radius {
            let _ = writeln!(s, "# @opening_radius {r}");
        }
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.uvs {
            let _ = writeln!(s, "vt {} {}", t.x, t.y);
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
        for tri in &self.triangles {
            let _ = write!(s, "f");
            for c in tri {
                let _ = write!(s, " {}/{}/{}", c.vertex + 1, c.uv + 1, c.normal + 1);
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Euler {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Euler {
    pub const IDENTITY: Euler = Euler { yaw: 0.0, pitch: 0.0, roll: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectTransform {
    pub translation: DVec3,
    pub rotation: Euler,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub look_at: DVec3,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub resolution: Resolution,
}

impl Camera {
    /// Half-angle of the narrower of the two image axes.
    pub fn min_half_fov(&self) -> f64 {
        let half_v = self.fov_y * 0.5;
        let half_h = (half_v.tan() * self.resolution.aspect()).atan();
        half_v.min(half_h)
    }

    /// Project a world point to continuous pixel coordinates (origin at the
    /// top-left image corner, pixel centres at +0.5). `None` behind the camera.
    pub fn project(&self, p: DVec3) -> Option<(f64, f64)> {
        let (right, up, forward) = look_at_basis(self.position, self.look_at);
        let d = p - self.position;
        let z = d.dot(forward);
        if z <= 0.0 {
            return None;
        }
        let t = (self.fov_y * 0.5).tan();
        let ndc_x = d.dot(right) / (z * t * self.resolution.aspect());
        let ndc_y = d.dot(up) / (z * t);
        let w = self.resolution.width as f64;
        let h = self.resolution.height as f64;
        Some(((ndc_x + 1.0) * 0.5 * w, (1.0 - ndc_y) * 0.5 * h))
    }
}

/// Directional light. `direction` points from the surface towards the light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub direction: DVec3,
    pub color: [f64; 3],
    pub intensity: f64,
}

/// Texture id meaning "the mesh's own base texture".
pub const ORIGINAL_TEXTURE: &str = "original";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneState {
    pub mesh: String,
    pub environment: String,
    pub object: ObjectTransform,
    pub camera: Camera,
    pub light: Light,
    /// Active texture id; [`ORIGINAL_TEXTURE`] resolves to the mesh's base texture.
    pub texture: String,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
}

impl SceneState {
    pub fn validate(&self) -> Result<(), SceneError> {
        let o = &self.object;
        if !(o.scale > 0.0 && o.scale.is_finite()) {
            return Err(invariant("scale > 0", format!("{}", o.scale)));
        }
        if !(o.translation.is_finite()
            && o.rotation.yaw.is_finite()
            && o.rotation.pitch.is_finite()
            && o.rotation.roll.is_finite())
        {
            return Err(invariant("finite transform", "translation/rotation contain non-finite values"));
        }
        let c = &self.camera;
        if !(c.fov_y > 0.0 && c.fov_y < std::f64::consts::PI) {
            return Err(invariant("fov in (0, pi)", format!("{}", c.fov_y)));
        }
        if c.resolution.width < MIN_RESOLUTION || c.resolution.height < MIN_RESOLUTION {
            return Err(invariant(
                "resolution >= 16x16",
                format!("{}x{}", c.resolution.width, c.resolution.height),
            ));
        }
        if !c.position.is_finite() || !c.look_at.is_finite() || c.position.distance(c.look_at) < 1e-12 {
            return Err(invariant("camera position != look-at", format!("{:?}", c.position)));
        }
        let l = &self.light;
        if !(l.intensity >= 0.0) {
            return Err(invariant("light intensity >= 0", format!("{}", l.intensity)));
        }
        if (l.direction.length() - 1.0).abs() > 1e-6 {
            return Err(invariant("light direction is unit", format!("{:?}", l.direction)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene state is always serializable")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// World-space position of a mesh-space point under the object transform.
    /// Rotation and scale pivot about `pivot` (the mesh's bounding-sphere centre).
    pub fn object_to_world(&self, pivot: DVec3) -> impl Fn(DVec3) -> DVec3 {
        let r = rotation_from_euler(self.object.rotation.yaw, self.object.rotation.pitch, self.object.rotation.roll);
        let s = self.object.scale;
        let t = self.object.translation;
        move |p| r * ((p - pivot) * s) + pivot + t
    }
}

/// Canonical starting scene: object at the origin with identity rotation and
/// unit scale, camera on the +Z axis framing the bounding sphere with a 15%
/// margin, light coming from the camera.
pub fn default_scene(
    mesh: &MeshAsset,
    environment: &EnvironmentAsset,
    resolution: Resolution,
) -> Result<SceneState, SceneError> {
    let (center, radius) = mesh.bounding_sphere();
    if !(radius > 1e-12) {
        return Err(SceneError::DegenerateMesh(mesh.name.clone()));
    }
    let mut camera = Camera { position: DVec3::ZERO, look_at: center, fov_y: DEFAULT_FOV_Y, resolution };
    let distance = radius / camera.min_half_fov().sin() * FRAMING_MARGIN;
    camera.position = center + DVec3::Z * distance;
    let state = SceneState {
        mesh: mesh.name.clone(),
        environment: environment.name.clone(),
        object: ObjectTransform { translation: DVec3::ZERO, rotation: Euler::IDENTITY, scale: 1.0 },
        camera,
        light: Light { direction: DVec3::Z, color: [1.0; 3], intensity: 1.0 },
        texture: ORIGINAL_TEXTURE.to_string(),
        extras: BTreeMap::new(),
    };
    state.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::primitives;

    fn white() -> EnvironmentAsset {
        load_environment("white", &EnvironmentSource::Color([1.0, 1.0, 1.0])).unwrap()
    }

    const RES: Resolution = Resolution { width: 64, height: 64 };

    #[test]
    fn unit_sphere_framing_distance_matches_closed_form() {
        let mesh = primitives::uv_sphere("ball", 1.0, 24, 48);
        let state = default_scene(&mesh, &white(), RES).unwrap();
        // Independent bounding-sphere oracle: farthest vertex from the origin.
        let radius = mesh.vertices.iter().map(|v| v.length()).fold(0.0, f64::max);
        assert!((radius - 1.0).abs() < 1e-12);
        let expected = radius / (DEFAULT_FOV_Y / 2.0).sin() * 1.15;
        assert!((state.camera.position.z - expected).abs() < 1e-9, "{} vs {expected}", state.camera.position.z);
        assert_eq!(state.camera.position.x, 0.0);
        assert_eq!(state.camera.position.y, 0.0);
    }

    #[test]
    fn default_pose_is_identity() {
        let state = default_scene(&primitives::cube("box", 1.0), &white(), RES).unwrap();
        assert_eq!(state.object.rotation, Euler::IDENTITY);
        assert_eq!(state.object.scale, 1.0);
        assert_eq!(state.object.translation, DVec3::ZERO);
        assert_eq!(state.light.intensity, 1.0);
        assert!((state.light.direction - DVec3::Z).length() < 1e-12);
    }

    #[test]
    fn collapsed_mesh_is_degenerate() {
        let mut mesh = primitives::cube("dot", 1.0);
        for v in &mut mesh.vertices {
            *v = DVec3::ZERO;
        }
        assert!(matches!(default_scene(&mesh, &white(), RES), Err(SceneError::DegenerateMesh(_))));
    }

    #[test]
    fn default_scene_projects_inside_frame_for_wide_and_tall_images() {
        for res in [RES, Resolution { width: 128, height: 32 }, Resolution { width: 32, height: 96 }] {
            for mesh in [primitives::cube("c", 2.0), primitives::cup("mug", 0.5, 1.2, 16), primitives::uv_sphere("s", 3.0, 8, 16)] {
                let state = default_scene(&mesh, &white(), res).unwrap();
                for v in &mesh.vertices {
                    let (x, y) = state.camera.project(*v).unwrap();
                    assert!(x >= 0.0 && x <= res.width as f64 && y >= 0.0 && y <= res.height as f64);
                }
            }
        }
    }

    #[test]
    fn scene_json_round_trip() {
        let mut state = default_scene(&primitives::cube("box", 1.0), &white(), RES).unwrap();
        state.extras.insert("liquid_fill.coffee".into(), 0.25);
        state.object.rotation.yaw = 1.0 / 3.0;
        let back = SceneState::from_json(&state.to_json()).unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn validate_rejects_bad_states() {
        let base = default_scene(&primitives::cube("box", 1.0), &white(), RES).unwrap();
        let mut s = base.clone();
        s.object.scale = 0.0;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.camera.fov_y = std::f64::consts::PI;
        assert!(s.validate().is_err());
        let mut s = base.clone();
        s.camera.resolution.width = 15;
        assert!(s.validate().is_err());
        let mut s = base;
        s.camera.position = s.camera.look_at;
        assert!(s.validate().is_err());
    }
}
