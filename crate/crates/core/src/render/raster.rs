use std::time::Instant;

use glam::{DVec2, DVec3};

use super::{
    active_texture, perspective_weights, sample_equirect, AssetStore, RenderError, RenderOutput, RenderSettings,
    ScreenVertex, UvSample, LIQUID_TRIANGLE_BASE,
};
use crate::controls::{LIQUID_COFFEE, LIQUID_LEVEL, LIQUID_MILK, LIQUID_WATER};
use crate::math::{look_at_basis, rotation_from_euler};
use crate::scene::{Background, MeshAsset, SceneState};

/// View-space near plane.
const NEAR: f64 = 1e-3;
const LIQUID_SEGMENTS: u32 = 48;

#[derive(Clone, Copy)]
struct Vertex {
    /// View space: x right, y up, z forward.
    view: DVec3,
    uv: DVec2,
    normal: DVec3,
}

impl Vertex {
    fn lerp(a: &Vertex, b: &Vertex, t: f64) -> Vertex {
        Vertex { view: a.view.lerp(b.view, t), uv: a.uv.lerp(b.uv, t), normal: a.normal.lerp(b.normal, t) }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Material {
    Mesh,
    Liquid,
}

#[derive(Clone, Copy)]
struct Fragment {
    view_z: f64,
    distance: f64,
    uv: DVec2,
    normal: DVec3,
    triangle: u32,
    material: Material,
}

struct Camera {
    right: DVec3,
    up: DVec3,
    forward: DVec3,
    eye: DVec3,
    tan_half: f64,
    aspect: f64,
    width: u32,
    height: u32,
}

impl Camera {
    fn new(state: &SceneState) -> Self {
        let c = &state.camera;
        let (right, up, forward) = look_at_basis(c.position, c.look_at);
        Self {
            right,
            up,
            forward,
            eye: c.position,
            tan_half: (c.fov_y * 0.5).tan(),
            aspect: c.resolution.aspect(),
            width: c.resolution.width,
            height: c.resolution.height,
        }
    }

    fn to_view(&self, p: DVec3) -> DVec3 {
        let d = p - self.eye;
        DVec3::new(d.dot(self.right), d.dot(self.up), d.dot(self.forward))
    }

    fn project(&self, v: DVec3) -> ScreenVertex {
        let ndc_x = v.x / (v.z * self.tan_half * self.aspect);
        let ndc_y = v.y / (v.z * self.tan_half);
        ScreenVertex {
            x: (ndc_x + 1.0) * 0.5 * self.width as f64,
            y: (1.0 - ndc_y) * 0.5 * self.height as f64,
            inv_w: 1.0 / v.z,
        }
    }

    /// World-space unit ray through the centre of pixel `(px, py)`.
    fn ray(&self, px: u32, py: u32) -> DVec3 {
        let ndc_x = 2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0;
        let ndc_y = 1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64;
        (self.forward + self.right * (ndc_x * self.tan_half * self.aspect) + self.up * (ndc_y * self.tan_half)).normalize()
    }
}

/// Sutherland–Hodgman clip of a convex polygon against `z >= NEAR`.
fn clip_near(poly: &[Vertex]) -> Vec<Vertex> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = &poly[i];
        let b = &poly[(i + 1) % poly.len()];
        let a_in = a.view.z >= NEAR;
        let b_in = b.view.z >= NEAR;
        if a_in {
            out.push(*a);
        }
        if a_in != b_in {
            let t = (NEAR - a.view.z) / (b.view.z - a.view.z);
            out.push(Vertex::lerp(a, b, t));
        }
    }
    out
}

/// Edge `a -> b` owns pixel centres lying exactly on it when this holds.
/// The rule is antisymmetric, so a shared edge is owned by exactly one side.
fn owns_edge(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let dy = b.y - a.y;
    let dx = b.x - a.x;
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x)
}

struct Target {
    width: u32,
    height: u32,
    fragments: Vec<Option<Fragment>>,
}

impl Target {
    fn raster(&mut self, mut sv: [ScreenVertex; 3], mut verts: [Vertex; 3], triangle: u32, material: Material) {
        let area = edge(&sv[0], &sv[1], sv[2].x, sv[2].y);
        if !(area.abs() > 1e-12) {
            return;
        }
        if area < 0.0 {
            sv.swap(1, 2);
            verts.swap(1, 2);
        }
        let min_x = sv.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
        let max_x = sv.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = sv.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        let max_y = sv.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
        let (w, h) = (self.width as f64, self.height as f64);
        // Pixel centres at +0.5: candidate range [ceil(min - 0.5), floor(max - 0.5)].
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(w - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(h - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let owners = [owns_edge(&sv[1], &sv[2]), owns_edge(&sv[2], &sv[0]), owns_edge(&sv[0], &sv[1])];
        for py in y0 as u32..=y1 as u32 {
            let cy = py as f64 + 0.5;
            for px in x0 as u32..=x1 as u32 {
                let cx = px as f64 + 0.5;
                let e = [edge(&sv[1], &sv[2], cx, cy), edge(&sv[2], &sv[0], cx, cy), edge(&sv[0], &sv[1], cx, cy)];
                if !(0..3).all(|i| e[i] > 0.0 || (e[i] == 0.0 && owners[i])) {
                    continue;
                }
                let Some(wts) = perspective_weights((cx, cy), &sv) else { return };
                let view = verts[0].view * wts[0] + verts[1].view * wts[1] + verts[2].view * wts[2];
                let idx = (py * self.width + px) as usize;
                if let Some(f) = &self.fragments[idx] {
                    if !(view.z < f.view_z) {
                        continue;
                    }
                }
                let uv = verts[0].uv * wts[0] + verts[1].uv * wts[1] + verts[2].uv * wts[2];
                let normal = verts[0].normal * wts[0] + verts[1].normal * wts[1] + verts[2].normal * wts[2];
                self.fragments[idx] = Some(Fragment {
                    view_z: view.z,
                    distance: view.length(),
                    uv: uv.clamp(DVec2::ZERO, DVec2::ONE),
                    normal,
                    triangle,
                    material,
                });
            }
        }
    }

    fn draw(&mut self, cam: &Camera, tri: [Vertex; 3], triangle: u32, material: Material) {
        let poly = if tri.iter().all(|v| v.view.z >= NEAR) { tri.to_vec() } else { clip_near(&tri) };
        if poly.len() < 3 {
            return;
        }
        let screen: Vec<ScreenVertex> = poly.iter().map(|v| cam.project(v.view)).collect();
        for k in 1..poly.len() - 1 {
            self.raster(
                [screen[0], screen[k], screen[k + 1]],
                [poly[0], poly[k], poly[k + 1]],
                triangle,
                material,
            );
        }
    }
}

/// Liquid disc triangles in mesh space: a fan at the fill height, centred on
/// the bounding-box axis, with planar UVs.
fn liquid_disc(mesh: &MeshAsset, level: f64) -> Result<Vec<[(DVec3, DVec2); 3]>, RenderError> {
    let radius = mesh.opening_radius.ok_or_else(|| RenderError::NoOpening(mesh.name.clone()))?;
    let (lo, hi) = mesh.bounds();
    let y = lo.y + level.clamp(0.0, 1.0) * (hi.y - lo.y);
    let centre = DVec3::new(0.5 * (lo.x + hi.x), y, 0.5 * (lo.z + hi.z));
    let rim = |k: u32| {
        let phi = std::f64::consts::TAU * k as f64 / LIQUID_SEGMENTS as f64;
        let (s, c) = phi.sin_cos();
        (centre + DVec3::new(s * radius, 0.0, c * radius), DVec2::new(0.5 + 0.5 * s, 0.5 + 0.5 * c))
    };
    Ok((0..LIQUID_SEGMENTS).map(|k| [(centre, DVec2::splat(0.5)), rim(k), rim(k + 1)]).collect())
}

/// Render `state` with the built-in rasterizer.
///
/// Visibility is resolved per pixel centre with a z-buffer on view depth
/// (nearest wins, first drawn wins ties). Attributes are interpolated
/// perspective-correctly. Shading is `albedo * (ambient + light)` with a
/// two-sided Lambertian term and no shadows; background pixels show the
/// environment along the camera ray.
pub fn render(state: &SceneState, assets: &AssetStore, settings: &RenderSettings) -> Result<RenderOutput, RenderError> {
    let started = Instant::now();
    state.validate()?;
    let mesh = assets.mesh(&state.mesh)?;
    let env = assets.environment(&state.environment)?;
    let texture = assets.texture(active_texture(state, mesh))?;
    let liquid = match state.extras.get(LIQUID_LEVEL) {
        Some(level) => {
            let ratios = [LIQUID_WATER, LIQUID_MILK, LIQUID_COFFEE].map(|k| state.extras.get(k).copied().unwrap_or(0.0));
            Some((liquid_disc(mesh, *level)?, settings.palette.blend(ratios, env.mean_radiance())))
        }
        None => None,
    };

    let cam = Camera::new(state);
    let (pivot, _) = mesh.bounding_sphere();
    let to_world = state.object_to_world(pivot);
    let rot = rotation_from_euler(state.object.rotation.yaw, state.object.rotation.pitch, state.object.rotation.roll);
    let n = state.camera.resolution.pixel_count();
    let mut target = Target { width: cam.width, height: cam.height, fragments: vec![None; n] };

    assert!(mesh.triangles.len() < LIQUID_TRIANGLE_BASE as usize, "mesh has too many triangles");
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let verts = tri.map(|c| Vertex {
            view: cam.to_view(to_world(mesh.vertices[c.vertex])),
            uv: mesh.uvs[c.uv],
            normal: rot * mesh.normals[c.normal],
        });
        target.draw(&cam, verts, t as u32, Material::Mesh);
    }
    let mut liquid_color = [0.0; 3];
    if let Some((disc, color)) = &liquid {
        liquid_color = *color;
        let up = rot * DVec3::Y;
        for (k, tri) in disc.iter().enumerate() {
            let verts = tri.map(|(p, uv)| Vertex { view: cam.to_view(to_world(p)), uv, normal: up });
            target.draw(&cam, verts, LIQUID_TRIANGLE_BASE + k as u32, Material::Liquid);
        }
    }

    let ambient = env.ambient();
    let light_dir = state.light.direction.normalize();
    let direct = state.light.color.map(|c| c * state.light.intensity);
    let mut out = RenderOutput {
        width: cam.width,
        height: cam.height,
        rgb: Vec::with_capacity(n),
        uv: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        seg: Vec::with_capacity(n),
        render_time: 0.0,
    };
    for py in 0..cam.height {
        for px in 0..cam.width {
            let idx = (py * cam.width + px) as usize;
            let ray = cam.ray(px, py);
            match &target.fragments[idx] {
                Some(f) => {
                    let albedo = match f.material {
                        Material::Mesh => texture.sample(f.uv),
                        Material::Liquid => liquid_color,
                    };
                    let mut normal = f.normal.normalize_or_zero();
                    if normal.dot(ray) > 0.0 {
                        normal = -normal;
                    }
                    let lambert = normal.dot(light_dir).max(0.0);
                    let rgb = [0, 1, 2].map(|c| (albedo[c] * (ambient[c] + direct[c] * lambert)).clamp(0.0, 1.0) as f32);
                    out.rgb.push(rgb);
                    out.uv.push(Some(UvSample { u: f.uv.x as f32, v: f.uv.y as f32, triangle: f.triangle }));
                    out.depth.push(f.distance as f32);
                    out.seg.push(true);
                }
                None => {
                    let bg = match &env.background {
                        Background::Uniform(c) => *c,
                        Background::Equirect(img) => sample_equirect(ray, img).map(|v| v.clamp(0.0, 1.0) as f32),
                    };
                    out.rgb.push(bg);
                    out.uv.push(None);
                    out.depth.push(f32::INFINITY);
                    out.seg.push(false);
                }
            }
        }
    }
    out.render_time = started.elapsed().as_secs_f64();
    Ok(out)
}
