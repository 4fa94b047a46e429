//! Procedural meshes used by the demo experiment, fixtures and benchmarks.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};

use glam::{DVec2, DVec3};

use super::{Corner, MeshAsset};

fn assemble(
    name: &str,
    vertices: Vec<DVec3>,
    uvs: Vec<DVec2>,
    normals: Vec<DVec3>,
    triangles: Vec<[Corner; 3]>,
) -> MeshAsset {
    MeshAsset {
        name: name.to_string(),
        label_set: BTreeSet::from([name.to_string()]),
        vertices,
        uvs,
        normals,
        triangles,
        base_texture: "white".to_string(),
        opening_radius: None,
    }
}

fn corner(vertex: usize, uv: usize, normal: usize) -> Corner {
    Corner { vertex, uv, normal }
}

/// Axis-aligned cube of edge `size` centred at the origin: 8 vertices,
/// 12 triangles, each face mapped to the full unit UV square.
pub fn cube(name: &str, size: f64) -> MeshAsset {
    let h = size / 2.0;
    let vertices: Vec<DVec3> = (0..8)
        .map(|i| DVec3::new(if i & 1 == 0 { -h } else { h }, if i & 2 == 0 { -h } else { h }, if i & 4 == 0 { -h } else { h }))
        .collect();
    let uvs = vec![DVec2::new(0.0, 0.0), DVec2::new(1.0, 0.0), DVec2::new(1.0, 1.0), DVec2::new(0.0, 1.0)];
    // Each face: four vertex indices counter-clockwise seen from outside.
    let faces: [([usize; 4], DVec3); 6] = [
        ([4, 5, 7, 6], DVec3::Z),
        ([1, 0, 2, 3], DVec3::NEG_Z),
        ([5, 1, 3, 7], DVec3::X),
        ([0, 4, 6, 2], DVec3::NEG_X),
        ([6, 7, 3, 2], DVec3::Y),
        ([0, 1, 5, 4], DVec3::NEG_Y),
    ];
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for (quad, n) in faces {
        normals.push(n);
        let ni = normals.len() - 1;
        triangles.push([corner(quad[0], 0, ni), corner(quad[1], 1, ni), corner(quad[2], 2, ni)]);
        triangles.push([corner(quad[0], 0, ni), corner(quad[2], 2, ni), corner(quad[3], 3, ni)]);
    }
    assemble(name, vertices, uvs, normals, triangles)
}

/// Latitude/longitude sphere centred at the origin.
pub fn uv_sphere(name: &str, radius: f64, rings: usize, segments: usize) -> MeshAsset {
    assert!(rings >= 2 && segments >= 3);
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    for r in 0..=rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..=segments {
            let phi = TAU * s as f64 / segments as f64;
            let n = DVec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos());
            vertices.push(n * radius);
            normals.push(n.normalize());
            uvs.push(DVec2::new(s as f64 / segments as f64, 1.0 - r as f64 / rings as f64));
        }
    }
    let stride = segments + 1;
    let mut triangles = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let a = r * stride + s;
            let b = a + stride;
            let c = b + 1;
            let d = a + 1;
            if r != 0 {
                triangles.push([corner(a, a, a), corner(b, b, b), corner(d, d, d)]);
            }
            if r != rings - 1 {
                triangles.push([corner(d, d, d), corner(b, b, b), corner(c, c, c)]);
            }
        }
    }
    assemble(name, vertices, uvs, normals, triangles)
}

/// Open-topped cylinder ("mug") standing on the XZ plane, with a bottom disc.
/// Declares an interior opening slightly inside the wall.
pub fn cup(name: &str, radius: f64, height: f64, segments: usize) -> MeshAsset {
    assert!(segments >= 3);
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for s in 0..=segments {
        let phi = TAU * s as f64 / segments as f64;
        let dir = DVec3::new(phi.sin(), 0.0, phi.cos());
        let u = s as f64 / segments as f64;
        vertices.push(dir * radius);
        vertices.push(dir * radius + DVec3::Y * height);
        uvs.push(DVec2::new(u, 0.0));
        uvs.push(DVec2::new(u, 0.8));
        normals.push(dir);
    }
    for s in 0..segments {
        let (b0, t0, b1, t1) = (2 * s, 2 * s + 1, 2 * s + 2, 2 * s + 3);
        triangles.push([corner(b0, b0, s), corner(b1, b1, s + 1), corner(t1, t1, s + 1)]);
        triangles.push([corner(b0, b0, s), corner(t1, t1, s + 1), corner(t0, t0, s)]);
    }
    // Bottom disc, facing down, mapped to the top strip of UV space.
    let center = vertices.len();
    vertices.push(DVec3::ZERO);
    let center_uv = uvs.len();
    uvs.push(DVec2::new(0.5, 0.9));
    normals.push(DVec3::NEG_Y);
    let down = normals.len() - 1;
    let rim_uv0 = uvs.len();
    for s in 0..=segments {
        uvs.push(DVec2::new(s as f64 / segments as f64, 1.0));
    }
    for s in 0..segments {
        triangles.push([
            corner(center, center_uv, down),
            corner(2 * s + 2, rim_uv0 + s + 1, down),
            corner(2 * s, rim_uv0 + s, down),
        ]);
    }
    let mut mesh = assemble(name, vertices, uvs, normals, triangles);
    mesh.opening_radius = Some(radius * 0.95);
    mesh
}

/// Axis-aligned square in the XY plane facing +Z, UVs spanning the unit square.
pub fn quad(name: &str, size: f64) -> MeshAsset {
    let h = size / 2.0;
    let vertices = vec![
        DVec3::new(-h, -h, 0.0),
        DVec3::new(h, -h, 0.0),
        DVec3::new(h, h, 0.0),
        DVec3::new(-h, h, 0.0),
    ];
    let uvs = vec![DVec2::new(0.0, 0.0), DVec2::new(1.0, 0.0), DVec2::new(1.0, 1.0), DVec2::new(0.0, 1.0)];
    let triangles = vec![
        [corner(0, 0, 0), corner(1, 1, 0), corner(2, 2, 0)],
        [corner(0, 0, 0), corner(2, 2, 0), corner(3, 3, 0)],
    ];
    assemble(name, vertices, uvs, vec![DVec3::Z], triangles)
}
