//! Wavefront OBJ subset: `v`, `vt`, `vn` and triangular `f` records.
//!
//! Comment directives of the form `# @key value` annotate the asset:
//! `@label` (repeatable), `@texture` and `@opening_radius`.

use std::collections::BTreeSet;
use std::path::Path;

use glam::{DVec2, DVec3};

use super::{Corner, MeshAsset, SceneError};

pub fn load_mesh(path: &Path) -> Result<MeshAsset, SceneError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SceneError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    parse_obj(name, &text)
}

/// Parse OBJ text. The mesh is named `name`; without `@label` directives its
/// label set is `{name}`, without `@texture` its base texture is `"white"`.
pub fn parse_obj(name: &str, text: &str) -> Result<MeshAsset, SceneError> {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Vec<(usize, [(usize, Option<usize>, Option<usize>); 3])> = Vec::new();
    let mut labels = BTreeSet::new();
    let mut texture = None;
    let mut opening_radius = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(directive) = comment.trim_start().strip_prefix('@') {
                let mut parts = directive.splitn(2, char::is_whitespace);
                let key = parts.next().unwrap_or("");
                let value = parts.next().unwrap_or("").trim();
                match key {
                    "label" if !value.is_empty() => {
                        labels.insert(value.to_string());
                    }
                    "texture" if !value.is_empty() => texture = Some(value.to_string()),
                    "opening_radius" => {
                        opening_radius = Some(parse_f64(value, line_no)?);
                    }
                    _ => {}
                }
            }
            continue;
        }
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "v" => {
                let c = parse_floats(&rest, 3, line_no, "v")?;
                vertices.push(DVec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = parse_floats(&rest, 2, line_no, "vt")?;
                uvs.push(DVec2::new(wrap_unit(c[0]), wrap_unit(c[1])));
            }
            "vn" => {
                let c = parse_floats(&rest, 3, line_no, "vn")?;
                let n = DVec3::new(c[0], c[1], c[2]);
                if !(n.length() > 1e-12) {
                    return Err(parse_err(line_no, "zero-length normal"));
                }
                normals.push(n.normalize());
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(parse_err(
                        line_no,
                        format!("face has {} vertices; only triangles are supported", rest.len()),
                    ));
                }
                let mut corners = [(0, None, None); 3];
                for (k, tok) in rest.iter().enumerate() {
                    corners[k] = parse_corner(tok, line_no, vertices.len(), uvs.len(), normals.len())?;
                }
                faces.push((line_no, corners));
            }
            // Grouping/material statements carry no geometry for this subset.
            "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(parse_err(line_no, format!("unsupported statement '{other}'"))),
        }
    }

    let mut fallback_uv = None;
    let mut triangles = Vec::with_capacity(faces.len());
    for (line_no, corners) in faces {
        for &(v, _, _) in &corners {
            if v >= vertices.len() {
                return Err(SceneError::Invariant {
                    rule: "vertex index in range",
                    detail: format!("line {line_no}: vertex {} of {}", v + 1, vertices.len()),
                });
            }
        }
        let face_normal = {
            let [a, b, c] = corners.map(|(v, _, _)| vertices[v]);
            let n = (b - a).cross(c - a);
            if n.length() > 1e-300 { n.normalize() } else { DVec3::Z }
        };
        let mut face_normal_idx = None;
        let mut tri = [Corner { vertex: 0, uv: 0, normal: 0 }; 3];
        for (k, (v, t, n)) in corners.into_iter().enumerate() {
            let uv = match t {
                Some(t) => t,
                None => *fallback_uv.get_or_insert_with(|| {
                    uvs.push(DVec2::ZERO);
                    uvs.len() - 1
                }),
            };
            let normal = match n {
                Some(n) => n,
                None => *face_normal_idx.get_or_insert_with(|| {
                    normals.push(face_normal);
                    normals.len() - 1
                }),
            };
            tri[k] = Corner { vertex: v, uv, normal };
        }
        triangles.push(tri);
    }

    if labels.is_empty() {
        labels.insert(name.to_string());
    }
    let mesh = MeshAsset {
        name: name.to_string(),
        label_set: labels,
        vertices,
        uvs,
        normals,
        triangles,
        base_texture: texture.unwrap_or_else(|| "white".to_string()),
        opening_radius,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn parse_err(line: usize, message: impl Into<String>) -> SceneError {
    SceneError::Parse { line, message: message.into() }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, SceneError> {
    let v: f64 = tok.parse().map_err(|_| parse_err(line, format!("invalid number '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite number '{tok}'")));
    }
    Ok(v)
}

fn parse_floats(rest: &[&str], min: usize, line: usize, tag: &str) -> Result<Vec<f64>, SceneError> {
    if rest.len() < min {
        return Err(parse_err(line, format!("'{tag}' needs {min} components, got {}", rest.len())));
    }
    rest[..min].iter().map(|t| parse_f64(t, line)).collect()
}

/// Wrap a texture coordinate into `[0, 1]`, keeping exact 1.0 intact.
fn wrap_unit(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        x
    } else {
        x - x.floor()
    }
}

/// Resolve a 1-based (or negative, relative) OBJ index.
fn resolve_index(tok: &str, count: usize, line: usize) -> Result<usize, SceneError> {
    let i: i64 = tok.parse().map_err(|_| parse_err(line, format!("invalid index '{tok}'")))?;
    if i > 0 {
        Ok(i as usize - 1)
    } else if i < 0 && (-i) as usize <= count {
        Ok((count as i64 + i) as usize)
    } else {
        Err(parse_err(line, format!("index {i} out of range")))
    }
}

fn parse_corner(
    tok: &str,
    line: usize,
    nv: usize,
    nt: usize,
    nn: usize,
) -> Result<(usize, Option<usize>, Option<usize>), SceneError> {
    let mut parts = tok.split('/');
    let v = resolve_index(parts.next().unwrap_or(""), nv, line)?;
    let t = match parts.next() {
        Some("") | None => None,
        Some(s) => Some(resolve_index(s, nt, line)?),
    };
    let n = match parts.next() {
        Some("") | None => None,
        Some(s) => Some(resolve_index(s, nn, line)?),
    };
    if let Some(t) = t {
        if t >= nt {
            return Err(SceneError::Invariant {
                rule: "uv index in range",
                detail: format!("line {line}: uv {} of {nt}", t + 1),
            });
        }
    }
    if let Some(n) = n {
        if n >= nn {
            return Err(SceneError::Invariant {
                rule: "normal index in range",
                detail: format!("line {line}: normal {} of {nn}", n + 1),
            });
        }
    }
    Ok((v, t, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";

    #[test]
    fn single_triangle() {
        let m = parse_obj("tri", TRIANGLE).unwrap();
        assert_eq!(m.triangles.len(), 1);
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.label_set.iter().collect::<Vec<_>>(), vec!["tri"]);
        // Normal computed from counter-clockwise winding.
        assert!((m.normals[m.triangles[0][0].normal] - DVec3::Z).length() < 1e-12);
    }

    #[test]
    fn vertex_index_out_of_range() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 5/3\n";
        match parse_obj("bad", text) {
            Err(SceneError::Invariant { rule, .. }) => assert_eq!(rule, "vertex index in range"),
            other => panic!("expected invariant error, got {other:?}"),
        }
    }

    #[test]
    fn quads_are_rejected_with_line_number() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        match parse_obj("quad", text) {
            Err(SceneError::Parse { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("4 vertices"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        match parse_obj("x", "v 0 0 0\nv 1 zz 0\n") {
            Err(SceneError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn directives_and_wrapping() {
        let text = "# @label drill\n# @label power drill\n# @texture steel\n# @opening_radius 0.25\n\
                    v 0 0 0\nv 1 0 0\nv 0 1 0\nvt -0.25 1.5\nvn 0 0 2\nf 1/1/1 2/1/1 3/1/1\n";
        let m = parse_obj("tool", text).unwrap();
        assert_eq!(m.label_set.len(), 2);
        assert!(m.label_set.contains("power drill"));
        assert_eq!(m.base_texture, "steel");
        assert_eq!(m.opening_radius, Some(0.25));
        assert_eq!(m.uvs[0], DVec2::new(0.75, 0.5));
        assert!((m.normals[0].length() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_indices_and_missing_uvs() {
        let m = parse_obj("rel", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(m.triangles[0][2].vertex, 2);
        assert_eq!(m.uvs.len(), 1);
    }

    #[test]
    fn identical_bytes_give_identical_assets() {
        assert_eq!(parse_obj("t", TRIANGLE).unwrap(), parse_obj("t", TRIANGLE).unwrap());
    }
}
