//! Small geometric helpers shared by the scene, controls and renderer.

use glam::{DMat3, DVec3};

/// Object rotation from yaw (about +Y), pitch (about +X) and roll (about +Z),
/// applied roll first, then pitch, then yaw.
pub fn rotation_from_euler(yaw: f64, pitch: f64, roll: f64) -> DMat3 {
    DMat3::from_rotation_y(yaw) * DMat3::from_rotation_x(pitch) * DMat3::from_rotation_z(roll)
}

/// Orthonormal camera basis `(right, up, forward)` looking from `eye` at `target`.
///
/// World +Y is the preferred up direction; when the view direction is (nearly)
/// parallel to it, world −Z is used instead so the basis never degenerates.
pub fn look_at_basis(eye: DVec3, target: DVec3) -> (DVec3, DVec3, DVec3) {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(DVec3::Y);
    if right.length_squared() < 1e-12 {
        right = forward.cross(DVec3::NEG_Z);
    }
    let right = right.normalize();
    let up = right.cross(forward);
    (right, up, forward)
}

/// Unit direction on a sphere around a target: azimuth about +Y measured from
/// +Z towards +X, elevation above the XZ plane.
pub fn spherical_direction(azimuth: f64, elevation: f64) -> DVec3 {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    DVec3::new(ce * sa, se, ce * ca)
}

/// SplitMix64 finalizer; used to derive independent seeds from structured keys.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a seed from a sequence of integer keys.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5EED_u64, |acc, &k| mix64(acc ^ mix64(k)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal_even_when_looking_straight_down() {
        for eye in [DVec3::new(0.0, 0.0, 3.0), DVec3::new(0.0, 5.0, 0.0), DVec3::new(0.0, -2.0, 0.0)] {
            let (r, u, f) = look_at_basis(eye, DVec3::ZERO);
            assert!((r.length() - 1.0).abs() < 1e-12);
            assert!((u.length() - 1.0).abs() < 1e-12);
            assert!(r.dot(u).abs() < 1e-12 && r.dot(f).abs() < 1e-12 && u.dot(f).abs() < 1e-12);
        }
    }

    #[test]
    fn default_spherical_direction_is_plus_z() {
        let d = spherical_direction(0.0, 0.0);
        assert!((d - DVec3::Z).length() < 1e-15);
    }

    #[test]
    fn derived_seeds_depend_on_every_key() {
        let a = derive_seed(&[1, 2, 3]);
        assert_ne!(a, derive_seed(&[1, 2, 4]));
        assert_ne!(a, derive_seed(&[2, 1, 3]));
        assert_eq!(a, derive_seed(&[1, 2, 3]));
    }
}
