use std::f64::consts::PI;

use glam::DVec3;
use proptest::prelude::*;

use super::*;
use crate::scene::{default_scene, load_environment, primitives, EnvironmentSource, Resolution};

fn envs() -> Vec<String> {
    vec!["white".into(), "sky".into(), "studio".into()]
}

fn registry() -> ControlRegistry {
    ControlRegistry::with_builtins(&envs(), &["zebra".into(), "red".into()])
}

fn base_state() -> SceneState {
    let env = load_environment("white", &EnvironmentSource::Color([1.0; 3])).unwrap();
    default_scene(&primitives::cube("box", 1.0), &env, Resolution { width: 32, height: 32 }).unwrap()
}

fn orientation(yaw: f64, pitch: f64, roll: f64) -> ControlInstantiation {
    ControlInstantiation::new("orientation").number("yaw", yaw).number("pitch", pitch).number("roll", roll)
}

fn camera(az: f64, el: f64, dist: f64, zoom: f64) -> ControlInstantiation {
    ControlInstantiation::new("camera")
        .number("azimuth", az)
        .number("elevation", el)
        .number("distance_scale", dist)
        .number("zoom", zoom)
}

#[test]
fn orientation_writes_rotation_only() {
    let reg = registry();
    let s = base_state();
    let out = reg.apply_rendered(&s, &orientation(PI, 0.0, 0.0)).unwrap();
    assert_eq!(out.object.rotation, crate::scene::Euler { yaw: PI, pitch: 0.0, roll: 0.0 });
    let mut expected = s.clone();
    expected.object.rotation.yaw = PI;
    assert_eq!(out, expected);
    // Input untouched.
    assert_eq!(s, base_state());
}

#[test]
fn scale_composes_multiplicatively() {
    let reg = registry();
    let chain = [
        ControlInstantiation::new("scale").number("factor", 2.0),
        ControlInstantiation::new("scale").number("factor", 0.5),
    ];
    assert_eq!(reg.compose(&base_state(), &chain).unwrap().object.scale, 1.0);
}

#[test]
fn zoom_matches_pinhole_identity() {
    let reg = registry();
    let s = base_state();
    let zoomed = reg.apply_rendered(&s, &camera(0.0, 0.0, 1.0, 2.0)).unwrap();
    let t0 = (s.camera.fov_y / 2.0).tan();
    let t1 = (zoomed.camera.fov_y / 2.0).tan();
    assert!((t1 - t0 / 2.0).abs() < 1e-12);
    // A point off the optical axis lands twice as far from the image centre.
    let p = DVec3::new(0.2, -0.15, 0.3);
    let (x0, y0) = s.camera.project(p).unwrap();
    let (x1, y1) = zoomed.camera.project(p).unwrap();
    assert!(((x1 - 16.0) - 2.0 * (x0 - 16.0)).abs() < 1e-9);
    assert!(((y1 - 16.0) - 2.0 * (y0 - 16.0)).abs() < 1e-9);
}

#[test]
fn camera_defaults_are_identity() {
    let reg = registry();
    let s = base_state();
    let out = reg.apply_rendered(&s, &reg.descriptor("camera").unwrap().defaults()).unwrap();
    assert!((out.camera.position - s.camera.position).length() < 1e-12);
    assert!((out.camera.fov_y - s.camera.fov_y).abs() < 1e-15);
}

#[test]
fn empty_composition_is_identity() {
    assert_eq!(registry().compose(&base_state(), &[]).unwrap(), base_state());
}

#[test]
fn orientation_is_additive() {
    let out = registry()
        .compose(&base_state(), &[orientation(0.4, 0.0, 0.0), orientation(-1.1, 0.0, 0.0)])
        .unwrap();
    assert!((out.object.rotation.yaw - (0.4 - 1.1)).abs() < 1e-15);
}

#[test]
fn background_and_zoom_commute() {
    let reg = registry();
    let bg = ControlInstantiation::new("background").index("environment", 2);
    let zoom = camera(0.0, 0.0, 1.0, 2.0);
    let a = reg.compose(&base_state(), &[bg.clone(), zoom.clone()]).unwrap();
    let b = reg.compose(&base_state(), &[zoom, bg]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.environment, "studio");
}

#[test]
fn last_write_wins_for_shared_fields() {
    let reg = registry();
    let chain = [
        ControlInstantiation::new("background").index("environment", 1),
        ControlInstantiation::new("background").index("environment", 0),
    ];
    assert_eq!(reg.compose(&base_state(), &chain).unwrap().environment, "white");
}

#[test]
fn composition_errors_carry_index() {
    let reg = registry();
    let chain = [orientation(0.0, 0.0, 0.0), ControlInstantiation::new("scale").number("factor", 100.0)];
    match reg.compose(&base_state(), &chain) {
        Err(ControlError::AtIndex { index: 1, source }) => {
            assert!(matches!(*source, ControlError::OutOfRange { .. }))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_and_malformed_instantiations() {
    let reg = registry();
    let s = base_state();
    assert!(matches!(reg.apply_rendered(&s, &ControlInstantiation::new("warp")), Err(ControlError::Unknown(_))));
    assert!(matches!(
        reg.apply_rendered(&s, &ControlInstantiation::new("scale")),
        Err(ControlError::MissingParam { .. })
    ));
    assert!(matches!(
        reg.apply_rendered(&s, &ControlInstantiation::new("scale").number("factor", 1.0).number("shear", 0.0)),
        Err(ControlError::UnknownParam { .. })
    ));
    assert!(matches!(
        reg.apply_rendered(&s, &ControlInstantiation::new("background").index("environment", 3)),
        Err(ControlError::BadIndex { len: 3, .. })
    ));
    assert!(matches!(
        reg.apply_rendered(&s, &ControlInstantiation::new("scale").index("factor", 0)),
        Err(ControlError::WrongValueType { .. })
    ));
    let img = RgbBuffer::solid(4, 4, [1.0; 3]);
    assert!(matches!(
        reg.apply_post(&img, &orientation(0.0, 0.0, 0.0), 0),
        Err(ControlError::WrongKind { .. })
    ));
}

#[test]
fn descriptor_validation() {
    let bad = ControlDescriptor::new("x", ControlKind::Post, vec![ParamDecl::continuous("a", 1.0, 1.0, 1.0)]);
    assert!(bad.validate().is_err());
    let dup = ControlDescriptor::new(
        "x",
        ControlKind::Post,
        vec![ParamDecl::continuous("a", 0.0, 1.0, 0.0), ParamDecl::continuous("a", 0.0, 1.0, 0.0)],
    );
    assert!(dup.validate().is_err());
    let empty = ControlDescriptor::new("x", ControlKind::Post, vec![ParamDecl::discrete("a", vec![], 0)]);
    assert!(empty.validate().is_err());
    let mut reg = registry();
    assert!(matches!(reg.register_rendered(Arc::new(Scale::new())), Err(ControlError::Duplicate(_))));
}

#[test]
fn texture_swap_lists_original_first() {
    let reg = registry();
    let d = reg.descriptor("texture_swap").unwrap();
    match &d.params[0].domain {
        ParamDomain::Discrete { values } => {
            let names: Vec<_> = values.iter().map(|v| v.to_string()).collect();
            assert_eq!(names, ["original", "zebra", "red"]);
        }
        other => panic!("{other:?}"),
    }
    let out = reg
        .apply_rendered(&base_state(), &ControlInstantiation::new("texture_swap").index("texture", 1))
        .unwrap();
    assert_eq!(out.texture, "zebra");
}

#[test]
fn liquid_ratios_are_normalized() {
    let reg = registry();
    let inst = ControlInstantiation::new("liquid_fill")
        .number("water", 0.2)
        .number("milk", 0.2)
        .number("coffee", 0.4)
        .number("level", 0.5);
    let out = reg.apply_rendered(&base_state(), &inst).unwrap();
    assert!((out.extras[LIQUID_WATER] - 0.25).abs() < 1e-15);
    assert!((out.extras[LIQUID_MILK] - 0.25).abs() < 1e-15);
    assert!((out.extras[LIQUID_COFFEE] - 0.5).abs() < 1e-15);
    assert_eq!(out.extras[LIQUID_LEVEL], 0.5);

    let zero = ControlInstantiation::new("liquid_fill")
        .number("water", 0.0)
        .number("milk", 0.0)
        .number("coffee", 0.0)
        .number("level", 0.5);
    assert!(matches!(reg.apply_rendered(&base_state(), &zero), Err(ControlError::Invalid { .. })));
}

#[test]
fn time_of_day_sun_path() {
    let (dir, color, intensity) = TimeOfDay::sun(12.0);
    assert!((dir - DVec3::Y).length() < 1e-12);
    assert!((intensity - 1.0).abs() < 1e-12);
    assert!((color[2] - 1.0).abs() < 1e-12);
    let (dir, color, intensity) = TimeOfDay::sun(6.0);
    assert!(dir.y.abs() < 1e-12);
    assert_eq!(intensity, 0.0);
    assert_eq!(color, [1.0, 0.55, 0.3]);
    let (_, _, night) = TimeOfDay::sun(0.0);
    assert_eq!(night, 0.0);
    // Warmer (redder relative to blue) near sunrise than near noon.
    let (_, early, _) = TimeOfDay::sun(8.0);
    let (_, late, _) = TimeOfDay::sun(11.0);
    assert!(early[0] / early[2] > late[0] / late[2]);
}

fn occlusion(x: f64, y: f64, w: f64, h: f64) -> ControlInstantiation {
    ControlInstantiation::new("occlusion")
        .number("x", x)
        .number("y", y)
        .number("w", w)
        .number("h", h)
        .number("r", 0.0)
        .number("g", 0.0)
        .number("b", 0.0)
}

#[test]
fn occlusion_blacks_out_center_block() {
    let img = RgbBuffer::solid(4, 4, [1.0; 3]);
    let out = registry().apply_post(&img, &occlusion(0.25, 0.25, 0.5, 0.5), 7).unwrap();
    assert!(out.warnings.is_empty());
    for y in 0..4 {
        for x in 0..4 {
            let inside = (1..=2).contains(&x) && (1..=2).contains(&y);
            assert_eq!(out.image.get(x, y), if inside { [0.0; 3] } else { [1.0; 3] }, "pixel ({x}, {y})");
        }
    }
}

#[test]
fn occlusion_outside_frame_warns_and_keeps_image() {
    let img = RgbBuffer::solid(8, 8, [0.5; 3]);
    let out = registry().apply_post(&img, &occlusion(-1.0, 0.0, 0.5, 1.0), 0).unwrap();
    assert_eq!(out.image, img);
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn zero_noise_and_unit_gain_are_identity() {
    let reg = registry();
    let img = RgbBuffer::from_fn(9, 7, |x, y| [x as f32 / 9.0, y as f32 / 7.0, 0.3]);
    let noise = ControlInstantiation::new("gaussian_noise").number("sigma", 0.0);
    assert_eq!(reg.apply_post(&img, &noise, 42).unwrap().image, img);
    let gain = ControlInstantiation::new("brightness").number("gain", 1.0);
    assert_eq!(reg.apply_post(&img, &gain, 42).unwrap().image, img);
    let blur = ControlInstantiation::new("blur").number("sigma", 0.0);
    assert_eq!(reg.apply_post(&img, &blur, 42).unwrap().image, img);
}

#[test]
fn noise_is_seeded() {
    let reg = registry();
    let img = RgbBuffer::solid(16, 16, [0.5; 3]);
    let noise = ControlInstantiation::new("gaussian_noise").number("sigma", 0.1);
    let a = reg.apply_post(&img, &noise, 1).unwrap().image;
    let b = reg.apply_post(&img, &noise, 1).unwrap().image;
    let c = reg.apply_post(&img, &noise, 2).unwrap().image;
    assert_eq!(a, b);
    assert_ne!(a, c);
    let chain = [noise.clone(), noise];
    let x = reg.apply_post_chain(img.clone(), &chain, 9, 17).unwrap();
    let y = reg.apply_post_chain(img, &chain, 9, 17).unwrap();
    assert_eq!(x, y);
}

#[test]
fn blur_preserves_constant_images_and_mean_of_impulse() {
    let reg = registry();
    let flat = RgbBuffer::solid(10, 10, [0.25; 3]);
    let blur = ControlInstantiation::new("blur").number("sigma", 1.5);
    let out = reg.apply_post(&flat, &blur, 0).unwrap().image;
    for p in out.pixels() {
        assert!((p[0] - 0.25).abs() < 1e-6);
    }
    let impulse = RgbBuffer::from_fn(21, 21, |x, y| if (x, y) == (10, 10) { [1.0; 3] } else { [0.0; 3] });
    let out = reg.apply_post(&impulse, &blur, 0).unwrap().image;
    let total: f64 = out.pixels().iter().map(|p| p[0] as f64).sum();
    assert!((total - 1.0).abs() < 1e-5);
    assert!(out.get(10, 10)[0] > out.get(11, 10)[0]);
}

#[cfg(unix)]
#[test]
fn external_filter_round_trips_through_a_process() {
    let mut reg = registry();
    reg.register_post(Arc::new(ExternalFilter::new("passthrough", "cat", vec![], vec![]))).unwrap();
    let img = RgbBuffer::from_fn(5, 3, |x, _| [x as f32 / 4.0, 0.0, 1.0]);
    let out = reg.apply_post(&img, &ControlInstantiation::new("passthrough"), 0).unwrap();
    // 8-bit transport: values come back rounded to the nearest 1/255.
    assert!(out.image.pixels().iter().zip(img.pixels()).all(|(a, b)| (a[0] - b[0]).abs() <= 0.5 / 255.0 + 1e-6));

    reg.register_post(Arc::new(ExternalFilter::new("broken", "false", vec![], vec![]))).unwrap();
    assert!(matches!(
        reg.apply_post(&img, &ControlInstantiation::new("broken"), 0),
        Err(ControlError::External { .. })
    ));
}

fn extreme_instantiation(d: &ControlDescriptor, pick: &[bool]) -> ControlInstantiation {
    let mut inst = ControlInstantiation::new(&d.name);
    for (p, &hi) in d.params.iter().zip(pick.iter().cycle()) {
        inst = match &p.domain {
            ParamDomain::Continuous { min, max } => inst.number(&p.name, if hi { *max } else { *min }),
            ParamDomain::Discrete { values } => inst.index(&p.name, if hi { values.len() - 1 } else { 0 }),
        };
    }
    inst
}

proptest! {
    #[test]
    fn rendered_controls_at_extremes_keep_state_valid(
        pick in proptest::collection::vec(any::<bool>(), 1..8),
        ctrl in 0usize..8,
    ) {
        let reg = registry();
        let names = ["orientation", "camera", "position", "scale", "background", "texture_swap", "time_of_day", "liquid_fill"];
        let d = reg.descriptor(names[ctrl]).unwrap();
        let inst = extreme_instantiation(d, &pick);
        match reg.apply_rendered(&base_state(), &inst) {
            Ok(s) => prop_assert!(s.validate().is_ok()),
            // The only permitted rejection is the all-zero liquid mixture.
            Err(ControlError::Invalid { control, .. }) => prop_assert_eq!(control, "liquid_fill"),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn post_controls_keep_resolution_and_range(
        pick in proptest::collection::vec(any::<bool>(), 1..8),
        ctrl in 0usize..4,
        seed in any::<u64>(),
    ) {
        let reg = registry();
        let names = ["occlusion", "gaussian_noise", "brightness", "blur"];
        let d = reg.descriptor(names[ctrl]).unwrap();
        let img = RgbBuffer::from_fn(17, 16, |x, y| [x as f32 / 17.0, y as f32 / 16.0, 0.5]);
        let out = reg.apply_post(&img, &extreme_instantiation(d, &pick), seed).unwrap();
        prop_assert_eq!((out.image.width(), out.image.height()), (17, 16));
        prop_assert!(out.image.pixels().iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }
}
