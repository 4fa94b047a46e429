//! Small self-contained experiments: the demo run and the texture-bias
//! fixture. Both use built-in primitives and the toy model, so they need no
//! files beyond what these functions write.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::image::RgbBuffer;

pub const DEMO_CONFIG: &str = "demo.toml";
pub const DEMO_SKY: &str = "sky.png";

/// Equirectangular sky: blue above the horizon fading to a green ground,
/// with a faint grid so the background is not flat.
pub fn sky_image() -> RgbBuffer {
    let (w, h) = (128, 64);
    RgbBuffer::from_fn(w, h, |x, y| {
        let t = y as f32 / (h - 1) as f32;
        let base = if t < 0.5 {
            let s = t / 0.5;
            [0.35 + 0.4 * s, 0.55 + 0.3 * s, 0.95]
        } else {
            let s = (t - 0.5) / 0.5;
            [0.25 - 0.1 * s, 0.55 - 0.2 * s, 0.2]
        };
        if x % 16 == 0 || y % 16 == 0 {
            base.map(|c| c * 0.8)
        } else {
            base
        }
    })
}

/// Two meshes (red cube, blue sphere), two environments (white studio and
/// an image sky), zoom at 3 values × background at 2: 24 renders.
pub fn demo_config_text(output_dir: &str) -> String {
    format!(
        r#"name = "demo"
seed = 7

[[assets.meshes]]
primitive = "cube"
name = "red_cube"
labels = ["red"]
texture = "red"

[[assets.meshes]]
primitive = "sphere"
name = "blue_sphere"
labels = ["blue"]
texture = "blue"

[[assets.environments]]
name = "studio"
color = [1.0, 1.0, 1.0]

[[assets.environments]]
name = "sky"
path = "{DEMO_SKY}"

[[assets.textures]]
name = "red"
color = [0.9, 0.1, 0.1]

[[assets.textures]]
name = "blue"
color = [0.1, 0.2, 0.9]

[[controls]]
name = "camera"
params = {{ zoom = [0.5, 2.0] }}

[[controls]]
name = "background"
params = {{ environment = ["studio", "sky"] }}

[policy]
name = "grid"
counts = {{ "camera.zoom" = 3 }}

[evaluator]
task = "classification"
toy = {{ ignore_color = [1.0, 1.0, 1.0], ignore_tolerance = 0.15 }}

[render]
width = 64
height = 64

[output]
dir = "{output_dir}"
save_buffers = ["rgb", "uv", "seg"]
"#
    )
}

/// Write the demo config and its sky image into `dir`; returns the config
/// path. The run goes to `dir/run` unless `output_dir` says otherwise.
pub fn write_demo(dir: &Path, output_dir: Option<&Path>) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(DEMO_SKY), sky_image().to_png())?;
    let out = output_dir.map_or_else(|| "run".to_string(), |p| p.display().to_string());
    let path = dir.join(DEMO_CONFIG);
    fs::write(&path, demo_config_text(&out.replace('\\', "/")))?;
    Ok(path)
}

/// Two solid-colour meshes on a white backdrop; `texture_swap` replaces
/// their colour with one of two other classes. Viewpoints vary yaw and zoom.
pub fn texture_bias_config_text(output_dir: &str) -> String {
    format!(
        r#"name = "texture-bias"
seed = 11

[[assets.meshes]]
primitive = "cube"
name = "red_cube"
labels = ["red"]
texture = "red"

[[assets.meshes]]
primitive = "sphere"
name = "blue_sphere"
labels = ["blue"]
texture = "blue"

[[assets.environments]]
name = "studio"
color = [1.0, 1.0, 1.0]

[[assets.textures]]
name = "red"
color = [1.0, 0.0, 0.0]

[[assets.textures]]
name = "blue"
color = [0.0, 0.0, 1.0]

[[assets.textures]]
name = "green"
color = [0.0, 1.0, 0.0]

[[assets.textures]]
name = "yellow"
color = [1.0, 1.0, 0.0]

[[controls]]
name = "orientation"
params = {{ yaw = [0.0, 5.5] }}

[[controls]]
name = "camera"
params = {{ zoom = [0.8, 1.6] }}

[[controls]]
name = "texture_swap"
params = {{ texture = ["original", "green", "yellow"] }}

[policy]
name = "grid"
counts = {{ "orientation.yaw" = 4, "camera.zoom" = 2 }}

[evaluator]
task = "classification"
toy = {{ ignore_color = [1.0, 1.0, 1.0], ignore_tolerance = 0.15 }}

[render]
width = 48
height = 48

[output]
dir = "{output_dir}"
"#
    )
}
