//! Experiment configuration file (TOML).
//!
//! Unknown keys are rejected everywhere. Relative asset paths resolve against
//! the directory holding the config file.
//!
//! ```toml
//! name = "demo"
//! seed = 7
//!
//! [[assets.meshes]]
//! path = "meshes/mug.obj"
//!
//! [[assets.meshes]]
//! primitive = "sphere"
//! name = "ball"
//! labels = ["blue"]
//! texture = "blue"
//!
//! [[assets.environments]]
//! name = "studio"
//! color = [1.0, 1.0, 1.0]
//!
//! [[assets.textures]]
//! name = "blue"
//! color = [0.0, 0.0, 1.0]
//!
//! [[controls]]
//! name = "camera"
//! params = { zoom = [0.5, 2.0], azimuth = 0.3 }
//!
//! [policy]
//! name = "grid"
//! counts = { "camera.zoom" = 3 }
//!
//! [evaluator]
//! task = "classification"
//! toy = { ignore_color = [1.0, 1.0, 1.0] }
//!
//! [output]
//! save_buffers = ["rgb", "uv"]
//! ```
//!
//! Control parameters not listed under `params` stay at their defaults and
//! are not searched. A `[lo, hi]` pair narrows a continuous parameter, a
//! single number pins it. For discrete parameters a list selects a subset of
//! values and a single value pins one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controls::Literal;
use crate::evaluator::{TaskKind, ToyModelSpec};
use crate::policy::PolicyConfig;
use crate::render::{LiquidPalette, Modality};

pub const ENV_BIND: &str = "SCENEDIAG_BIND";
pub const ENV_OUTPUT_DIR: &str = "SCENEDIAG_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: at `{field}`: {message}")]
    Parse { file: String, field: String, message: String },
    #[error("`{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("`{field}`: file not found: {path}")]
    MissingFile { field: String, path: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub assets: AssetsConfig,
    #[serde(default)]
    pub controls: Vec<ControlConfig>,
    #[serde(default = "PolicyConfig::grid")]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub orchestrator: OrchestratorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetsConfig {
    pub meshes: Vec<MeshConfig>,
    pub environments: Vec<EnvironmentConfig>,
    #[serde(default)]
    pub textures: Vec<TextureConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Cube,
    Sphere,
    Cup,
    Quad,
}

/// A mesh from an OBJ file or a built-in primitive. `labels` and `texture`
/// override whatever the file declares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primitive: Option<Primitive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f32; 3]>,
    #[serde(default)]
    pub tiling: bool,
}

/// How one control parameter enters the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamSetting {
    Number(f64),
    Text(String),
    List(Vec<Literal>),
}

/// A post control backed by an external program (see
/// [`crate::controls::ExternalFilter`]). Every parameter is continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamSetting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalConfig>,
}

fn default_timeout() -> f64 {
    10.0
}

fn default_iou() -> f64 {
    0.5
}

/// Model selection. With neither `url` nor `toy` the built-in toy model runs
/// with its default classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorConfig {
    #[serde(default = "default_task")]
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
}

fn default_task() -> TaskKind {
    TaskKind::Classification
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            task: default_task(),
            toy: None,
            url: None,
            vocabulary: None,
            timeout_secs: default_timeout(),
            iou_threshold: default_iou(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub palette: LiquidPalette,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, palette: LiquidPalette::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    /// Policy instances allowed to have work in flight at once.
    pub max_active: usize,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub heartbeat_secs: f64,
    /// How long to wait for the first worker.
    pub register_timeout_secs: f64,
    pub bind: String,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self { max_active: 5, retries: 2, heartbeat_secs: 1.0, register_timeout_secs: 30.0, bind: "127.0.0.1:0".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Run directory; defaults to `runs/<name>` next to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub save_buffers: Vec<Modality>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            file: file.to_string(),
            field: String::new(),
            message: e.to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            file: file.to_string(),
            field: e.path().to_string(),
            message: e.inner().message().to_string(),
        })
    }

    /// Read, parse, apply environment overrides, resolve relative paths
    /// against the file's directory and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.apply_env(|k| std::env::var(k).ok());
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(bind) = get(ENV_BIND) {
            self.orchestrator.bind = bind;
        }
        if let Some(dir) = get(ENV_OUTPUT_DIR) {
            self.output.dir = Some(PathBuf::from(dir));
        }
    }

    /// Make every relative path absolute under `base` and fill in the
    /// default output directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.assets.meshes.iter_mut().filter_map(|m| m.path.as_mut()).for_each(fix);
        self.assets.environments.iter_mut().filter_map(|e| e.path.as_mut()).for_each(fix);
        self.assets.textures.iter_mut().filter_map(|t| t.path.as_mut()).for_each(fix);
        if let Some(v) = self.evaluator.vocabulary.as_mut() {
            fix(v);
        }
        let dir = self.output.dir.get_or_insert_with(|| PathBuf::from("runs").join(&self.name));
        fix(dir);
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }

    /// Structural checks that need no asset loading: required fields,
    /// referenced files, numeric ranges, name uniqueness.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if self.assets.meshes.is_empty() {
            return Err(invalid("assets.meshes", "at least one mesh is required"));
        }
        if self.assets.environments.is_empty() {
            return Err(invalid("assets.environments", "at least one environment is required"));
        }
        let exists = |field: String, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::MissingFile { field, path: p.display().to_string() })
            }
        };
        let mut names = BTreeSet::new();
        for (i, m) in self.assets.meshes.iter().enumerate() {
            let field = format!("assets.meshes[{i}]");
            match (&m.path, &m.primitive) {
                (Some(p), None) => exists(format!("{field}.path"), p)?,
                (None, Some(_)) if m.name.is_none() => return Err(invalid(field, "a primitive needs a name")),
                (None, Some(_)) => {}
                _ => return Err(invalid(field, "set exactly one of `path` or `primitive`")),
            }
            if m.size.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
                return Err(invalid(format!("{field}.size"), "must be positive"));
            }
            if !names.insert(self.mesh_name(i)) {
                return Err(invalid(field, format!("duplicate mesh name '{}'", self.mesh_name(i))));
            }
        }
        names.clear();
        for (i, e) in self.assets.environments.iter().enumerate() {
            let field = format!("assets.environments[{i}]");
            match (&e.path, &e.color) {
                (Some(p), None) => exists(format!("{field}.path"), p)?,
                (None, Some(c)) => {
                    if e.name.is_none() {
                        return Err(invalid(field, "a colour environment needs a name"));
                    }
                    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(invalid(format!("{field}.color"), "channels must lie in [0, 1]"));
                    }
                }
                _ => return Err(invalid(field, "set exactly one of `path` or `color`")),
            }
            if e.ambient_scale.is_some_and(|s| !(s >= 0.0)) {
                return Err(invalid(format!("{field}.ambient_scale"), "must be nonnegative"));
            }
            if !names.insert(self.environment_name(i)) {
                return Err(invalid(field, format!("duplicate environment name '{}'", self.environment_name(i))));
            }
        }
        names.clear();
        for (i, t) in self.assets.textures.iter().enumerate() {
            let field = format!("assets.textures[{i}]");
            match (&t.path, &t.color) {
                (Some(p), None) => exists(format!("{field}.path"), p)?,
                (None, Some(_)) if t.name.is_none() => return Err(invalid(field, "a colour texture needs a name")),
                (None, Some(_)) => {}
                _ => return Err(invalid(field, "set exactly one of `path` or `color`")),
            }
            let name = self.texture_name(i);
            if name == crate::scene::ORIGINAL_TEXTURE || name == crate::render::WHITE_TEXTURE {
                return Err(invalid(field, format!("texture name '{name}' is reserved")));
            }
            if !names.insert(name.clone()) {
                return Err(invalid(field, format!("duplicate texture name '{name}'")));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.controls.iter().enumerate() {
            if !seen.insert(c.name.as_str()) {
                return Err(invalid(format!("controls[{i}].name"), format!("control '{}' listed twice", c.name)));
            }
        }
        let e = &self.evaluator;
        match (&e.url, &e.toy) {
            (Some(_), Some(_)) => return Err(invalid("evaluator", "set at most one of `url` or `toy`")),
            (Some(_), None) => match &e.vocabulary {
                Some(v) => exists("evaluator.vocabulary".into(), v)?,
                None => return Err(invalid("evaluator.vocabulary", "required with `url`")),
            },
            _ => {}
        }
        if !(e.timeout_secs > 0.0) {
            return Err(invalid("evaluator.timeout_secs", "must be positive"));
        }
        if !(e.iou_threshold > 0.0 && e.iou_threshold <= 1.0) {
            return Err(invalid("evaluator.iou_threshold", "must lie in (0, 1]"));
        }
        if self.render.width < crate::scene::MIN_RESOLUTION || self.render.height < crate::scene::MIN_RESOLUTION {
            return Err(invalid("render", "resolution must be at least 16x16"));
        }
        let o = &self.orchestrator;
        if o.max_active == 0 {
            return Err(invalid("orchestrator.max_active", "must be at least 1"));
        }
        if !(o.heartbeat_secs > 0.0) {
            return Err(invalid("orchestrator.heartbeat_secs", "must be positive"));
        }
        if self.policy.batch_size == 0 {
            return Err(invalid("policy.batch_size", "must be at least 1"));
        }
        Ok(())
    }

    pub fn mesh_name(&self, i: usize) -> String {
        let m = &self.assets.meshes[i];
        m.name.clone().unwrap_or_else(|| stem(m.path.as_deref()))
    }

    pub fn environment_name(&self, i: usize) -> String {
        let e = &self.assets.environments[i];
        e.name.clone().unwrap_or_else(|| stem(e.path.as_deref()))
    }

    pub fn texture_name(&self, i: usize) -> String {
        let t = &self.assets.textures[i];
        t.name.clone().unwrap_or_else(|| stem(t.path.as_deref()))
    }

    /// SHA-256 over the canonical JSON form. Formatting, key order and
    /// spelled-out defaults do not change it; the output location is left
    /// out since it does not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn stem(p: Option<&Path>) -> String {
    p.and_then(|p| p.file_stem()).and_then(|s| s.to_str()).unwrap_or("unnamed").to_string()
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[[assets.meshes]]
primitive = "cube"
name = "box"
[[assets.environments]]
name = "white"
color = [1.0, 1.0, 1.0]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, "t.toml").unwrap();
        c.validate().unwrap();
        assert_eq!(c.orchestrator.max_active, 5);
        assert_eq!(c.orchestrator.retries, 2);
        assert_eq!(c.policy.name, "grid");
        assert_eq!(c.evaluator.task, TaskKind::Classification);
        assert_eq!((c.render.width, c.render.height), (64, 64));
    }

    #[test]
    fn unknown_key_reports_field_path() {
        let text = MINIMAL.replace("name = \"box\"", "name = \"box\"\ncolour = 3");
        let err = ExperimentConfig::parse(&text, "t.toml").unwrap_err().to_string();
        assert!(err.contains("assets.meshes[0]"), "{err}");
        assert!(err.contains("colour"), "{err}");
        let err = ExperimentConfig::parse(&format!("{MINIMAL}\n[orchestrator]\nmax_actve = 2\n"), "t.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("max_actve"), "{err}");
    }

    #[test]
    fn missing_mesh_file_names_path() {
        let text = r#"
name = "t"
[[assets.meshes]]
path = "nowhere/teapot.obj"
[[assets.environments]]
name = "white"
color = [1.0, 1.0, 1.0]
"#;
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("exp.toml");
        std::fs::write(&cfg, text).unwrap();
        let err = ExperimentConfig::load(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::MissingFile { .. }));
        assert!(msg.contains("nowhere/teapot.obj") && msg.contains("assets.meshes[0].path"), "{msg}");
    }

    #[test]
    fn env_overrides() {
        let mut c = ExperimentConfig::parse(MINIMAL, "t.toml").unwrap();
        c.apply_env(|k| match k {
            ENV_BIND => Some("0.0.0.0:9000".into()),
            ENV_OUTPUT_DIR => Some("/tmp/out".into()),
            _ => None,
        });
        assert_eq!(c.orchestrator.bind, "0.0.0.0:9000");
        assert_eq!(c.output_dir(), PathBuf::from("/tmp/out"));
    }

    #[test]
    fn hash_ignores_layout_and_explicit_defaults() {
        let a = ExperimentConfig::parse(MINIMAL, "a").unwrap();
        let reordered = r#"
[[assets.environments]]
color = [1.0, 1.0, 1.0]
name = "white"

[[assets.meshes]]
name   = "box"
primitive = "cube"

[orchestrator]
retries = 2
"#;
        let b = ExperimentConfig::parse(&format!("name = \"t\"\nseed = 0\n{reordered}"), "b").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(&MINIMAL.replace("\"box\"", "\"crate\""), "c").unwrap();
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.seed = 1;
        assert_ne!(a.hash(), d.hash());
        let mut e = a.clone();
        e.output.dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), e.hash());
    }

    #[test]
    fn structural_errors() {
        let both = MINIMAL.replace("primitive = \"cube\"", "primitive = \"cube\"\npath = \"x.obj\"");
        assert!(ExperimentConfig::parse(&both, "t").unwrap().validate().is_err());
        let dup = format!("{MINIMAL}\n[[assets.meshes]]\nprimitive = \"sphere\"\nname = \"box\"\n");
        let err = ExperimentConfig::parse(&dup, "t").unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("duplicate mesh"), "{err}");
        let url = format!("{MINIMAL}\n[evaluator]\nurl = \"http://x\"\n");
        let err = ExperimentConfig::parse(&url, "t").unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("evaluator.vocabulary"), "{err}");
    }

    #[test]
    fn param_settings_parse() {
        let text = format!(
            "{MINIMAL}\n[[controls]]\nname = \"camera\"\nparams = {{ zoom = [0.5, 2], azimuth = 0.3 }}\n[[controls]]\nname = \"background\"\nparams = {{ environment = [\"white\"] }}\n"
        );
        let c = ExperimentConfig::parse(&text, "t").unwrap();
        assert_eq!(
            c.controls[0].params["zoom"],
            ParamSetting::List(vec![Literal::Float(0.5), Literal::Int(2)])
        );
        assert_eq!(c.controls[0].params["azimuth"], ParamSetting::Number(0.3));
        assert_eq!(c.controls[1].params["environment"], ParamSetting::List(vec![Literal::Text("white".into())]));
    }
}
