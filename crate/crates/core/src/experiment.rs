//! A validated experiment: loaded assets, the control plan that maps search
//! points onto control instantiations, and the per-item pipeline a worker
//! runs (render, post-process, infer, grade).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ParamSetting, Primitive};
use crate::controls::{
    ControlDescriptor, ControlError, ControlInstantiation, ControlKind, ControlRegistry, ControlWarning,
    ExternalFilter, Literal, ParamDecl, ParamDomain, ParamValue,
};
use crate::evaluator::{
    self, load_vocabulary, CachedModelClient, HttpModelClient, ModelClient, ModelError, PredictionResult,
    ToyCentroidModel,
};
use crate::policy::{build_space, Policy, PolicyError, PolicyRegistry, RawValue, SearchSpace};
use crate::render::buffers::WireRender;
use crate::render::{AssetStore, BuiltinRasterizer, Modality, RenderBackend, RenderSettings, TextureAsset};
use crate::scene::{self, default_scene, load_environment, EnvironmentSource, MeshAsset, Resolution, SceneState};
use crate::math::derive_seed;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("asset '{name}': {message}")]
    Asset { name: String, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

fn bad(field: String, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

/// Everything needed to reproduce one render: the (mesh, environment) pair,
/// the full list of control instantiations in declaration order, the
/// experiment seed and the output size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfiguration {
    pub mesh: String,
    pub environment: String,
    pub controls: Vec<ControlInstantiation>,
    pub seed: u64,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Fixed(ParamValue),
    /// Search dimension `dim`. For discrete parameters `choices[k]` is the
    /// index into the full value list of the k-th selected value.
    Search { dim: usize, choices: Option<Vec<usize>> },
}

#[derive(Debug, Clone)]
struct PlannedControl {
    descriptor: ControlDescriptor,
    slots: Vec<(String, Slot)>,
}

/// Maps points of the search space onto control instantiations. Parameters
/// without a setting in the config stay at their declared defaults.
#[derive(Debug, Clone)]
pub struct ControlPlan {
    controls: Vec<PlannedControl>,
    space: SearchSpace,
}

fn literal_matches(lit: &Literal, setting: &Literal) -> bool {
    match (lit, setting) {
        (Literal::Text(a), Literal::Text(b)) => a == b,
        (Literal::Text(_), _) | (_, Literal::Text(_)) => false,
        (a, b) => literal_f64(a) == literal_f64(b),
    }
}

fn literal_f64(l: &Literal) -> Option<f64> {
    match l {
        Literal::Int(i) => Some(*i as f64),
        Literal::Float(x) => Some(*x),
        Literal::Text(_) => None,
    }
}

fn setting_literal(s: &ParamSetting) -> Option<Literal> {
    match s {
        ParamSetting::Number(x) => Some(Literal::Float(*x)),
        ParamSetting::Text(t) => Some(Literal::Text(t.clone())),
        ParamSetting::List(_) => None,
    }
}

impl ControlPlan {
    pub fn new(registry: &ControlRegistry, experiment: &ExperimentConfig) -> Result<Self, ConfigError> {
        let mut controls = Vec::new();
        let mut searched: Vec<ControlDescriptor> = Vec::new();
        let mut dim = 0;
        for (ci, cc) in experiment.controls.iter().enumerate() {
            let field = format!("controls[{ci}]");
            let descriptor = registry
                .descriptor(&cc.name)
                .ok_or_else(|| {
                    let known: Vec<&str> = registry.names().collect();
                    bad(format!("{field}.name"), format!("unknown control '{}' (known: {})", cc.name, known.join(", ")))
                })?
                .clone();
            for key in cc.params.keys() {
                if descriptor.param(key).is_none() {
                    let known: Vec<&str> = descriptor.params.iter().map(|p| p.name.as_str()).collect();
                    return Err(bad(
                        format!("{field}.params.{key}"),
                        format!("control '{}' has no parameter '{key}' (has: {})", cc.name, known.join(", ")),
                    ));
                }
            }
            let mut slots = Vec::new();
            let mut decls = Vec::new();
            for p in &descriptor.params {
                let pf = format!("{field}.params.{}", p.name);
                let slot = match (cc.params.get(&p.name), &p.domain) {
                    (None, _) => Slot::Fixed(p.default),
                    (Some(ParamSetting::Number(x)), ParamDomain::Continuous { min, max }) => {
                        if !(x >= min && x <= max) {
                            return Err(bad(pf, format!("{x} outside [{min}, {max}]")));
                        }
                        Slot::Fixed(ParamValue::Number(*x))
                    }
                    (Some(ParamSetting::List(l)), ParamDomain::Continuous { min, max }) => {
                        let (lo, hi) = match l.as_slice() {
                            [a, b] => match (literal_f64(a), literal_f64(b)) {
                                (Some(a), Some(b)) => (a, b),
                                _ => return Err(bad(pf, "range bounds must be numbers")),
                            },
                            _ => return Err(bad(pf, "a continuous range is written [lo, hi]")),
                        };
                        if !(lo < hi && lo >= *min && hi <= *max) {
                            return Err(bad(pf, format!("range [{lo}, {hi}] must satisfy {min} <= lo < hi <= {max}")));
                        }
                        decls.push(ParamDecl::continuous(&p.name, lo, hi, lo));
                        dim += 1;
                        Slot::Search { dim: dim - 1, choices: None }
                    }
                    (Some(ParamSetting::Text(_)), ParamDomain::Continuous { .. }) => {
                        return Err(bad(pf, "expected a number or a [lo, hi] range"))
                    }
                    (Some(ParamSetting::List(l)), ParamDomain::Discrete { values }) => {
                        let mut choices = Vec::new();
                        for item in l {
                            let i = values
                                .iter()
                                .position(|v| literal_matches(v, item))
                                .ok_or_else(|| bad(pf.clone(), format!("'{item}' is not one of the declared values")))?;
                            if choices.contains(&i) {
                                return Err(bad(pf, format!("'{item}' listed twice")));
                            }
                            choices.push(i);
                        }
                        if choices.is_empty() {
                            return Err(bad(pf, "value list must not be empty"));
                        }
                        let subset = choices.iter().map(|&i| values[i].clone()).collect();
                        decls.push(ParamDecl::discrete(&p.name, subset, 0));
                        dim += 1;
                        Slot::Search { dim: dim - 1, choices: Some(choices) }
                    }
                    (Some(s), ParamDomain::Discrete { values }) => {
                        let lit = setting_literal(s).expect("non-list setting");
                        let i = values
                            .iter()
                            .position(|v| literal_matches(v, &lit))
                            .ok_or_else(|| bad(pf, format!("'{lit}' is not one of the declared values")))?;
                        Slot::Fixed(ParamValue::Index(i))
                    }
                };
                slots.push((p.name.clone(), slot));
            }
            if !decls.is_empty() {
                searched.push(ControlDescriptor::new(&descriptor.name, descriptor.kind, decls));
            }
            controls.push(PlannedControl { descriptor, slots });
        }
        let space = build_space(&searched).map_err(|e| bad("controls".into(), e.to_string()))?;
        Ok(Self { controls, space })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Full instantiations, one per configured control, in declaration order.
    pub fn instantiate(&self, point: &[RawValue]) -> Vec<ControlInstantiation> {
        self.controls
            .iter()
            .map(|c| ControlInstantiation {
                control: c.descriptor.name.clone(),
                assignments: c
                    .slots
                    .iter()
                    .map(|(name, slot)| {
                        let v = match slot {
                            Slot::Fixed(v) => *v,
                            Slot::Search { dim, choices: None } => ParamValue::Number(point[*dim].as_f64()),
                            Slot::Search { dim, choices: Some(ch) } => match point[*dim] {
                                RawValue::Index(k) => ParamValue::Index(ch[k]),
                                RawValue::Float(_) => panic!("discrete dimension {dim} received a float"),
                            },
                        };
                        (name.clone(), v)
                    })
                    .collect(),
            })
            .collect()
    }

    /// Human-readable value of every parameter (searched or fixed), keyed
    /// `control.param`.
    pub fn expand(&self, controls: &[ControlInstantiation]) -> BTreeMap<String, Literal> {
        let mut out = BTreeMap::new();
        for (plan, inst) in self.controls.iter().zip(controls) {
            for p in &plan.descriptor.params {
                let lit = match (inst.assignments.get(&p.name), &p.domain) {
                    (Some(ParamValue::Number(x)), _) => Literal::Float(*x),
                    (Some(ParamValue::Index(i)), ParamDomain::Discrete { values }) => values[*i].clone(),
                    _ => continue,
                };
                out.insert(format!("{}.{}", plan.descriptor.name, p.name), lit);
            }
        }
        out
    }

    pub fn kind_of(&self, control: &str) -> Option<ControlKind> {
        self.controls.iter().find(|c| c.descriptor.name == control).map(|c| c.descriptor.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub mesh: String,
    pub environment: String,
}

pub struct Experiment {
    pub config: ExperimentConfig,
    pub assets: Arc<AssetStore>,
    pub registry: Arc<ControlRegistry>,
    pub plan: ControlPlan,
    /// One entry per policy instance, mesh-major.
    pub pairs: Vec<Pair>,
    pub vocabulary: Vec<String>,
    pub checksums: BTreeMap<String, String>,
    policies: PolicyRegistry,
}

fn sha_json<T: Serialize>(v: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("serializable")))
}

fn load_mesh_config(cfg: &ExperimentConfig, i: usize) -> Result<(MeshAsset, String), ExperimentError> {
    let m = &cfg.assets.meshes[i];
    let name = cfg.mesh_name(i);
    let asset_err = |message: String| ExperimentError::Asset { name: name.clone(), message };
    let (mut mesh, sum) = match (&m.path, m.primitive) {
        (Some(path), _) => {
            let mut mesh = scene::load_mesh(path).map_err(|e| asset_err(e.to_string()))?;
            mesh.name = name.clone();
            let sum = crate::config::file_sha256(path).map_err(|e| asset_err(e.to_string()))?;
            (mesh, sum)
        }
        (None, Some(kind)) => {
            let size = m.size.unwrap_or(1.0);
            let mesh = match kind {
                Primitive::Cube => scene::primitives::cube(&name, size),
                Primitive::Sphere => scene::primitives::uv_sphere(&name, size / 2.0, 16, 32),
                Primitive::Cup => scene::primitives::cup(&name, size / 2.0, size, 32),
                Primitive::Quad => scene::primitives::quad(&name, size),
            };
            (mesh, sha_json(m))
        }
        (None, None) => unreachable!("validated"),
    };
    if !m.labels.is_empty() {
        mesh.label_set = m.labels.iter().cloned().collect();
    }
    if let Some(t) = &m.texture {
        mesh.base_texture = t.clone();
    }
    mesh.validate().map_err(|e| asset_err(e.to_string()))?;
    Ok((mesh, sum))
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        Self::with_policies(config, PolicyRegistry::default())
    }

    /// Build with a policy registry that may hold custom policies.
    pub fn with_policies(config: ExperimentConfig, policies: PolicyRegistry) -> Result<Self, ExperimentError> {
        config.validate()?;
        let mut store = AssetStore::new();
        let mut checksums = BTreeMap::new();
        let mut pairs = Vec::new();
        let mut meshes = Vec::new();
        for i in 0..config.assets.meshes.len() {
            let (mesh, sum) = load_mesh_config(&config, i)?;
            checksums.insert(format!("mesh:{}", mesh.name), sum);
            meshes.push(mesh.name.clone());
            store.add_mesh(mesh);
        }
        let mut environments = Vec::new();
        for (i, e) in config.assets.environments.iter().enumerate() {
            let name = config.environment_name(i);
            let source = match (&e.path, e.color) {
                (Some(p), _) => EnvironmentSource::Path(p.clone()),
                (None, Some(c)) => EnvironmentSource::Color(c),
                (None, None) => unreachable!("validated"),
            };
            let mut env = load_environment(&name, &source)
                .map_err(|err| ExperimentError::Asset { name: name.clone(), message: err.to_string() })?
                .with_tags(e.tags.clone());
            if let Some(s) = e.ambient_scale {
                env = env.with_ambient_scale(s);
            }
            let sum = match &e.path {
                Some(p) => crate::config::file_sha256(p)
                    .map_err(|err| ExperimentError::Asset { name: name.clone(), message: err.to_string() })?,
                None => sha_json(e),
            };
            checksums.insert(format!("environment:{name}"), sum);
            environments.push(name);
            store.add_environment(env);
        }
        let mut textures = Vec::new();
        for (i, t) in config.assets.textures.iter().enumerate() {
            let name = config.texture_name(i);
            let asset_err = |message: String| ExperimentError::Asset { name: name.clone(), message };
            let (tex, sum) = match (&t.path, t.color) {
                (Some(p), _) => (
                    TextureAsset::load(&name, p, t.tiling).map_err(|e| asset_err(e.to_string()))?,
                    crate::config::file_sha256(p).map_err(|e| asset_err(e.to_string()))?,
                ),
                (None, Some(c)) => (TextureAsset::solid(&name, c), sha_json(t)),
                (None, None) => unreachable!("validated"),
            };
            checksums.insert(format!("texture:{name}"), sum);
            textures.push(name);
            store.add_texture(tex);
        }
        for m in &meshes {
            let mesh = store.mesh(m).expect("just added");
            if store.texture(&mesh.base_texture).is_err() {
                return Err(ExperimentError::Asset {
                    name: m.clone(),
                    message: format!("base texture '{}' is not among the configured textures", mesh.base_texture),
                });
            }
        }
        for m in &meshes {
            for e in &environments {
                pairs.push(Pair { mesh: m.clone(), environment: e.clone() });
            }
        }

        let mut registry = ControlRegistry::with_builtins(&environments, &textures);
        for (i, c) in config.controls.iter().enumerate() {
            if let Some(ext) = &c.external {
                let params = ext.params.iter().map(|(n, [lo, hi])| ParamDecl::continuous(n, *lo, *hi, *lo)).collect();
                registry.register_post(Arc::new(ExternalFilter::new(&c.name, &ext.program, ext.args.clone(), params))).map_err(
                    |e| ConfigError::Invalid { field: format!("controls[{i}].external"), message: e.to_string() },
                )?;
            }
        }
        let plan = ControlPlan::new(&registry, &config)?;

        let vocabulary = match (&config.evaluator.url, &config.evaluator.vocabulary) {
            (Some(_), Some(path)) => {
                let v = load_vocabulary(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
                checksums.insert("vocabulary".into(), crate::config::file_sha256(path).unwrap_or_default());
                v
            }
            _ => ToyCentroidModel::new(config.evaluator.toy.clone().unwrap_or_default()).vocabulary().to_vec(),
        };
        if vocabulary.is_empty() {
            return Err(ConfigError::Invalid { field: "evaluator.vocabulary".into(), message: "no classes".into() }.into());
        }

        let exp = Self {
            config,
            assets: Arc::new(store),
            registry: Arc::new(registry),
            plan,
            pairs,
            vocabulary,
            checksums,
            policies,
        };
        // Surface policy configuration errors before any work starts.
        exp.make_policy(0)?;
        Ok(exp)
    }

    pub fn space(&self) -> &SearchSpace {
        self.plan.space()
    }

    pub fn resolution(&self) -> Resolution {
        Resolution { width: self.config.render.width, height: self.config.render.height }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings { palette: self.config.render.palette }
    }

    /// Buffers every worker must be able to produce for this experiment.
    pub fn required_modalities(&self) -> Vec<Modality> {
        let mut set: BTreeSet<Modality> = self.config.output.save_buffers.iter().copied().collect();
        set.insert(Modality::Rgb);
        if self.config.evaluator.task == evaluator::TaskKind::Detection {
            set.insert(Modality::Seg);
        }
        set.into_iter().collect()
    }

    /// Control names workers must know, split into built-in and external.
    pub fn required_controls(&self) -> (Vec<String>, bool) {
        let builtin = self.config.controls.iter().filter(|c| c.external.is_none()).map(|c| c.name.clone()).collect();
        let external = self.config.controls.iter().any(|c| c.external.is_some());
        (builtin, external)
    }

    pub fn policy_seed(&self, pair: usize) -> u64 {
        derive_seed(&[self.config.seed, pair as u64])
    }

    pub fn make_policy(&self, pair: usize) -> Result<Box<dyn Policy>, PolicyError> {
        self.policies.create(self.space(), &self.config.policy, self.policy_seed(pair))
    }

    pub fn configuration(&self, pair: usize, point: &[RawValue]) -> RenderConfiguration {
        let p = &self.pairs[pair];
        RenderConfiguration {
            mesh: p.mesh.clone(),
            environment: p.environment.clone(),
            controls: self.plan.instantiate(point),
            seed: self.config.seed,
            resolution: self.resolution(),
        }
    }

    /// Default scene for the pair with every rendered control applied.
    pub fn scene(&self, cfg: &RenderConfiguration) -> Result<SceneState, ItemError> {
        let mesh = self.assets.mesh(&cfg.mesh).map_err(|e| ItemError::new(ErrorClass::Render, e))?;
        let env = self.assets.environment(&cfg.environment).map_err(|e| ItemError::new(ErrorClass::Render, e))?;
        let base = default_scene(mesh, env, cfg.resolution).map_err(|e| ItemError::new(ErrorClass::Render, e))?;
        let rendered: Vec<ControlInstantiation> =
            cfg.controls.iter().filter(|c| self.plan.kind_of(&c.control) == Some(ControlKind::Rendered)).cloned().collect();
        self.registry.compose(&base, &rendered).map_err(|e| ItemError::new(ErrorClass::Control, e))
    }

    pub fn model_client(&self) -> Arc<dyn ModelClient> {
        let e = &self.config.evaluator;
        match &e.url {
            Some(url) => Arc::new(HttpModelClient::new(
                url.clone(),
                self.vocabulary.clone(),
                Duration::from_secs_f64(e.timeout_secs),
            )),
            None => Arc::new(ToyCentroidModel::new(e.toy.clone().unwrap_or_default())),
        }
    }

    pub fn builtin_backend(&self) -> Arc<dyn RenderBackend> {
        Arc::new(BuiltinRasterizer::new(self.assets.clone(), self.render_settings()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Control,
    Render,
    ModelTimeout,
    Model,
    Protocol,
    Capability,
    WorkerLost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("{class:?}: {message}")]
pub struct ItemError {
    pub class: ErrorClass,
    pub message: String,
}

impl ItemError {
    pub fn new(class: ErrorClass, e: impl std::fmt::Display) -> Self {
        Self { class, message: e.to_string() }
    }
}

impl From<ModelError> for ItemError {
    fn from(e: ModelError) -> Self {
        let class = match e {
            ModelError::Timeout(_) => ErrorClass::ModelTimeout,
            _ => ErrorClass::Model,
        };
        ItemError::new(class, e)
    }
}

/// What a worker sends back for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkResult {
    pub prediction: Option<PredictionResult>,
    pub is_correct: Option<bool>,
    pub render_time: f64,
    pub infer_time: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<ControlWarning>,
    pub object_pixels: usize,
    /// Set by dummy workers, which neither render nor infer.
    #[serde(default)]
    pub dummy: bool,
}

impl WorkResult {
    pub fn dummy() -> Self {
        Self {
            prediction: None,
            is_correct: None,
            render_time: 0.0,
            infer_time: 0.0,
            warnings: Vec::new(),
            object_pixels: 0,
            dummy: true,
        }
    }
}

/// Render, post-process, infer and grade one configuration.
pub struct Pipeline {
    experiment: Arc<Experiment>,
    backend: Arc<dyn RenderBackend>,
    model: CachedModelClient,
}

impl Pipeline {
    pub fn new(experiment: Arc<Experiment>, backend: Arc<dyn RenderBackend>) -> Self {
        let model = CachedModelClient::new(experiment.model_client());
        Self { experiment, backend, model }
    }

    pub fn experiment(&self) -> &Experiment {
        &self.experiment
    }

    /// Returns the result and, when the experiment saves buffers, the
    /// encoded buffers (rgb after post-processing).
    pub fn process(
        &self,
        id: u64,
        cfg: &RenderConfiguration,
        scene: &SceneState,
    ) -> Result<(WorkResult, Option<WireRender>), ItemError> {
        let exp = &self.experiment;
        let start = Instant::now();
        let output = self.backend.render(scene).map_err(|e| ItemError::new(ErrorClass::Render, e))?;
        output.check_invariants().map_err(|e| ItemError::new(ErrorClass::Render, e))?;
        let post: Vec<ControlInstantiation> =
            cfg.controls.iter().filter(|c| exp.plan.kind_of(&c.control) == Some(ControlKind::Post)).cloned().collect();
        let processed = exp
            .registry
            .apply_post_chain(output.rgb_image(), &post, cfg.seed, id)
            .map_err(|e| ItemError::new(ErrorClass::Control, e))?;
        let output = output.with_rgb(processed.image);
        let render_time = start.elapsed().as_secs_f64();

        let mesh = exp.assets.mesh(&scene.mesh).map_err(|e| ItemError::new(ErrorClass::Render, e))?;
        let labels = evaluator::label_ids(&exp.vocabulary, &mesh.label_set);
        let ev = &exp.config.evaluator;
        let prediction = evaluator::evaluate(ev.task, &output, &self.model, id, &labels, ev.iou_threshold)?;
        let saved = &exp.config.output.save_buffers;
        // The wire form always carries rgb; the orchestrator saves only what was asked for.
        let wire = (!saved.is_empty()).then(|| {
            let mut shipped = saved.clone();
            if !shipped.contains(&Modality::Rgb) {
                shipped.push(Modality::Rgb);
            }
            WireRender::encode(&output, &shipped, true)
        });
        Ok((
            WorkResult {
                is_correct: prediction.is_correct,
                infer_time: prediction.latency,
                prediction: Some(prediction),
                render_time,
                warnings: processed.warnings,
                object_pixels: output.object_pixels(),
                dummy: false,
            },
            wire,
        ))
    }
}
