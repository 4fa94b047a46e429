//! Composable scene and image transformations.
//!
//! A *rendered* control maps a [`SceneState`] and parameters to a new state
//! before rendering; a *post* control maps a rendered image and parameters to
//! a new image. The two kinds are separate traits, so a rendered control can
//! never see pixels and a post control can never see the scene.
//!
//! When two rendered controls in one composition write the same field, the
//! later one wins (declaration order).

mod post;
mod rendered;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::RgbBuffer;
use crate::math::derive_seed;
use crate::scene::{SceneError, SceneState};

pub use post::{Blur, Brightness, ExternalFilter, GaussianNoise, Occlusion};
pub use rendered::{
    Background, CameraControl, LiquidFill, Orientation, Position, Scale, TextureSwap, TimeOfDay,
    LIQUID_COFFEE, LIQUID_LEVEL, LIQUID_MILK, LIQUID_WATER,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("unknown control '{0}'")]
    Unknown(String),
    #[error("control '{name}' is not a {expected} control")]
    WrongKind { name: String, expected: ControlKind },
    #[error("control '{control}': parameter '{param}' is not assigned")]
    MissingParam { control: String, param: String },
    #[error("control '{control}': unknown parameter '{param}'")]
    UnknownParam { control: String, param: String },
    #[error("control '{control}': parameter '{param}' = {value} outside [{min}, {max}]")]
    OutOfRange { control: String, param: String, value: f64, min: f64, max: f64 },
    #[error("control '{control}': parameter '{param}' index {index} outside 0..{len}")]
    BadIndex { control: String, param: String, index: usize, len: usize },
    #[error("control '{control}': parameter '{param}' expects a {expected} value")]
    WrongValueType { control: String, param: String, expected: &'static str },
    #[error("invalid descriptor for '{control}': {reason}")]
    Descriptor { control: String, reason: String },
    #[error("control '{control}': {reason}")]
    Invalid { control: String, reason: String },
    #[error("control '{control}' produced an invalid scene: {source}")]
    Scene {
        control: String,
        #[source]
        source: SceneError,
    },
    #[error("external filter '{control}' failed: {reason}")]
    External { control: String, reason: String },
    #[error("control #{index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<ControlError>,
    },
    #[error("control '{0}' is already registered")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Rendered,
    Post,
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlKind::Rendered => "rendered",
            ControlKind::Post => "post",
        })
    }
}

/// A value in a discrete parameter's list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Literal {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Literal::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Literal::Int(i) => Some(*i as f64),
            Literal::Float(x) => Some(*x),
            Literal::Text(_) => None,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => write!(f, "{x}"),
            Literal::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamDomain {
    Continuous { min: f64, max: f64 },
    Discrete { values: Vec<Literal> },
}

/// Assigned value of one parameter: a number for continuous parameters, an
/// index into the value list for discrete ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamValue {
    Number(f64),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub domain: ParamDomain,
    pub default: ParamValue,
}

impl ParamDecl {
    pub fn continuous(name: &str, min: f64, max: f64, default: f64) -> Self {
        Self { name: name.to_string(), domain: ParamDomain::Continuous { min, max }, default: ParamValue::Number(default) }
    }

    pub fn discrete(name: &str, values: Vec<Literal>, default: usize) -> Self {
        Self { name: name.to_string(), domain: ParamDomain::Discrete { values }, default: ParamValue::Index(default) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDescriptor {
    pub name: String,
    pub kind: ControlKind,
    /// Parameters in declaration order; names unique.
    pub params: Vec<ParamDecl>,
}

impl ControlDescriptor {
    pub fn new(name: &str, kind: ControlKind, params: Vec<ParamDecl>) -> Self {
        Self { name: name.to_string(), kind, params }
    }

    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let err = |reason: String| ControlError::Descriptor { control: self.name.clone(), reason };
        for (i, p) in self.params.iter().enumerate() {
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(err(format!("duplicate parameter '{}'", p.name)));
            }
            match &p.domain {
                ParamDomain::Continuous { min, max } => {
                    if !(min < max) || !min.is_finite() || !max.is_finite() {
                        return Err(err(format!("parameter '{}' needs min < max, got [{min}, {max}]", p.name)));
                    }
                }
                ParamDomain::Discrete { values } => {
                    if values.is_empty() {
                        return Err(err(format!("parameter '{}' has an empty value list", p.name)));
                    }
                }
            }
            self.check_value(p, p.default)?;
        }
        Ok(())
    }

    fn check_value(&self, p: &ParamDecl, v: ParamValue) -> Result<(), ControlError> {
        match (&p.domain, v) {
            (ParamDomain::Continuous { min, max }, ParamValue::Number(x)) => {
                if !(x >= *min && x <= *max) {
                    return Err(ControlError::OutOfRange {
                        control: self.name.clone(),
                        param: p.name.clone(),
                        value: x,
                        min: *min,
                        max: *max,
                    });
                }
            }
            (ParamDomain::Discrete { values }, ParamValue::Index(i)) => {
                if i >= values.len() {
                    return Err(ControlError::BadIndex {
                        control: self.name.clone(),
                        param: p.name.clone(),
                        index: i,
                        len: values.len(),
                    });
                }
            }
            (ParamDomain::Continuous { .. }, _) => {
                return Err(ControlError::WrongValueType {
                    control: self.name.clone(),
                    param: p.name.clone(),
                    expected: "number",
                })
            }
            (ParamDomain::Discrete { .. }, _) => {
                return Err(ControlError::WrongValueType {
                    control: self.name.clone(),
                    param: p.name.clone(),
                    expected: "index",
                })
            }
        }
        Ok(())
    }

    /// Check that `inst` assigns every declared parameter with an in-range value.
    pub fn check(&self, inst: &ControlInstantiation) -> Result<(), ControlError> {
        for key in inst.assignments.keys() {
            if self.param(key).is_none() {
                return Err(ControlError::UnknownParam { control: self.name.clone(), param: key.clone() });
            }
        }
        for p in &self.params {
            let v = inst.assignments.get(&p.name).ok_or_else(|| ControlError::MissingParam {
                control: self.name.clone(),
                param: p.name.clone(),
            })?;
            self.check_value(p, *v)?;
        }
        Ok(())
    }

    /// Instantiation with every parameter at its default.
    pub fn defaults(&self) -> ControlInstantiation {
        ControlInstantiation {
            control: self.name.clone(),
            assignments: self.params.iter().map(|p| (p.name.clone(), p.default)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInstantiation {
    pub control: String,
    pub assignments: BTreeMap<String, ParamValue>,
}

impl ControlInstantiation {
    pub fn new(control: &str) -> Self {
        Self { control: control.to_string(), assignments: BTreeMap::new() }
    }

    pub fn number(mut self, param: &str, value: f64) -> Self {
        self.assignments.insert(param.to_string(), ParamValue::Number(value));
        self
    }

    pub fn index(mut self, param: &str, index: usize) -> Self {
        self.assignments.insert(param.to_string(), ParamValue::Index(index));
        self
    }
}

/// Validated, typed view of an instantiation handed to control implementations.
pub struct Params<'a> {
    descriptor: &'a ControlDescriptor,
    inst: &'a ControlInstantiation,
}

impl<'a> Params<'a> {
    pub fn number(&self, name: &str) -> f64 {
        match self.inst.assignments.get(name) {
            Some(ParamValue::Number(x)) => *x,
            _ => panic!("control '{}' read undeclared number '{name}'", self.descriptor.name),
        }
    }

    pub fn index(&self, name: &str) -> usize {
        match self.inst.assignments.get(name) {
            Some(ParamValue::Index(i)) => *i,
            _ => panic!("control '{}' read undeclared choice '{name}'", self.descriptor.name),
        }
    }

    pub fn choice(&self, name: &str) -> &'a Literal {
        let i = self.index(name);
        match self.descriptor.param(name).map(|p| &p.domain) {
            Some(ParamDomain::Discrete { values }) => &values[i],
            _ => panic!("control '{}' read undeclared choice '{name}'", self.descriptor.name),
        }
    }

    pub fn control(&self) -> &str {
        &self.descriptor.name
    }
}

/// Scene-level transformation applied before rendering.
pub trait RenderedControl: Send + Sync {
    fn descriptor(&self) -> &ControlDescriptor;
    fn apply(&self, state: &SceneState, params: &Params<'_>) -> Result<SceneState, ControlError>;
}

/// Non-fatal condition reported by a post control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlWarning {
    pub control: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostOutput {
    pub image: RgbBuffer,
    pub warnings: Vec<ControlWarning>,
}

impl PostOutput {
    pub fn clean(image: RgbBuffer) -> Self {
        Self { image, warnings: Vec::new() }
    }
}

/// Image-level transformation applied after rendering.
pub trait PostControl: Send + Sync {
    fn descriptor(&self) -> &ControlDescriptor;
    /// Must produce an image of the same resolution, deterministic in
    /// `(image, params, seed)`.
    fn apply(&self, image: &RgbBuffer, params: &Params<'_>, seed: u64) -> Result<PostOutput, ControlError>;
}

#[derive(Clone)]
enum Entry {
    Rendered(Arc<dyn RenderedControl>),
    Post(Arc<dyn PostControl>),
}

impl Entry {
    fn descriptor(&self) -> &ControlDescriptor {
        match self {
            Entry::Rendered(c) => c.descriptor(),
            Entry::Post(c) => c.descriptor(),
        }
    }
}

/// Name-indexed control library. Built once, then shared read-only.
#[derive(Clone, Default)]
pub struct ControlRegistry {
    entries: BTreeMap<String, Entry>,
}

impl ControlRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every built-in control. `environments` and `textures` populate the
    /// value lists of the background and texture-swap controls.
    pub fn with_builtins(environments: &[String], textures: &[String]) -> Self {
        let mut reg = Self::new();
        let rendered: Vec<Arc<dyn RenderedControl>> = vec![
            Arc::new(Orientation::new()),
            Arc::new(CameraControl::new()),
            Arc::new(Position::new()),
            Arc::new(Scale::new()),
            Arc::new(Background::new(environments)),
            Arc::new(TextureSwap::new(textures)),
            Arc::new(TimeOfDay::new()),
            Arc::new(LiquidFill::new()),
        ];
        for c in rendered {
            reg.register_rendered(c).expect("built-in rendered controls are valid");
        }
        let post: Vec<Arc<dyn PostControl>> = vec![
            Arc::new(Occlusion::new()),
            Arc::new(GaussianNoise::new()),
            Arc::new(Brightness::new()),
            Arc::new(Blur::new()),
        ];
        for c in post {
            reg.register_post(c).expect("built-in post controls are valid");
        }
        reg
    }

    pub fn register_rendered(&mut self, control: Arc<dyn RenderedControl>) -> Result<(), ControlError> {
        self.insert(Entry::Rendered(control))
    }

    pub fn register_post(&mut self, control: Arc<dyn PostControl>) -> Result<(), ControlError> {
        self.insert(Entry::Post(control))
    }

    fn insert(&mut self, entry: Entry) -> Result<(), ControlError> {
        let d = entry.descriptor();
        d.validate()?;
        let name = d.name.clone();
        let expected = match &entry {
            Entry::Rendered(_) => ControlKind::Rendered,
            Entry::Post(_) => ControlKind::Post,
        };
        if d.kind != expected {
            return Err(ControlError::WrongKind { name, expected });
        }
        if self.entries.contains_key(&name) {
            return Err(ControlError::Duplicate(name));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn descriptor(&self, name: &str) -> Option<&ControlDescriptor> {
        self.entries.get(name).map(Entry::descriptor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn apply_rendered(&self, state: &SceneState, inst: &ControlInstantiation) -> Result<SceneState, ControlError> {
        let control = match self.entries.get(&inst.control) {
            Some(Entry::Rendered(c)) => c,
            Some(Entry::Post(_)) => {
                return Err(ControlError::WrongKind { name: inst.control.clone(), expected: ControlKind::Rendered })
            }
            None => return Err(ControlError::Unknown(inst.control.clone())),
        };
        let d = control.descriptor();
        d.check(inst)?;
        let next = control.apply(state, &Params { descriptor: d, inst })?;
        next.validate().map_err(|source| ControlError::Scene { control: d.name.clone(), source })?;
        Ok(next)
    }

    pub fn apply_post(&self, image: &RgbBuffer, inst: &ControlInstantiation, seed: u64) -> Result<PostOutput, ControlError> {
        let control = match self.entries.get(&inst.control) {
            Some(Entry::Post(c)) => c,
            Some(Entry::Rendered(_)) => {
                return Err(ControlError::WrongKind { name: inst.control.clone(), expected: ControlKind::Post })
            }
            None => return Err(ControlError::Unknown(inst.control.clone())),
        };
        let d = control.descriptor();
        d.check(inst)?;
        let out = control.apply(image, &Params { descriptor: d, inst }, seed)?;
        assert_eq!(
            (out.image.width(), out.image.height()),
            (image.width(), image.height()),
            "post control '{}' changed the image resolution",
            d.name
        );
        Ok(out)
    }

    /// Apply rendered controls in order. Errors carry the failing position.
    pub fn compose(&self, state: &SceneState, chain: &[ControlInstantiation]) -> Result<SceneState, ControlError> {
        let mut current = state.clone();
        for (index, inst) in chain.iter().enumerate() {
            current = self
                .apply_rendered(&current, inst)
                .map_err(|e| ControlError::AtIndex { index, source: Box::new(e) })?;
        }
        Ok(current)
    }

    /// Apply post controls in order; control `i` is seeded from
    /// `(experiment_seed, configuration_id, i)`.
    pub fn apply_post_chain(
        &self,
        image: RgbBuffer,
        chain: &[ControlInstantiation],
        experiment_seed: u64,
        configuration_id: u64,
    ) -> Result<PostOutput, ControlError> {
        let mut out = PostOutput::clean(image);
        for (index, inst) in chain.iter().enumerate() {
            let seed = post_seed(experiment_seed, configuration_id, index);
            let step = self
                .apply_post(&out.image, inst, seed)
                .map_err(|e| ControlError::AtIndex { index, source: Box::new(e) })?;
            out.image = step.image;
            out.warnings.extend(step.warnings);
        }
        Ok(out)
    }
}

pub fn post_seed(experiment_seed: u64, configuration_id: u64, control_index: usize) -> u64 {
    derive_seed(&[experiment_seed, configuration_id, control_index as u64])
}

#[cfg(test)]
mod tests;
