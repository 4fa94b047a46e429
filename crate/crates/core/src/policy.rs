//! Search spaces over control parameters and the policies that walk them.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::{ControlDescriptor, Literal, ParamDomain};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("duplicate search dimension '{0}.{1}'")]
    DuplicateDimension(String, String),
    #[error("invalid dimension '{name}': {reason}")]
    InvalidDimension { name: String, reason: String },
    #[error("grid count for '{0}' must be at least 1")]
    ZeroCount(String),
    #[error("grid has {total} points, over the budget of {budget}")]
    Budget { total: u128, budget: u64 },
    #[error("count given for unknown dimension '{0}'")]
    UnknownCount(String),
    #[error("policy issued configuration id {0} twice")]
    DuplicateId(u64),
    #[error("proposal {id}: {reason}")]
    BadProposal { id: u64, reason: String },
    #[error("unknown policy '{name}'; available: {available}")]
    UnknownPolicy { name: String, available: String },
    #[error("policy '{policy}': {reason}")]
    Config { policy: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionKind {
    Continuous { lo: f64, hi: f64 },
    Discrete { values: Vec<Literal> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub control: String,
    pub param: String,
    #[serde(flatten)]
    pub kind: DimensionKind,
}

impl Dimension {
    /// `control.param`, the key used in logs, configs and queries.
    pub fn key(&self) -> String {
        format!("{}.{}", self.control, self.param)
    }

    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            DimensionKind::Continuous { .. } => None,
            DimensionKind::Discrete { values } => Some(values.len()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

/// Build a space from descriptors: one dimension per parameter, in
/// declaration order.
pub fn build_space(descriptors: &[ControlDescriptor]) -> Result<SearchSpace, PolicyError> {
    let mut seen = HashSet::new();
    let mut dimensions = Vec::new();
    for d in descriptors {
        for p in &d.params {
            if !seen.insert((d.name.clone(), p.name.clone())) {
                return Err(PolicyError::DuplicateDimension(d.name.clone(), p.name.clone()));
            }
            let kind = match &p.domain {
                ParamDomain::Continuous { min, max } => DimensionKind::Continuous { lo: *min, hi: *max },
                ParamDomain::Discrete { values } => DimensionKind::Discrete { values: values.clone() },
            };
            dimensions.push(Dimension { control: d.name.clone(), param: p.name.clone(), kind });
        }
    }
    let space = SearchSpace { dimensions };
    space.validate()?;
    Ok(space)
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let mut seen = HashSet::new();
        for d in &self.dimensions {
            if !seen.insert((d.control.as_str(), d.param.as_str())) {
                return Err(PolicyError::DuplicateDimension(d.control.clone(), d.param.clone()));
            }
            let bad = |reason: &str| PolicyError::InvalidDimension { name: d.key(), reason: reason.into() };
            match &d.kind {
                DimensionKind::Continuous { lo, hi } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(bad("needs finite lo < hi"));
                    }
                }
                DimensionKind::Discrete { values } => {
                    if values.is_empty() {
                        return Err(bad("needs at least one value"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dimensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions.is_empty()
    }

    /// Product of the discrete cardinalities (1 for a space with none).
    pub fn discrete_cardinality(&self) -> u128 {
        self.dimensions.iter().filter_map(Dimension::cardinality).map(|n| n as u128).product()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.key() == key)
    }

    /// Check that `point` has one in-range value of the right type per dimension.
    pub fn check_point(&self, point: &[RawValue]) -> Result<(), String> {
        if point.len() != self.dimensions.len() {
            return Err(format!("point has {} values for {} dimensions", point.len(), self.dimensions.len()));
        }
        for (d, v) in self.dimensions.iter().zip(point) {
            match (&d.kind, v) {
                (DimensionKind::Continuous { lo, hi }, RawValue::Float(x)) if x >= lo && x <= hi => {}
                (DimensionKind::Discrete { values }, RawValue::Index(i)) if *i < values.len() => {}
                _ => return Err(format!("value {v:?} invalid for dimension '{}'", d.key())),
            }
        }
        Ok(())
    }
}

/// One coordinate of a proposal: a float for continuous dimensions, an index
/// into the value list for discrete ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Index(usize),
    Float(f64),
}

impl RawValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            RawValue::Index(i) => *i as f64,
            RawValue::Float(x) => *x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProposal {
    pub id: u64,
    pub point: Vec<RawValue>,
}

/// Feedback about one evaluated proposal. `is_correct` is `None` for errored
/// or not-applicable configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub id: u64,
    pub is_correct: Option<bool>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub proposal: PolicyProposal,
    pub summary: ResultSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Batch(Vec<PolicyProposal>),
    Done,
}

/// Stateful proposal iterator. One instance serves one (environment, mesh) pair.
pub trait Policy: Send {
    fn next_batch(&mut self, history: &[HistoryEntry]) -> Result<Step, PolicyError>;

    /// Number of proposals the policy will issue, when known up front.
    fn total(&self) -> Option<u64> {
        None
    }

    /// Open-loop policies never read history, so the orchestrator may request
    /// the next batch before earlier results arrive. Feedback policies are
    /// asked only once every issued proposal has been resolved.
    fn is_open_loop(&self) -> bool {
        false
    }
}

/// Evenly spaced grid values for a continuous dimension (both endpoints
/// included; a single point sits at the midpoint).
pub fn grid_values(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.5 * lo + 0.5 * hi],
        k => (0..k)
            .map(|i| {
                let t = i as f64 / (k - 1) as f64;
                (lo * (1.0 - t) + hi * t).clamp(lo, hi)
            })
            .collect(),
    }
}

/// Cartesian-product enumeration, lexicographic with the last dimension
/// varying fastest.
pub struct GridPolicy {
    axes: Vec<Vec<RawValue>>,
    total: u64,
    next: u64,
    batch_size: usize,
}

impl GridPolicy {
    /// `counts` gives the number of grid points per continuous dimension,
    /// in dimension order (discrete dimensions are skipped).
    pub fn new(space: &SearchSpace, counts: &[usize], batch_size: usize, budget: Option<u64>) -> Result<Self, PolicyError> {
        space.validate()?;
        let continuous: Vec<&Dimension> =
            space.dimensions.iter().filter(|d| matches!(d.kind, DimensionKind::Continuous { .. })).collect();
        if counts.len() != continuous.len() {
            return Err(PolicyError::Config {
                policy: "grid".into(),
                reason: format!("{} counts for {} continuous dimensions", counts.len(), continuous.len()),
            });
        }
        let mut counts = counts.iter();
        let mut axes = Vec::with_capacity(space.len());
        for d in &space.dimensions {
            match &d.kind {
                DimensionKind::Continuous { lo, hi } => {
                    let k = *counts.next().expect("length checked above");
                    if k == 0 {
                        return Err(PolicyError::ZeroCount(d.key()));
                    }
                    axes.push(grid_values(*lo, *hi, k).into_iter().map(RawValue::Float).collect());
                }
                DimensionKind::Discrete { values } => axes.push((0..values.len()).map(RawValue::Index).collect()),
            }
        }
        let total: u128 = axes.iter().map(|a: &Vec<RawValue>| a.len() as u128).product();
        let limit = budget.unwrap_or(u64::MAX);
        if total > limit as u128 {
            return Err(PolicyError::Budget { total, budget: limit });
        }
        Ok(Self { axes, total: total as u64, next: 0, batch_size: batch_size.max(1) })
    }

    /// Counts keyed by `control.param`; continuous dimensions without an
    /// entry use `default_count`.
    pub fn from_named_counts(
        space: &SearchSpace,
        named: &BTreeMap<String, usize>,
        default_count: usize,
        batch_size: usize,
        budget: Option<u64>,
    ) -> Result<Self, PolicyError> {
        for key in named.keys() {
            match space.index_of(key) {
                Some(i) if matches!(space.dimensions[i].kind, DimensionKind::Continuous { .. }) => {}
                _ => return Err(PolicyError::UnknownCount(key.clone())),
            }
        }
        let counts: Vec<usize> = space
            .dimensions
            .iter()
            .filter(|d| matches!(d.kind, DimensionKind::Continuous { .. }))
            .map(|d| named.get(&d.key()).copied().unwrap_or(default_count))
            .collect();
        Self::new(space, &counts, batch_size, budget)
    }

    fn point(&self, mut index: u64) -> Vec<RawValue> {
        let mut point = vec![RawValue::Index(0); self.axes.len()];
        for (slot, axis) in point.iter_mut().zip(&self.axes).rev() {
            let n = axis.len() as u64;
            *slot = axis[(index % n) as usize];
            index /= n;
        }
        point
    }
}

impl Policy for GridPolicy {
    fn next_batch(&mut self, _history: &[HistoryEntry]) -> Result<Step, PolicyError> {
        if self.next >= self.total {
            return Ok(Step::Done);
        }
        let end = (self.next + self.batch_size as u64).min(self.total);
        let batch = (self.next..end).map(|id| PolicyProposal { id, point: self.point(id) }).collect();
        self.next = end;
        Ok(Step::Batch(batch))
    }

    fn total(&self) -> Option<u64> {
        Some(self.total)
    }

    fn is_open_loop(&self) -> bool {
        true
    }
}

/// Independent uniform samples: continuous dimensions uniform on `[lo, hi]`,
/// discrete dimensions uniform over indices.
pub struct RandomPolicy {
    space: SearchSpace,
    rng: ChaCha8Rng,
    samples: u64,
    next: u64,
    batch_size: usize,
}

impl RandomPolicy {
    pub fn new(space: &SearchSpace, samples: u64, seed: u64, batch_size: usize) -> Result<Self, PolicyError> {
        space.validate()?;
        Ok(Self {
            space: space.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            samples,
            next: 0,
            batch_size: batch_size.max(1),
        })
    }

    fn sample(&mut self) -> Vec<RawValue> {
        let rng = &mut self.rng;
        self.space
            .dimensions
            .iter()
            .map(|d| match &d.kind {
                DimensionKind::Continuous { lo, hi } => RawValue::Float(rng.random_range(*lo..=*hi)),
                DimensionKind::Discrete { values } => RawValue::Index(rng.random_range(0..values.len())),
            })
            .collect()
    }
}

impl Policy for RandomPolicy {
    fn next_batch(&mut self, _history: &[HistoryEntry]) -> Result<Step, PolicyError> {
        if self.next >= self.samples {
            return Ok(Step::Done);
        }
        let end = (self.next + self.batch_size as u64).min(self.samples);
        let mut batch = Vec::with_capacity((end - self.next) as usize);
        for id in self.next..end {
            batch.push(PolicyProposal { id, point: self.sample() });
        }
        self.next = end;
        Ok(Step::Batch(batch))
    }

    fn total(&self) -> Option<u64> {
        Some(self.samples)
    }

    fn is_open_loop(&self) -> bool {
        true
    }
}

/// Policy selection and parameters as written in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub name: String,
    /// Grid points per continuous dimension, keyed by `control.param`.
    #[serde(default)]
    pub counts: BTreeMap<String, usize>,
    #[serde(default = "default_count")]
    pub default_count: usize,
    /// Number of samples for sampling policies.
    #[serde(default)]
    pub samples: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Upper bound on proposals per policy instance.
    #[serde(default)]
    pub budget: Option<u64>,
}

fn default_count() -> usize {
    3
}

fn default_batch_size() -> usize {
    16
}

impl PolicyConfig {
    pub fn grid() -> Self {
        Self {
            name: "grid".into(),
            counts: BTreeMap::new(),
            default_count: default_count(),
            samples: 0,
            batch_size: default_batch_size(),
            budget: None,
        }
    }
}

pub type PolicyFactory =
    Arc<dyn Fn(&SearchSpace, &PolicyConfig, u64) -> Result<Box<dyn Policy>, PolicyError> + Send + Sync>;

/// Name-indexed policy constructors. Each call produces a fresh instance
/// seeded for one (environment, mesh) pair.
#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut reg = Self { factories: BTreeMap::new() };
        reg.register(
            "grid",
            Arc::new(|space: &SearchSpace, cfg: &PolicyConfig, _seed: u64| {
                let p = GridPolicy::from_named_counts(space, &cfg.counts, cfg.default_count, cfg.batch_size, cfg.budget)?;
                Ok(Box::new(p) as Box<dyn Policy>)
            }),
        );
        reg.register(
            "random",
            Arc::new(|space: &SearchSpace, cfg: &PolicyConfig, seed: u64| {
                if let Some(budget) = cfg.budget {
                    if cfg.samples > budget {
                        return Err(PolicyError::Budget { total: cfg.samples as u128, budget });
                    }
                }
                Ok(Box::new(RandomPolicy::new(space, cfg.samples, seed, cfg.batch_size)?) as Box<dyn Policy>)
            }),
        );
        reg
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn create(&self, space: &SearchSpace, cfg: &PolicyConfig, seed: u64) -> Result<Box<dyn Policy>, PolicyError> {
        let factory = self.factories.get(&cfg.name).ok_or_else(|| PolicyError::UnknownPolicy {
            name: cfg.name.clone(),
            available: self.factories.keys().cloned().collect::<Vec<_>>().join(", "),
        })?;
        factory(space, cfg, seed)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

/// Enforces the proposal contract on a policy's output: unique ids and
/// in-range points.
#[derive(Debug, Default)]
pub struct ProposalGuard {
    issued: HashSet<u64>,
}

impl ProposalGuard {
    pub fn check(&mut self, space: &SearchSpace, batch: &[PolicyProposal]) -> Result<(), PolicyError> {
        for p in batch {
            space.check_point(&p.point).map_err(|reason| PolicyError::BadProposal { id: p.id, reason })?;
            if !self.issued.insert(p.id) {
                return Err(PolicyError::DuplicateId(p.id));
            }
        }
        Ok(())
    }

    pub fn issued(&self) -> usize {
        self.issued.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::{ControlKind, ParamDecl};

    fn cont(control: &str, param: &str, lo: f64, hi: f64) -> Dimension {
        Dimension { control: control.into(), param: param.into(), kind: DimensionKind::Continuous { lo, hi } }
    }

    fn disc(control: &str, param: &str, n: usize) -> Dimension {
        Dimension {
            control: control.into(),
            param: param.into(),
            kind: DimensionKind::Discrete { values: (0..n as i64).map(Literal::Int).collect() },
        }
    }

    fn drain(p: &mut dyn Policy) -> Vec<PolicyProposal> {
        let mut out = Vec::new();
        while let Step::Batch(b) = p.next_batch(&[]).unwrap() {
            out.extend(b);
        }
        out
    }

    fn floats(p: &PolicyProposal) -> Vec<f64> {
        p.point.iter().map(RawValue::as_f64).collect()
    }

    #[test]
    fn build_space_counts_dimensions() {
        let orientation = ControlDescriptor::new("orientation", ControlKind::Rendered, vec![ParamDecl::continuous("yaw", -1.0, 1.0, 0.0)]);
        let envs = (0..3).map(|i| Literal::Text(format!("e{i}"))).collect();
        let background = ControlDescriptor::new("background", ControlKind::Rendered, vec![ParamDecl::discrete("environment", envs, 0)]);
        let space = build_space(&[orientation.clone(), background]).unwrap();
        assert_eq!(space.len(), 2);
        assert!(matches!(
            build_space(&[orientation.clone(), orientation]),
            Err(PolicyError::DuplicateDimension(..))
        ));
    }

    #[test]
    fn empty_space_has_one_grid_point() {
        let space = build_space(&[]).unwrap();
        assert_eq!(space.discrete_cardinality(), 1);
        let all = drain(&mut GridPolicy::new(&space, &[], 4, None).unwrap());
        assert_eq!(all, vec![PolicyProposal { id: 0, point: vec![] }]);
    }

    #[test]
    fn texture_by_environment_cardinality() {
        let space = SearchSpace { dimensions: vec![disc("texture_swap", "texture", 8), disc("background", "environment", 408)] };
        assert_eq!(space.discrete_cardinality(), 3264);
        assert_eq!(GridPolicy::new(&space, &[], 100, None).unwrap().total(), Some(3264));
    }

    #[test]
    fn grid_spacing() {
        assert_eq!(grid_values(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(grid_values(0.4, 2.0, 1), vec![1.2]);
        let v = grid_values(0.1, 0.3, 7);
        assert_eq!((v[0], v[6]), (0.1, 0.3));
    }

    #[test]
    fn grid_order_last_dimension_fastest() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0), cont("b", "y", 0.0, 1.0)] };
        let all = drain(&mut GridPolicy::new(&space, &[2, 2], 3, None).unwrap());
        let pts: Vec<_> = all.iter().map(floats).collect();
        assert_eq!(pts, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(all.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0), disc("b", "y", 2)] };
        assert_eq!(drain(&mut GridPolicy::new(&space, &[3], 4, None).unwrap()).len(), 6);
    }

    #[test]
    fn grid_budget_and_count_errors() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0), disc("b", "y", 10)] };
        assert!(matches!(GridPolicy::new(&space, &[10], 1, Some(99)), Err(PolicyError::Budget { total: 100, .. })));
        assert!(GridPolicy::new(&space, &[10], 1, Some(100)).is_ok());
        assert!(matches!(GridPolicy::new(&space, &[0], 1, None), Err(PolicyError::ZeroCount(_))));
        let named = BTreeMap::from([("b.y".to_string(), 2)]);
        assert!(matches!(
            GridPolicy::from_named_counts(&space, &named, 3, 1, None),
            Err(PolicyError::UnknownCount(_))
        ));
    }

    #[test]
    fn grid_ignores_history_and_finishes() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0)] };
        let mut a = GridPolicy::new(&space, &[5], 2, None).unwrap();
        let mut b = GridPolicy::new(&space, &[5], 2, None).unwrap();
        let fake = HistoryEntry {
            proposal: PolicyProposal { id: 0, point: vec![RawValue::Float(0.0)] },
            summary: ResultSummary { id: 0, is_correct: Some(false), score: None },
        };
        loop {
            let x = a.next_batch(&[]).unwrap();
            let y = b.next_batch(&[fake.clone()]).unwrap();
            assert_eq!(x, y);
            if x == Step::Done {
                break;
            }
        }
        assert_eq!(a.next_batch(&[]).unwrap(), Step::Done);
    }

    #[test]
    fn random_policy_contract() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0), disc("b", "y", 3)] };
        assert!(drain(&mut RandomPolicy::new(&space, 0, 1, 8).unwrap()).is_empty());
        let a = drain(&mut RandomPolicy::new(&space, 50, 9, 8).unwrap());
        let b = drain(&mut RandomPolicy::new(&space, 50, 9, 8).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.iter().map(|p| p.id).collect::<Vec<_>>(), (0..50).collect::<Vec<_>>());
        for p in &a {
            space.check_point(&p.point).unwrap();
        }
    }

    #[test]
    fn random_policy_mean() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0)] };
        let all = drain(&mut RandomPolicy::new(&space, 10_000, 2024, 1000).unwrap());
        let mean = all.iter().map(|p| p.point[0].as_f64()).sum::<f64>() / all.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn raw_values_round_trip_through_json() {
        let p = PolicyProposal { id: 3, point: vec![RawValue::Float(1.0), RawValue::Index(1), RawValue::Float(0.25)] };
        let back: PolicyProposal = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    /// Feedback policy used to exercise the history channel: proposes batches
    /// until the observed accuracy exceeds a threshold.
    struct ThresholdPolicy {
        inner: GridPolicy,
        threshold: f64,
    }

    impl Policy for ThresholdPolicy {
        fn next_batch(&mut self, history: &[HistoryEntry]) -> Result<Step, PolicyError> {
            let judged: Vec<bool> = history.iter().filter_map(|h| h.summary.is_correct).collect();
            if !judged.is_empty() {
                let acc = judged.iter().filter(|c| **c).count() as f64 / judged.len() as f64;
                if acc > self.threshold {
                    return Ok(Step::Done);
                }
            }
            self.inner.next_batch(history)
        }
    }

    #[test]
    fn threshold_policy_stops_after_first_batch_when_all_correct() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0)] };
        let mut p = ThresholdPolicy { inner: GridPolicy::new(&space, &[20], 5, None).unwrap(), threshold: 0.9 };
        assert!(!p.is_open_loop());
        let mut history = Vec::new();
        let mut batches = 0;
        while let Step::Batch(b) = p.next_batch(&history).unwrap() {
            batches += 1;
            for proposal in b {
                let summary = ResultSummary { id: proposal.id, is_correct: Some(true), score: Some(1.0) };
                history.push(HistoryEntry { proposal, summary });
            }
        }
        assert_eq!(batches, 1);
        assert_eq!(history.len(), 5);
    }

    #[test]
    fn guard_rejects_duplicates_and_bad_points() {
        let space = SearchSpace { dimensions: vec![cont("a", "x", 0.0, 1.0)] };
        let mut guard = ProposalGuard::default();
        let ok = PolicyProposal { id: 1, point: vec![RawValue::Float(0.5)] };
        guard.check(&space, &[ok.clone()]).unwrap();
        assert_eq!(guard.check(&space, &[ok]), Err(PolicyError::DuplicateId(1)));
        let bad = PolicyProposal { id: 2, point: vec![RawValue::Float(1.5)] };
        assert!(matches!(guard.check(&space, &[bad]), Err(PolicyError::BadProposal { id: 2, .. })));
    }

    #[test]
    fn registry_lists_names_on_unknown_policy() {
        let reg = PolicyRegistry::default();
        let cfg = PolicyConfig { name: "bayes".into(), ..PolicyConfig::grid() };
        match reg.create(&SearchSpace::default(), &cfg, 0) {
            Err(PolicyError::UnknownPolicy { available, .. }) => assert_eq!(available, "grid, random"),
            other => panic!("{:?}", other.err()),
        }
    }

    proptest::proptest! {
        #[test]
        fn grid_count_matches_product(counts in proptest::collection::vec(1usize..4, 0..4), cards in proptest::collection::vec(1usize..4, 0..3)) {
            let mut dims: Vec<Dimension> = counts.iter().enumerate().map(|(i, _)| cont("c", &format!("x{i}"), -1.0, 1.0)).collect();
            dims.extend(cards.iter().enumerate().map(|(i, n)| disc("d", &format!("y{i}"), *n)));
            let space = SearchSpace { dimensions: dims };
            let all = drain(&mut GridPolicy::new(&space, &counts, 7, None).unwrap());
            let expected: usize = counts.iter().product::<usize>() * cards.iter().product::<usize>();
            proptest::prop_assert_eq!(all.len(), expected);
            for p in &all {
                proptest::prop_assert!(space.check_point(&p.point).is_ok());
            }
        }
    }
}
