//! Aggregations over a finished (or running) experiment log.
//!
//! Everything here is a pure function of `results.jsonl`, the manifest and,
//! for UV heatmaps, the saved buffers.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::Literal;
use crate::orchestrator::log::{read_log, LogRecord, RunManifest, RESULTS_FILE};

pub mod complexity;
pub mod heatmap;
pub mod reports;
pub mod stats;
pub mod tables;

pub use complexity::{background_complexity, EdgeFilter};
pub use heatmap::{uv_heatmap, HeatmapGrid, DEFAULT_GRID};
pub use reports::{run_report, Report, ReportOptions, REPORT_NAMES, REPORT_SCHEMA};
pub use stats::{agreement, agreement_table, boxplot, AgreementReport, AgreementStats, BoxplotSummary, OutlierRule};
pub use tables::{
    accuracy_by, liquid_simplex_summary, matrix_by_two_params, prediction_consistency, texture_shape_alignment,
    AccuracyMatrix, AccuracyRow, AccuracyTable, ConsistencyReport, MatrixCell, SimplexSummary, TextureReport,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0} needs at least one value")]
    Empty(&'static str),
    #[error("unknown key '{key}'; available: {available}")]
    UnknownKey { key: String, available: String },
    #[error("no {modality} buffers were saved for this run; rerun with `save_buffers: [{modality}]` in the output section of the config")]
    MissingBuffers { modality: &'static str },
    #[error("ids present on only one side: sim-only {sim_only:?}, real-only {real_only:?}")]
    Unmatched { sim_only: Vec<u64>, real_only: Vec<u64> },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown report '{name}'; available: {available}")]
    UnknownReport { name: String, available: String },
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io { path: path.display().to_string(), source }
}

/// A run directory loaded into memory.
#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub records: Vec<LogRecord>,
    /// The log ended in a partial line, which was skipped.
    pub truncated_tail: bool,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self, AnalysisError> {
        let manifest = RunManifest::load(dir).map_err(io_error(&dir.join(crate::orchestrator::log::MANIFEST_FILE)))?;
        let path = dir.join(RESULTS_FILE);
        let log = read_log(&path).map_err(io_error(&path))?;
        Ok(Self { dir: dir.to_path_buf(), manifest, records: log.records, truncated_tail: log.truncated_tail })
    }

    /// Every `control.param` key that appears in the log, plus `mesh` and
    /// `environment`.
    pub fn keys(&self) -> Vec<String> {
        available_keys(&self.records)
    }
}

pub fn available_keys(records: &[LogRecord]) -> Vec<String> {
    let mut keys = vec!["mesh".to_string(), "environment".to_string()];
    let mut params: Vec<String> = Vec::new();
    for r in records {
        for k in r.params.keys() {
            if !params.contains(k) {
                params.push(k.clone());
            }
        }
    }
    params.sort();
    keys.extend(params);
    keys
}

/// A value along one grouping axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Text(String),
    /// Half-open `[lo, hi)`; the last configured bin is closed. A missing
    /// bound means the bin is unbounded on that side.
    Bin { lo: Option<f64>, hi: Option<f64> },
}

impl AxisValue {
    fn rank(&self) -> u8 {
        match self {
            AxisValue::Number(_) => 0,
            AxisValue::Bin { .. } => 1,
            AxisValue::Text(_) => 2,
        }
    }

    pub fn from_literal(l: &Literal) -> Self {
        match l {
            Literal::Int(i) => AxisValue::Number(*i as f64),
            Literal::Float(x) => AxisValue::Number(*x),
            Literal::Text(s) => AxisValue::Text(s.clone()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AxisValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            AxisValue::Number(x) => format!("{x}"),
            AxisValue::Text(s) => s.clone(),
            AxisValue::Bin { lo, hi } => {
                let lo = lo.map_or("-inf".to_string(), |v| format!("{v}"));
                let hi = hi.map_or("inf".to_string(), |v| format!("{v}"));
                format!("[{lo}, {hi})")
            }
        }
    }
}

impl Eq for AxisValue {}

impl Ord for AxisValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (AxisValue::Number(a), AxisValue::Number(b)) => a.total_cmp(b),
            (AxisValue::Text(a), AxisValue::Text(b)) => a.cmp(b),
            (AxisValue::Bin { lo: a, hi: ah }, AxisValue::Bin { lo: b, hi: bh }) => {
                let key = |v: &Option<f64>, none: f64| v.unwrap_or(none);
                key(a, f64::NEG_INFINITY)
                    .total_cmp(&key(b, f64::NEG_INFINITY))
                    .then(key(ah, f64::INFINITY).total_cmp(&key(bh, f64::INFINITY)))
            }
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for AxisValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// What to group records by.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupKey {
    Mesh,
    Environment,
    /// A `control.param` key, optionally binned by ascending edges.
    Param { key: String, bins: Option<Vec<f64>> },
}

impl GroupKey {
    /// Parse `mesh`, `environment` or a `control.param` key, attaching bin
    /// edges configured for that key.
    pub fn parse(name: &str, bins: &BTreeMap<String, Vec<f64>>, available: &[String]) -> Result<Self, AnalysisError> {
        let name = name.trim();
        match name {
            "mesh" => Ok(GroupKey::Mesh),
            "environment" => Ok(GroupKey::Environment),
            key if available.iter().any(|k| k == key) => {
                let edges = bins.get(key).cloned();
                if let Some(e) = &edges {
                    if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(AnalysisError::Invalid(format!(
                            "bin edges for {key} must be at least two strictly increasing numbers"
                        )));
                    }
                }
                Ok(GroupKey::Param { key: key.to_string(), bins: edges })
            }
            key => Err(AnalysisError::UnknownKey { key: key.to_string(), available: available.join(", ") }),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            GroupKey::Mesh => "mesh",
            GroupKey::Environment => "environment",
            GroupKey::Param { key, .. } => key,
        }
    }

    /// This record's value along the key; `None` when the record lacks the
    /// parameter.
    pub fn value(&self, r: &LogRecord) -> Option<AxisValue> {
        match self {
            GroupKey::Mesh => Some(AxisValue::Text(r.mesh.clone())),
            GroupKey::Environment => Some(AxisValue::Text(r.environment.clone())),
            GroupKey::Param { key, bins } => {
                let v = AxisValue::from_literal(r.params.get(key)?);
                match (bins, v.as_f64()) {
                    (Some(edges), Some(x)) => Some(bin_of(edges, x)),
                    _ => Some(v),
                }
            }
        }
    }
}

fn bin_of(edges: &[f64], x: f64) -> AxisValue {
    let n = edges.len();
    if x < edges[0] {
        return AxisValue::Bin { lo: None, hi: Some(edges[0]) };
    }
    if x > edges[n - 1] {
        return AxisValue::Bin { lo: Some(edges[n - 1]), hi: None };
    }
    // Last bin is closed on the right.
    let i = edges[..n - 1].iter().rposition(|&e| e <= x).expect("x >= edges[0]").min(n - 2);
    AxisValue::Bin { lo: Some(edges[i]), hi: Some(edges[i + 1]) }
}

/// Keep records whose value along `key` equals `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFilter {
    pub key: GroupKey,
    pub value: AxisValue,
}

impl RecordFilter {
    pub fn matches(&self, r: &LogRecord) -> bool {
        self.key.value(r).as_ref() == Some(&self.value)
    }
}

/// Graded records: completed with a correctness verdict.
pub(crate) fn graded(records: &[LogRecord]) -> impl Iterator<Item = (&LogRecord, bool)> {
    records.iter().filter_map(|r| r.is_correct.map(|c| (r, c)))
}

#[cfg(test)]
pub(crate) mod fixtures;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binning_uses_half_open_intervals_with_closed_last_bin() {
        let e = [0.0, 1.0, 2.0];
        assert_eq!(bin_of(&e, 0.0), AxisValue::Bin { lo: Some(0.0), hi: Some(1.0) });
        assert_eq!(bin_of(&e, 1.0), AxisValue::Bin { lo: Some(1.0), hi: Some(2.0) });
        assert_eq!(bin_of(&e, 2.0), AxisValue::Bin { lo: Some(1.0), hi: Some(2.0) });
        assert_eq!(bin_of(&e, -0.1), AxisValue::Bin { lo: None, hi: Some(0.0) });
        assert_eq!(bin_of(&e, 2.5), AxisValue::Bin { lo: Some(2.0), hi: None });
    }

    #[test]
    fn axis_values_sort_numbers_before_text() {
        let mut v = vec![
            AxisValue::Text("b".into()),
            AxisValue::Number(2.0),
            AxisValue::Text("a".into()),
            AxisValue::Number(-1.0),
        ];
        v.sort();
        assert_eq!(v.iter().map(AxisValue::label).collect::<Vec<_>>(), ["-1", "2", "a", "b"]);
    }

    #[test]
    fn unknown_key_lists_the_available_ones() {
        let err = GroupKey::parse("camera.zom", &BTreeMap::new(), &["mesh".into(), "camera.zoom".into()]).unwrap_err();
        assert!(err.to_string().contains("camera.zoom"), "{err}");
        let bad_bins = BTreeMap::from([("camera.zoom".to_string(), vec![1.0, 1.0])]);
        assert!(GroupKey::parse("camera.zoom", &bad_bins, &["camera.zoom".into()]).is_err());
    }
}
