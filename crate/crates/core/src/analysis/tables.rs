use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{graded, AxisValue, GroupKey, RecordFilter};
use crate::controls::Literal;
use crate::orchestrator::log::LogRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub group: Vec<AxisValue>,
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub keys: Vec<String>,
    pub rows: Vec<AccuracyRow>,
    /// Records left out: errored, not applicable, or missing a key.
    pub excluded: usize,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl AccuracyTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.keys.iter().map(|k| csv_field(k)).collect::<Vec<_>>().join(",");
        out += ",n,correct,accuracy\n";
        for r in &self.rows {
            for v in &r.group {
                out += &csv_field(&v.label());
                out.push(',');
            }
            out += &format!("{},{},{}\n", r.n, r.correct, r.accuracy);
        }
        out
    }
}

/// Accuracy per distinct combination of key values. Every graded record
/// with all keys present lands in exactly one row.
pub fn accuracy_by(records: &[LogRecord], keys: &[GroupKey]) -> AccuracyTable {
    let mut groups: BTreeMap<Vec<AxisValue>, (u64, u64)> = BTreeMap::new();
    let mut excluded = records.len();
    for (r, ok) in graded(records) {
        let Some(group) = keys.iter().map(|k| k.value(r)).collect::<Option<Vec<_>>>() else { continue };
        let e = groups.entry(group).or_default();
        e.0 += 1;
        e.1 += ok as u64;
        excluded -= 1;
    }
    AccuracyTable {
        keys: keys.iter().map(|k| k.name().to_string()).collect(),
        rows: groups
            .into_iter()
            .map(|(group, (n, correct))| AccuracyRow { group, n, correct, accuracy: correct as f64 / n as f64 })
            .collect(),
        excluded,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub n: u64,
    pub correct: u64,
    /// `None` for empty cells.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub x_key: String,
    pub y_key: String,
    pub x_values: Vec<AxisValue>,
    pub y_values: Vec<AxisValue>,
    /// `cells[y][x]`.
    pub cells: Vec<Vec<MatrixCell>>,
    pub excluded: usize,
}

impl AccuracyMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},n,correct,accuracy\n", csv_field(&self.y_key), csv_field(&self.x_key));
        for (yi, y) in self.y_values.iter().enumerate() {
            for (xi, x) in self.x_values.iter().enumerate() {
                let c = self.cells[yi][xi];
                out += &format!(
                    "{},{},{},{},{}\n",
                    csv_field(&y.label()),
                    csv_field(&x.label()),
                    c.n,
                    c.correct,
                    fmt_opt(c.accuracy)
                );
            }
        }
        out
    }
}

/// Accuracy over two axes. Axis values come from every graded record so
/// that filtering leaves empty cells in place instead of dropping them.
pub fn matrix_by_two_params(
    records: &[LogRecord],
    x: &GroupKey,
    y: &GroupKey,
    filters: &[RecordFilter],
) -> AccuracyMatrix {
    let mut xs = BTreeSet::new();
    let mut ys = BTreeSet::new();
    for (r, _) in graded(records) {
        if let (Some(a), Some(b)) = (x.value(r), y.value(r)) {
            xs.insert(a);
            ys.insert(b);
        }
    }
    let x_values: Vec<AxisValue> = xs.into_iter().collect();
    let y_values: Vec<AxisValue> = ys.into_iter().collect();
    let mut cells = vec![vec![MatrixCell { n: 0, correct: 0, accuracy: None }; x_values.len()]; y_values.len()];
    let mut excluded = records.len();
    for (r, ok) in graded(records) {
        if !filters.iter().all(|f| f.matches(r)) {
            continue;
        }
        let (Some(a), Some(b)) = (x.value(r), y.value(r)) else { continue };
        let xi = x_values.binary_search(&a).expect("value collected above");
        let yi = y_values.binary_search(&b).expect("value collected above");
        let c = &mut cells[yi][xi];
        c.n += 1;
        c.correct += ok as u64;
        excluded -= 1;
    }
    for c in cells.iter_mut().flatten() {
        c.accuracy = (c.n > 0).then(|| c.correct as f64 / c.n as f64);
    }
    AccuracyMatrix { x_key: x.name().into(), y_key: y.name().into(), x_values, y_values, cells, excluded }
}

fn label(r: &LogRecord) -> Option<&str> {
    r.prediction.as_ref()?.top1_label.as_deref()
}

/// Mesh, environment and every parameter not in `skip`, as a comparable key.
fn viewpoint(r: &LogRecord, skip: &[String]) -> String {
    let rest: BTreeMap<&String, &Literal> = r.params.iter().filter(|(k, _)| !skip.contains(k)).collect();
    format!("{}\u{1f}{}\u{1f}{}", r.mesh, r.environment, serde_json::to_string(&rest).expect("params serialize"))
}

fn sweep_value(r: &LogRecord, sweep: &[String]) -> String {
    let v: Vec<Option<&Literal>> = sweep.iter().map(|k| r.params.get(k)).collect();
    serde_json::to_string(&v).expect("params serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub sweep: Vec<String>,
    /// Viewpoints seen at two or more sweep values.
    pub viewpoints: usize,
    /// Of those, viewpoints with one predicted label throughout.
    pub consistent: usize,
    pub fraction: Option<f64>,
    /// Viewpoints seen at a single sweep value.
    pub excluded_single_value: usize,
    /// Records without a top-1 label (errored or detection runs).
    pub skipped_records: usize,
}

/// Fraction of viewpoints whose top-1 label stays the same across the sweep.
/// A viewpoint fixes mesh, environment and every parameter outside `sweep`.
pub fn prediction_consistency(records: &[LogRecord], sweep: &[String]) -> ConsistencyReport {
    let mut groups: BTreeMap<String, (BTreeSet<String>, BTreeSet<&str>)> = BTreeMap::new();
    let mut skipped = 0;
    for r in records {
        let Some(l) = label(r) else {
            skipped += 1;
            continue;
        };
        let g = groups.entry(viewpoint(r, sweep)).or_default();
        g.0.insert(sweep_value(r, sweep));
        g.1.insert(l);
    }
    let swept: Vec<_> = groups.values().filter(|(vals, _)| vals.len() >= 2).collect();
    let consistent = swept.iter().filter(|(_, labels)| labels.len() == 1).count();
    ConsistencyReport {
        sweep: sweep.to_vec(),
        viewpoints: swept.len(),
        consistent,
        fraction: (!swept.is_empty()).then(|| consistent as f64 / swept.len() as f64),
        excluded_single_value: groups.len() - swept.len(),
        skipped_records: skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureReport {
    pub key: String,
    pub baseline: String,
    /// Accuracy of baseline-texture records over all viewpoints.
    pub baseline_accuracy: Option<f64>,
    /// Viewpoints whose baseline render was classified correctly.
    pub correct_viewpoints: usize,
    pub swapped_n: u64,
    pub swapped_correct: u64,
    /// Accuracy of swapped-texture renders at correct viewpoints.
    pub swapped_accuracy: Option<f64>,
    /// Relative accuracy loss from swapping; the baseline accuracy on the
    /// restricted viewpoints is 1, so this is `1 - swapped_accuracy`.
    pub drop: Option<f64>,
    /// Predicted label counts per swapped-in texture.
    pub per_texture: BTreeMap<String, BTreeMap<String, u64>>,
    /// Predicted label counts per object over all its swapped renders.
    pub per_object: BTreeMap<String, BTreeMap<String, u64>>,
    /// Viewpoints with no graded baseline render.
    pub excluded_viewpoints: usize,
}

const NO_LABEL: &str = "<none>";

/// How much swapping textures hurts, restricted to viewpoints the model
/// already gets right with the baseline texture.
pub fn texture_shape_alignment(records: &[LogRecord], key: &str, baseline: &str) -> TextureReport {
    let skip = [key.to_string()];
    let texture = |r: &LogRecord| match r.params.get(key) {
        Some(l) => l.as_str().map(str::to_string).unwrap_or_else(|| l.to_string()),
        None => baseline.to_string(),
    };
    let mut base: BTreeMap<String, bool> = BTreeMap::new();
    let (mut base_n, mut base_ok) = (0u64, 0u64);
    let mut viewpoints = BTreeSet::new();
    for (r, ok) in graded(records) {
        let vp = viewpoint(r, &skip);
        viewpoints.insert(vp.clone());
        if texture(r) == baseline {
            base_n += 1;
            base_ok += ok as u64;
            *base.entry(vp).or_insert(true) &= ok;
        }
    }
    let mut report = TextureReport {
        key: key.into(),
        baseline: baseline.into(),
        baseline_accuracy: (base_n > 0).then(|| base_ok as f64 / base_n as f64),
        correct_viewpoints: base.values().filter(|ok| **ok).count(),
        swapped_n: 0,
        swapped_correct: 0,
        swapped_accuracy: None,
        drop: None,
        per_texture: BTreeMap::new(),
        per_object: BTreeMap::new(),
        excluded_viewpoints: viewpoints.iter().filter(|v| !base.contains_key(*v)).count(),
    };
    for (r, ok) in graded(records) {
        let t = texture(r);
        if t == baseline || base.get(&viewpoint(r, &skip)) != Some(&true) {
            continue;
        }
        report.swapped_n += 1;
        report.swapped_correct += ok as u64;
        let l = label(r).unwrap_or(NO_LABEL).to_string();
        *report.per_texture.entry(t).or_default().entry(l.clone()).or_default() += 1;
        *report.per_object.entry(r.mesh.clone()).or_default().entry(l).or_default() += 1;
    }
    if report.swapped_n > 0 {
        let acc = report.swapped_correct as f64 / report.swapped_n as f64;
        report.swapped_accuracy = Some(acc);
        report.drop = Some(1.0 - acc);
    }
    report
}

pub const LIQUID_KEYS: [&str; 3] = ["liquid_fill.water", "liquid_fill.milk", "liquid_fill.coffee"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexSummary {
    pub classes: Vec<String>,
    /// Normalized (water, milk, coffee) proportions.
    pub mixtures: Vec<[f64; 3]>,
    /// `raw[mixture][class]` prediction counts.
    pub raw: Vec<Vec<u64>>,
    /// Each class column divided by its total, so columns sum to 1.
    pub normalized: Vec<Vec<f64>>,
    /// Records without a label or without a positive liquid mixture.
    pub excluded: usize,
}

impl SimplexSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("water,milk,coffee,class,count,column_share\n");
        for (mi, m) in self.mixtures.iter().enumerate() {
            for (ci, c) in self.classes.iter().enumerate() {
                out += &format!(
                    "{},{},{},{},{},{}\n",
                    m[0],
                    m[1],
                    m[2],
                    csv_field(c),
                    self.raw[mi][ci],
                    self.normalized[mi][ci]
                );
            }
        }
        out
    }
}

/// Predicted-class counts per liquid mixture.
pub fn liquid_simplex_summary(records: &[LogRecord]) -> SimplexSummary {
    const SCALE: f64 = 1e9;
    let mut counts: BTreeMap<[i64; 3], BTreeMap<String, u64>> = BTreeMap::new();
    let mut classes = BTreeSet::new();
    let mut excluded = 0;
    for r in records {
        let amounts: Option<Vec<f64>> =
            LIQUID_KEYS.iter().map(|k| r.params.get(*k).and_then(Literal::as_f64)).collect();
        let (Some(l), Some(a)) = (label(r), amounts) else {
            excluded += 1;
            continue;
        };
        let total: f64 = a.iter().sum();
        if !(total > 0.0) {
            excluded += 1;
            continue;
        }
        let key = [0, 1, 2].map(|i| (a[i] / total * SCALE).round() as i64);
        classes.insert(l.to_string());
        *counts.entry(key).or_default().entry(l.to_string()).or_default() += 1;
    }
    let classes: Vec<String> = classes.into_iter().collect();
    let raw: Vec<Vec<u64>> =
        counts.values().map(|m| classes.iter().map(|c| m.get(c).copied().unwrap_or(0)).collect()).collect();
    let totals: Vec<u64> = (0..classes.len()).map(|ci| raw.iter().map(|row| row[ci]).sum()).collect();
    let normalized =
        raw.iter().map(|row| row.iter().zip(&totals).map(|(&n, &t)| n as f64 / t as f64).collect()).collect();
    SimplexSummary {
        classes,
        mixtures: counts.keys().map(|k| k.map(|v| v as f64 / SCALE)).collect(),
        raw,
        normalized,
        excluded,
    }
}
