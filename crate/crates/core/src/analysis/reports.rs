//! Named reports for the command line: `name` or `name=argument`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::complexity::{background_complexity, EdgeFilter};
use super::heatmap::{run_uv_heatmaps, DEFAULT_GRID};
use super::stats::{agreement, boxplot, OutlierRule};
use super::tables::{
    accuracy_by, liquid_simplex_summary, matrix_by_two_params, prediction_consistency, texture_shape_alignment,
};
use super::{io_error, AnalysisError, AxisValue, GroupKey, RunData};
use crate::image::RgbBuffer;
use crate::scene::{load_environment, Background, EnvironmentSource};

pub const REPORT_SCHEMA: u32 = 1;

pub const REPORT_NAMES: [&str; 9] = [
    "accuracy_by=<key>[,<key>...]",
    "matrix=<x>,<y>",
    "boxplot=<group>[,<over>]",
    "uv_heatmap[=<grid>]",
    "consistency=<key or control>",
    "texture_alignment[=<key>]",
    "agreement=<labels.jsonl>",
    "liquid_simplex",
    "background_complexity",
];

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Bin edges per `control.param` key.
    pub bins: BTreeMap<String, Vec<f64>>,
    pub outlier_rule: OutlierRule,
    pub edge_filter: EdgeFilter,
}

#[derive(Debug, Clone)]
pub struct Report {
    /// File stem, e.g. `accuracy_by_mesh`.
    pub name: String,
    pub json: Value,
    pub csv: Option<String>,
}

impl Report {
    /// Write `<name>.json` (and `<name>.csv` when tabular) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, AnalysisError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        let mut written = Vec::new();
        let path = dir.join(format!("{}.json", self.name));
        let text = serde_json::to_string_pretty(&self.json).expect("report serializes");
        fs::write(&path, text + "\n").map_err(io_error(&path))?;
        written.push(path);
        if let Some(csv) = &self.csv {
            let path = dir.join(format!("{}.csv", self.name));
            fs::write(&path, csv).map_err(io_error(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn envelope(data: &RunData, report: &str, body: Value) -> Value {
    json!({
        "schema": REPORT_SCHEMA,
        "report": report,
        "run": data.manifest.name,
        "config_hash": data.manifest.config_hash,
        "status": data.manifest.status,
        "records": data.records.len(),
        "truncated_tail": data.truncated_tail,
        "result": body,
    })
}

fn file_stem(spec: &str) -> String {
    spec.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn parse_keys(data: &RunData, arg: &str, opts: &ReportOptions) -> Result<Vec<GroupKey>, AnalysisError> {
    let available = data.keys();
    arg.split(',').filter(|k| !k.trim().is_empty()).map(|k| GroupKey::parse(k, &opts.bins, &available)).collect()
}

fn required<'a>(name: &str, arg: Option<&'a str>) -> Result<&'a str, AnalysisError> {
    arg.filter(|a| !a.is_empty()).ok_or_else(|| AnalysisError::Invalid(format!("{name} needs an argument")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn run_report(data: &RunData, spec: &str, opts: &ReportOptions) -> Result<Report, AnalysisError> {
    let (name, arg) = match spec.split_once('=') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    let stem = file_stem(spec);
    let (body, csv) = match name {
        "accuracy_by" => {
            let keys = parse_keys(data, required(name, arg)?, opts)?;
            if keys.is_empty() {
                return Err(AnalysisError::Empty("accuracy_by"));
            }
            let t = accuracy_by(&data.records, &keys);
            (to_value(&t), Some(t.to_csv()))
        }
        "matrix" => {
            let keys = parse_keys(data, required(name, arg)?, opts)?;
            let [x, y] = &keys[..] else {
                return Err(AnalysisError::Invalid("matrix takes exactly two keys".into()));
            };
            let m = matrix_by_two_params(&data.records, x, y, &[]);
            (to_value(&m), Some(m.to_csv()))
        }
        "boxplot" => boxplot_report(data, required(name, arg)?, opts)?,
        "uv_heatmap" => {
            let g = match arg {
                Some(a) => a.parse().map_err(|_| AnalysisError::Invalid(format!("grid size '{a}'")))?,
                None => DEFAULT_GRID,
            };
            let r = run_uv_heatmaps(data, g)?;
            let mut body = to_value(&r);
            for (mesh, grid) in &r.per_mesh {
                body["per_mesh"][mesh]["accuracy"] = to_value(&grid.accuracies());
            }
            (body, None)
        }
        "consistency" => {
            let arg = required(name, arg)?;
            let keys = data.keys();
            let prefix = format!("{arg}.");
            let sweep: Vec<String> =
                keys.iter().filter(|k| *k == arg || k.starts_with(&prefix)).cloned().collect();
            if sweep.is_empty() || arg == "mesh" || arg == "environment" {
                return Err(AnalysisError::UnknownKey { key: arg.into(), available: keys[2..].join(", ") });
            }
            (to_value(&prediction_consistency(&data.records, &sweep)), None)
        }
        "texture_alignment" => {
            let key = arg.unwrap_or("texture_swap.texture");
            (to_value(&texture_shape_alignment(&data.records, key, "original")), None)
        }
        "agreement" => {
            let path = Path::new(required(name, arg)?);
            let real = load_labels(path)?;
            (to_value(&agreement(&data.records, &real)?), None)
        }
        "liquid_simplex" => {
            let s = liquid_simplex_summary(&data.records);
            (to_value(&s), Some(s.to_csv()))
        }
        "background_complexity" => complexity_report(data, opts)?,
        _ => {
            return Err(AnalysisError::UnknownReport { name: name.into(), available: REPORT_NAMES.join(", ") });
        }
    };
    Ok(Report { name: stem, json: envelope(data, spec.trim(), body), csv })
}

/// One box per value of `group`, over per-`over` accuracies (meshes by
/// default).
fn boxplot_report(data: &RunData, arg: &str, opts: &ReportOptions) -> Result<(Value, Option<String>), AnalysisError> {
    let mut keys = parse_keys(data, arg, opts)?;
    if keys.len() == 1 {
        keys.push(GroupKey::Mesh);
    }
    let [group, over] = &keys[..] else {
        return Err(AnalysisError::Invalid("boxplot takes a group key and an optional second key".into()));
    };
    let table = accuracy_by(&data.records, &keys);
    let mut by_group: BTreeMap<AxisValue, Vec<f64>> = BTreeMap::new();
    for row in &table.rows {
        by_group.entry(row.group[0].clone()).or_default().push(row.accuracy);
    }
    let mut boxes = Vec::new();
    let mut csv = String::from("group,n,median,q1,q3,whisker_lo,whisker_hi,outliers\n");
    for (g, values) in &by_group {
        let b = boxplot(values, opts.outlier_rule)?;
        let outliers: Vec<String> = b.outliers.iter().map(f64::to_string).collect();
        csv += &format!(
            "{},{},{},{},{},{},{},{}\n",
            g.label(),
            b.n,
            b.median,
            b.q1,
            b.q3,
            b.whisker_lo,
            b.whisker_hi,
            outliers.join(" ")
        );
        boxes.push(json!({ "group": g, "values": values, "summary": b }));
    }
    let body = json!({ "group_key": group.name(), "over_key": over.name(), "boxes": boxes, "excluded": table.excluded });
    Ok((body, Some(csv)))
}

#[derive(Deserialize)]
struct Label {
    id: u64,
    is_correct: Option<bool>,
}

/// Real-world verdicts as JSON lines with `id` and `is_correct`; another
/// run's `results.jsonl` also qualifies. Lines without a verdict are skipped.
pub fn load_labels(path: &Path) -> Result<BTreeMap<u64, bool>, AnalysisError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: Label = serde_json::from_str(line)
            .map_err(|e| AnalysisError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let Some(c) = l.is_correct {
            out.insert(l.id, c);
        }
    }
    Ok(out)
}

fn complexity_report(data: &RunData, opts: &ReportOptions) -> Result<(Value, Option<String>), AnalysisError> {
    let cfg = &data.manifest.config;
    let accuracy = accuracy_by(&data.records, &[GroupKey::Environment]);
    let mut rows = Vec::new();
    let mut csv = String::from("environment,complexity,n,accuracy\n");
    for (i, e) in cfg.assets.environments.iter().enumerate() {
        let name = cfg.environment_name(i);
        let source = match (&e.path, e.color) {
            (Some(p), _) => EnvironmentSource::Path(p.clone()),
            (_, Some(c)) => EnvironmentSource::Color(c),
            _ => continue,
        };
        let (complexity, error) = match load_environment(&name, &source) {
            Ok(env) => {
                let img = match env.background {
                    Background::Uniform(c) => RgbBuffer::solid(2, 1, c),
                    Background::Equirect(img) => img,
                };
                (Some(background_complexity(&img, opts.edge_filter)), None)
            }
            Err(err) => (None, Some(err.to_string())),
        };
        let row = accuracy.rows.iter().find(|r| r.group[0] == AxisValue::Text(name.clone()));
        csv += &format!(
            "{name},{},{},{}\n",
            complexity.map(|c| c.to_string()).unwrap_or_default(),
            row.map_or(0, |r| r.n),
            row.map(|r| r.accuracy.to_string()).unwrap_or_default()
        );
        rows.push(json!({
            "environment": name,
            "complexity": complexity,
            "error": error,
            "n": row.map_or(0, |r| r.n),
            "accuracy": row.map(|r| r.accuracy),
        }));
    }
    Ok((json!({ "filter": opts.edge_filter, "environments": rows }), Some(csv)))
}
