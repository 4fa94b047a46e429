use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::orchestrator::log::LogRecord;

/// Where the outlier fences sit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierRule {
    /// `q1 - 1.5 iqr` and `q3 + 1.5 iqr`.
    #[default]
    Quartiles,
    /// `median ± 1.5 iqr`.
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Smallest and largest values inside the fences.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    /// Values outside the fences, ascending.
    pub outliers: Vec<f64>,
    pub rule: OutlierRule,
}

/// Quantile of an ascending sample by linear interpolation between the
/// order statistics at rank `(n - 1) p` (the inclusive convention).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn boxplot(values: &[f64], rule: OutlierRule) -> Result<BoxplotSummary, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty("boxplot"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::Invalid("boxplot values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = match rule {
        OutlierRule::Quartiles => (q1 - 1.5 * iqr, q3 + 1.5 * iqr),
        OutlierRule::Median => (median - 1.5 * iqr, median + 1.5 * iqr),
    };
    let (inside, outliers): (Vec<f64>, Vec<f64>) = sorted.iter().partition(|&&v| v >= lo_fence && v <= hi_fence);
    // With the median rule every value can fall outside; whiskers then
    // collapse onto the median.
    let whisker_lo = inside.first().copied().unwrap_or(median);
    let whisker_hi = inside.last().copied().unwrap_or(median);
    Ok(BoxplotSummary { n: sorted.len(), median, q1, q3, iqr, whisker_lo, whisker_hi, outliers, rule })
}

/// Counts of the 2×2 sim/real correctness table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementCounts {
    pub both_correct: u64,
    pub sim_only_correct: u64,
    pub real_only_correct: u64,
    pub both_incorrect: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: u64,
    pub counts: AgreementCounts,
    pub agreement: Option<f64>,
    /// P(real correct | sim correct); `None` when sim is never correct.
    pub ppv: Option<f64>,
    /// P(real incorrect | sim incorrect); `None` when sim is never incorrect.
    pub npv: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Agreement statistics from `(sim_correct, real_correct)` pairs.
pub fn agreement_table(pairs: impl IntoIterator<Item = (bool, bool)>) -> AgreementStats {
    let mut c = AgreementCounts::default();
    for (sim, real) in pairs {
        match (sim, real) {
            (true, true) => c.both_correct += 1,
            (true, false) => c.sim_only_correct += 1,
            (false, true) => c.real_only_correct += 1,
            (false, false) => c.both_incorrect += 1,
        }
    }
    let n = c.both_correct + c.sim_only_correct + c.real_only_correct + c.both_incorrect;
    AgreementStats {
        n,
        counts: c,
        agreement: ratio(c.both_correct + c.both_incorrect, n),
        ppv: ratio(c.both_correct, c.both_correct + c.sim_only_correct),
        npv: ratio(c.both_incorrect, c.both_incorrect + c.real_only_correct),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub overall: AgreementStats,
    pub per_object: BTreeMap<String, AgreementStats>,
    /// Sim records without a verdict (errored or not applicable).
    pub ungraded: usize,
}

/// Compare simulated correctness with real-world correctness keyed by id.
/// Every graded sim id must have a real verdict and vice versa.
pub fn agreement(sim: &[LogRecord], real: &BTreeMap<u64, bool>) -> Result<AgreementReport, AnalysisError> {
    let graded: BTreeMap<u64, (&str, bool)> =
        sim.iter().filter_map(|r| r.is_correct.map(|c| (r.id, (r.mesh.as_str(), c)))).collect();
    let sim_only: Vec<u64> = graded.keys().filter(|id| !real.contains_key(id)).copied().collect();
    let real_only: Vec<u64> = real.keys().filter(|id| !graded.contains_key(id)).copied().collect();
    if !sim_only.is_empty() || !real_only.is_empty() {
        return Err(AnalysisError::Unmatched { sim_only, real_only });
    }
    let mut per_mesh: BTreeMap<String, Vec<(bool, bool)>> = BTreeMap::new();
    for (id, (mesh, s)) in &graded {
        per_mesh.entry(mesh.to_string()).or_default().push((*s, real[id]));
    }
    Ok(AgreementReport {
        overall: agreement_table(graded.iter().map(|(id, (_, s))| (*s, real[id]))),
        per_object: per_mesh.into_iter().map(|(m, v)| (m, agreement_table(v))).collect(),
        ungraded: sim.len() - graded.len(),
    })
}
