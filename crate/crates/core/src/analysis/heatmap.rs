use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, RunData};
use crate::render::buffers::load_uv;
use crate::render::{Modality, UvSample, LIQUID_TRIANGLE_BASE};

pub const DEFAULT_GRID: usize = 64;

/// Per-cell accuracy over texture space. Cell `(i, j)` covers
/// `u ∈ [i/g, (i+1)/g)`, `v ∈ [j/g, (j+1)/g)` and is stored at `j * g + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub g: usize,
    pub renders: u64,
    /// Renders in which the cell was visible at least once.
    pub visible: Vec<u64>,
    /// Of those, renders the model got right.
    pub correct: Vec<u64>,
}

/// Grid cell for a surface coordinate. Coordinates outside [0, 1] wrap the
/// way a repeating texture does; exactly 1 belongs to the last cell.
pub fn cell_of(u: f32, v: f32, g: usize) -> Option<(usize, usize)> {
    let idx = |t: f32| -> Option<usize> {
        if !t.is_finite() {
            return None;
        }
        let t = if (0.0..=1.0).contains(&t) { t } else { t.rem_euclid(1.0) };
        Some(((t as f64 * g as f64) as usize).min(g - 1))
    };
    Some((idx(u)?, idx(v)?))
}

impl HeatmapGrid {
    pub fn new(g: usize) -> Self {
        Self { g, renders: 0, visible: vec![0; g * g], correct: vec![0; g * g] }
    }

    /// Add one render. Each cell counts at most once however many pixels
    /// land in it. Liquid surfaces are not part of the object's texture
    /// space and are skipped.
    pub fn add(&mut self, uv: &[Option<UvSample>], is_correct: bool) {
        let mut seen = vec![false; self.g * self.g];
        for s in uv.iter().flatten() {
            if s.triangle >= LIQUID_TRIANGLE_BASE {
                continue;
            }
            if let Some((i, j)) = cell_of(s.u, s.v, self.g) {
                seen[j * self.g + i] = true;
            }
        }
        self.renders += 1;
        for (k, _) in seen.iter().enumerate().filter(|(_, s)| **s) {
            self.visible[k] += 1;
            self.correct[k] += is_correct as u64;
        }
    }

    pub fn accuracy(&self, i: usize, j: usize) -> Option<f64> {
        let k = j * self.g + i;
        (self.visible[k] > 0).then(|| self.correct[k] as f64 / self.visible[k] as f64)
    }

    /// Row-major (by v) accuracies; `None` for never-visible cells.
    pub fn accuracies(&self) -> Vec<Option<f64>> {
        (0..self.g).flat_map(|j| (0..self.g).map(move |i| (i, j))).map(|(i, j)| self.accuracy(i, j)).collect()
    }
}

pub fn uv_heatmap<'a>(renders: impl IntoIterator<Item = (&'a [Option<UvSample>], bool)>, g: usize) -> HeatmapGrid {
    let mut grid = HeatmapGrid::new(g);
    for (uv, ok) in renders {
        grid.add(uv, ok);
    }
    grid
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UvHeatmapReport {
    pub g: usize,
    pub per_mesh: BTreeMap<String, HeatmapGrid>,
    /// Graded records whose uv buffer was not saved or could not be read.
    pub skipped_missing: usize,
    pub skipped_ungraded: usize,
}

/// One heatmap per mesh from a run directory's saved uv buffers.
pub fn run_uv_heatmaps(data: &RunData, g: usize) -> Result<UvHeatmapReport, AnalysisError> {
    if g == 0 {
        return Err(AnalysisError::Invalid("grid size must be positive".into()));
    }
    let any_uv = data.records.iter().any(|r| r.buffers.contains_key(&Modality::Uv));
    if !data.manifest.save_buffers.contains(&Modality::Uv) && !any_uv {
        return Err(AnalysisError::MissingBuffers { modality: "uv" });
    }
    let res = data.manifest.resolution;
    let mut report = UvHeatmapReport { g, per_mesh: BTreeMap::new(), skipped_missing: 0, skipped_ungraded: 0 };
    for r in &data.records {
        let Some(ok) = r.is_correct else {
            report.skipped_ungraded += 1;
            continue;
        };
        let Some(uv) = r.buffers.get(&Modality::Uv).and_then(|p| load_uv(&data.dir.join(p), res.width, res.height).ok())
        else {
            report.skipped_missing += 1;
            continue;
        };
        report.per_mesh.entry(r.mesh.clone()).or_insert_with(|| HeatmapGrid::new(g)).add(&uv, ok);
    }
    if report.per_mesh.is_empty() && report.skipped_missing > 0 {
        return Err(AnalysisError::MissingBuffers { modality: "uv" });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn s(u: f32, v: f32) -> Option<UvSample> {
        Some(UvSample { u, v, triangle: 0 })
    }

    #[test]
    fn presence_counts_once_per_render() {
        // Two renders: the first sees cell (0,0) through three pixels.
        let a = [s(0.1, 0.1), s(0.2, 0.2), s(0.05, 0.45), None];
        let b = [s(0.9, 0.9), s(0.1, 0.1)];
        let grid = uv_heatmap([(&a[..], true), (&b[..], false)], 2);
        assert_eq!(grid.renders, 2);
        assert_eq!(grid.visible, vec![2, 0, 0, 1]);
        assert_eq!(grid.correct, vec![1, 0, 0, 0]);
        assert_eq!(grid.accuracy(0, 0), Some(0.5));
        assert_eq!(grid.accuracy(1, 1), Some(0.0));
        assert_eq!(grid.accuracy(1, 0), None);
    }

    #[test]
    fn cell_boundaries() {
        assert_eq!(cell_of(0.0, 0.0, 4), Some((0, 0)));
        assert_eq!(cell_of(1.0, 0.25, 4), Some((3, 1)));
        assert_eq!(cell_of(1.25, -0.25, 4), Some((1, 3)));
        assert_eq!(cell_of(f32::NAN, 0.5, 4), None);
    }

    #[test]
    fn liquid_triangles_are_ignored() {
        let uv = [Some(UvSample { u: 0.5, v: 0.5, triangle: LIQUID_TRIANGLE_BASE + 3 })];
        let grid = uv_heatmap([(&uv[..], true)], 4);
        assert!(grid.visible.iter().all(|&n| n == 0));
    }

    proptest! {
        #[test]
        fn cells_stay_in_bounds(
            renders in prop::collection::vec(
                (prop::collection::vec((0.0f32..=1.0, 0.0f32..=1.0), 0..40), any::<bool>()), 1..20),
            g in 1usize..16,
        ) {
            let bufs: Vec<(Vec<Option<UvSample>>, bool)> =
                renders.iter().map(|(px, ok)| (px.iter().map(|&(u, v)| s(u, v)).collect(), *ok)).collect();
            let grid = uv_heatmap(bufs.iter().map(|(b, ok)| (&b[..], *ok)), g);
            prop_assert_eq!(grid.renders as usize, bufs.len());
            for k in 0..g * g {
                prop_assert!(grid.correct[k] <= grid.visible[k]);
                prop_assert!(grid.visible[k] <= grid.renders);
            }
            for acc in grid.accuracies().into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&acc));
            }
            // Independent count: renders containing any pixel in each cell.
            for j in 0..g {
                for i in 0..g {
                    let expect = bufs.iter().filter(|(b, _)| b.iter().flatten().any(|p| {
                        let ci = ((p.u as f64 * g as f64).floor() as usize).min(g - 1);
                        let cj = ((p.v as f64 * g as f64).floor() as usize).min(g - 1);
                        (ci, cj) == (i, j)
                    })).count() as u64;
                    prop_assert_eq!(grid.visible[j * g + i], expect);
                }
            }
        }
    }
}
