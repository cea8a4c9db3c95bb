//! Dice and normalized surface distance (NSD), per case and aggregated.
//!
//! Conventions:
//! - A metric is absent when both masks are empty and 0 when exactly one is.
//! - Surface voxels are foreground voxels with at least one 6-neighbour that is
//!   background or outside the volume.
//! - NSD is symmetric: the fraction of both surfaces lying strictly closer
//!   than `tau` (world mm) to the other surface.
//! - Aggregation bootstraps over cases (sorted by case ID); the overall score
//!   is the mean of per-case means over present structures.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::par::{map_slice, Execution};
use crate::stats::{
    bootstrap_percentile_ci_with, derive_seed, mean, significant, wilcoxon_signed_rank,
    BootstrapConfig, ConfidenceInterval,
};
use crate::taxonomy::{StructureRegistry, MAX_STRUCTURE_ID};
use crate::volume::{BinaryMask, Grid, LabelMap};

/// Default NSD tolerance in mm.
pub const DEFAULT_TAU_MM: f64 = 3.0;

/// Which structures to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Btcv,
}

impl Subset {
    pub fn ids(self, registry: &StructureRegistry) -> Vec<u16> {
        match self {
            Subset::All => registry.entries().iter().map(|e| e.id).collect(),
            Subset::Btcv => registry.btcv_subset().into_iter().collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Btcv => "btcv",
        }
    }
}

/// Half-open voxel box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bounds {
    lo: [usize; 3],
    hi: [usize; 3],
}

impl Bounds {
    fn empty() -> Self {
        Bounds {
            lo: [usize::MAX; 3],
            hi: [0; 3],
        }
    }

    fn is_empty(&self) -> bool {
        (0..3).any(|a| self.lo[a] >= self.hi[a])
    }

    fn include(&mut self, p: [usize; 3]) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(p[a]);
            self.hi[a] = self.hi[a].max(p[a] + 1);
        }
    }

    fn union(&self, other: &Bounds) -> Bounds {
        Bounds {
            lo: [0, 1, 2].map(|a| self.lo[a].min(other.lo[a])),
            hi: [0, 1, 2].map(|a| self.hi[a].max(other.hi[a])),
        }
    }

    fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a])
    }
}

/// Per-label bounding boxes of a label map, indexed by label.
fn label_bounds(map: &LabelMap) -> Vec<Bounds> {
    let mut b = vec![Bounds::empty(); MAX_STRUCTURE_ID as usize + 1];
    let g = map.grid();
    let [nx, ny, nz] = g.dims();
    let data = map.data();
    for k in 0..nz {
        for j in 0..ny {
            let row = g.index(0, j, k);
            for i in 0..nx {
                let v = data[row + i];
                if v != 0 {
                    b[v as usize].include([i, j, k]);
                }
            }
        }
    }
    b
}

fn mask_bounds(mask: &BinaryMask) -> Bounds {
    let mut b = Bounds::empty();
    for (idx, &v) in mask.data().iter().enumerate() {
        if v {
            b.include(mask.grid().coords(idx));
        }
    }
    b
}

/// Copy the voxels of `bounds` out of a full-grid predicate.
fn crop(grid: &Grid, bounds: &Bounds, pred: impl Fn(usize) -> bool) -> Vec<bool> {
    let d = bounds.dims();
    let mut out = Vec::with_capacity(d[0] * d[1] * d[2]);
    for k in bounds.lo[2]..bounds.hi[2] {
        for j in bounds.lo[1]..bounds.hi[1] {
            for i in bounds.lo[0]..bounds.hi[0] {
                out.push(pred(grid.index(i, j, k)));
            }
        }
    }
    out
}

/// Surface voxels of a cropped mask. The crop is a bounding box of all
/// foreground, so anything beyond it is background, like the volume edge.
fn surface(mask: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let at = |i: usize, j: usize, k: usize| mask[i + nx * (j + ny * k)];
    let mut out = vec![false; mask.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if !at(i, j, k) {
                    continue;
                }
                let edge = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
                out[i + nx * (j + ny * k)] = edge
                    || !at(i - 1, j, k)
                    || !at(i + 1, j, k)
                    || !at(i, j - 1, k)
                    || !at(i, j + 1, k)
                    || !at(i, j, k - 1)
                    || !at(i, j, k + 1);
            }
        }
    }
    out
}

fn dice_counts(a: &[bool], b: &[bool]) -> Option<f64> {
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        None
    } else {
        Some(2.0 * both as f64 / (na + nb) as f64)
    }
}

fn nsd_cropped(a: &[bool], b: &[bool], dims: [usize; 3], spacing: [f64; 3], tau: f64) -> Option<f64> {
    let a_any = a.iter().any(|&v| v);
    let b_any = b.iter().any(|&v| v);
    match (a_any, b_any) {
        (false, false) => return None,
        (true, false) | (false, true) => return Some(0.0),
        _ => {}
    }
    let sa = surface(a, dims);
    let sb = surface(b, dims);
    let to_a = squared_edt(&sa, dims, spacing);
    let to_b = squared_edt(&sb, dims, spacing);
    let (mut hits, mut total) = (0usize, 0usize);
    for i in 0..sa.len() {
        if sa[i] {
            total += 1;
            hits += (to_b[i].sqrt() < tau) as usize;
        }
        if sb[i] {
            total += 1;
            hits += (to_a[i].sqrt() < tau) as usize;
        }
    }
    Some(hits as f64 / total as f64)
}

/// Dice similarity coefficient; `None` when both masks are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<Option<f64>> {
    a.grid().ensure_matches(b.grid(), "dice")?;
    Ok(dice_counts(a.data(), b.data()))
}

/// Normalized surface distance at tolerance `tau_mm`; `None` when both masks are empty.
pub fn nsd(a: &BinaryMask, b: &BinaryMask, tau_mm: f64) -> Result<Option<f64>> {
    a.grid().ensure_matches(b.grid(), "nsd")?;
    if tau_mm.is_nan() || tau_mm <= 0.0 {
        return Err(Error::invalid(format!("tau must be positive, got {tau_mm}")));
    }
    let bounds = mask_bounds(a).union(&mask_bounds(b));
    if bounds.is_empty() {
        return Ok(None);
    }
    let g = a.grid();
    let ca = crop(g, &bounds, |i| a.data()[i]);
    let cb = crop(g, &bounds, |i| b.data()[i]);
    Ok(nsd_cropped(&ca, &cb, bounds.dims(), g.spacing(), tau_mm))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureMetrics {
    pub id: u16,
    pub dice: Option<f64>,
    pub nsd: Option<f64>,
    pub gt_present: bool,
    pub pred_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub structures: Vec<StructureMetrics>,
}

impl CaseMetrics {
    /// Mean Dice over structures where it is defined.
    pub fn mean_dice(&self) -> Option<f64> {
        mean_present(self.structures.iter().map(|s| s.dice))
    }

    pub fn mean_nsd(&self) -> Option<f64> {
        mean_present(self.structures.iter().map(|s| s.nsd))
    }

    pub fn get(&self, id: u16) -> Option<&StructureMetrics> {
        self.structures.iter().find(|s| s.id == id)
    }
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Score every structure in `ids`. The two maps must share a grid.
pub fn evaluate_case(
    case_id: &str,
    gt: &LabelMap,
    pred: &LabelMap,
    ids: &[u16],
    tau_mm: f64,
) -> Result<CaseMetrics> {
    evaluate_case_with(case_id, gt, pred, ids, tau_mm, Execution::default())
}

pub fn evaluate_case_with(
    case_id: &str,
    gt: &LabelMap,
    pred: &LabelMap,
    ids: &[u16],
    tau_mm: f64,
    exec: Execution,
) -> Result<CaseMetrics> {
    gt.grid().ensure_matches(pred.grid(), case_id)?;
    if tau_mm.is_nan() || tau_mm <= 0.0 {
        return Err(Error::invalid(format!("tau must be positive, got {tau_mm}")));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id == 0 || id > MAX_STRUCTURE_ID) {
        return Err(Error::UnknownStructure {
            key: bad.to_string(),
            suggestions: Vec::new(),
        });
    }
    let gt_bounds = label_bounds(gt);
    let pred_bounds = label_bounds(pred);
    let grid = gt.grid();
    let structures = map_slice(exec, ids, |&id| {
        let (bg, bp) = (gt_bounds[id as usize], pred_bounds[id as usize]);
        let (gt_present, pred_present) = (!bg.is_empty(), !bp.is_empty());
        let (dice, nsd) = if !gt_present && !pred_present {
            (None, None)
        } else if gt_present != pred_present {
            (Some(0.0), Some(0.0))
        } else {
            let b = bg.union(&bp);
            let a = crop(grid, &b, |i| gt.data()[i] == id);
            let p = crop(grid, &b, |i| pred.data()[i] == id);
            (
                dice_counts(&a, &p),
                nsd_cropped(&a, &p, b.dims(), grid.spacing(), tau_mm),
            )
        };
        StructureMetrics {
            id,
            dice,
            nsd,
            gt_present,
            pred_present,
        }
    });
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        structures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    /// Number of cases contributing.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureSummary {
    pub id: u16,
    pub dice: MetricSummary,
    pub nsd: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub n_cases: usize,
    pub structures: Vec<StructureSummary>,
    pub overall_dice: MetricSummary,
    pub overall_nsd: MetricSummary,
}

const OVERALL_DICE_KEY: u64 = 1 << 32;
const OVERALL_NSD_KEY: u64 = (1 << 32) + 1;

fn summarize(values: &[f64], cfg: &BootstrapConfig, key: u64, exec: Execution) -> Result<MetricSummary> {
    if values.is_empty() {
        return Ok(MetricSummary {
            mean: None,
            ci: None,
            n: 0,
        });
    }
    let cfg = BootstrapConfig {
        seed: derive_seed(cfg.seed, key),
        ..*cfg
    };
    Ok(MetricSummary {
        mean: Some(mean(values)),
        ci: Some(bootstrap_percentile_ci_with(values, mean, &cfg, exec)?),
        n: values.len(),
    })
}

/// Means and percentile-bootstrap CIs across cases.
///
/// Each quantity gets its own seed, `derive_seed(seed, key)`, where the key is
/// `2·id` (Dice) or `2·id + 1` (NSD) for structures and `2³²` / `2³² + 1` for
/// the overall scores.
pub fn aggregate(cases: &[CaseMetrics], cfg: &BootstrapConfig) -> Result<AggregateReport> {
    aggregate_with(cases, cfg, Execution::default())
}

pub fn aggregate_with(cases: &[CaseMetrics], cfg: &BootstrapConfig, exec: Execution) -> Result<AggregateReport> {
    if cases.is_empty() {
        return Err(Error::invalid("aggregate needs at least one case"));
    }
    let mut sorted: Vec<&CaseMetrics> = cases.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    if sorted.windows(2).any(|w| w[0].case_id == w[1].case_id) {
        return Err(Error::invalid("duplicate case IDs in aggregate input"));
    }
    let ids: BTreeSet<u16> = sorted
        .iter()
        .flat_map(|c| c.structures.iter().map(|s| s.id))
        .collect();
    let mut structures = Vec::with_capacity(ids.len());
    for id in ids {
        let column = |pick: fn(&StructureMetrics) -> Option<f64>| -> Vec<f64> {
            sorted.iter().filter_map(|c| c.get(id).and_then(pick)).collect()
        };
        structures.push(StructureSummary {
            id,
            dice: summarize(&column(|s| s.dice), cfg, 2 * id as u64, exec)?,
            nsd: summarize(&column(|s| s.nsd), cfg, 2 * id as u64 + 1, exec)?,
        });
    }
    let per_case_dice: Vec<f64> = sorted.iter().filter_map(|c| c.mean_dice()).collect();
    let per_case_nsd: Vec<f64> = sorted.iter().filter_map(|c| c.mean_nsd()).collect();
    Ok(AggregateReport {
        n_cases: sorted.len(),
        structures,
        overall_dice: summarize(&per_case_dice, cfg, OVERALL_DICE_KEY, exec)?,
        overall_nsd: summarize(&per_case_nsd, cfg, OVERALL_NSD_KEY, exec)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedComparison {
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Cases where both runs have a defined per-case mean.
    pub n_pairs: usize,
    pub method_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunComparison {
    pub dice: PairedComparison,
    pub nsd: PairedComparison,
}

fn paired(pairs: &[(f64, f64)]) -> Result<PairedComparison> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let test = wilcoxon_signed_rank(&diffs)?;
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(PairedComparison {
        mean_a: (!a.is_empty()).then(|| mean(&a)),
        mean_b: (!b.is_empty()).then(|| mean(&b)),
        statistic: test.statistic,
        p_value: test.p_value,
        significant: significant(test.p_value),
        n_pairs: pairs.len(),
        method_note: test.method_note,
    })
}

/// Per-case mean scores, the unit of the paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseMeans {
    pub case_id: String,
    pub dice: Option<f64>,
    pub nsd: Option<f64>,
}

impl From<&CaseMetrics> for CaseMeans {
    fn from(c: &CaseMetrics) -> Self {
        CaseMeans {
            case_id: c.case_id.clone(),
            dice: c.mean_dice(),
            nsd: c.mean_nsd(),
        }
    }
}

/// Paired two-sided Wilcoxon signed-rank comparison of per-case mean Dice and
/// NSD between two runs over the same cases.
pub fn compare_runs(a: &[CaseMetrics], b: &[CaseMetrics]) -> Result<RunComparison> {
    let a: Vec<CaseMeans> = a.iter().map(CaseMeans::from).collect();
    let b: Vec<CaseMeans> = b.iter().map(CaseMeans::from).collect();
    compare_case_means(&a, &b)
}

/// As [`compare_runs`], from per-case means (e.g. read back from reports).
/// Cases where either run lacks a mean are left out of that metric's test.
pub fn compare_case_means(a: &[CaseMeans], b: &[CaseMeans]) -> Result<RunComparison> {
    type ById = BTreeMap<String, (Option<f64>, Option<f64>)>;
    let index = |runs: &[CaseMeans]| -> Result<ById> {
        let mut m = BTreeMap::new();
        for c in runs {
            if m.insert(c.case_id.clone(), (c.dice, c.nsd)).is_some() {
                return Err(Error::invalid(format!("duplicate case ID {:?}", c.case_id)));
            }
        }
        Ok(m)
    };
    let ia = index(a)?;
    let ib = index(b)?;
    if !ia.keys().eq(ib.keys()) {
        let only_a: Vec<&String> = ia.keys().filter(|k| !ib.contains_key(*k)).collect();
        let only_b: Vec<&String> = ib.keys().filter(|k| !ia.contains_key(*k)).collect();
        return Err(Error::invalid(format!(
            "runs cover different cases (only in a: {only_a:?}; only in b: {only_b:?})"
        )));
    }
    let mut dice_pairs = Vec::new();
    let mut nsd_pairs = Vec::new();
    for (k, (da, na)) in &ia {
        let (db, nb) = ib[k];
        if let (Some(x), Some(y)) = (*da, db) {
            dice_pairs.push((x, y));
        }
        if let (Some(x), Some(y)) = (*na, nb) {
            nsd_pairs.push((x, y));
        }
    }
    Ok(RunComparison {
        dice: paired(&dice_pairs)?,
        nsd: paired(&nsd_pairs)?,
    })
}
