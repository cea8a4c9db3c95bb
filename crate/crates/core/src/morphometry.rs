//! Per-structure volume and attenuation, plausibility filtering, and the
//! aging analysis (Spearman against age, age-quartile Kruskal-Wallis with
//! pairwise Mann-Whitney post-hoc tests).

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_slice, Execution};
use crate::resample::resample_labels_with;
use crate::stats::{
    bonferroni_significant, kruskal_wallis, mann_whitney_u, quartile_split, spearman,
    QuartileScheme, BONFERRONI_ALPHA,
};
use crate::taxonomy::{StructureRegistry, MAX_STRUCTURE_ID, NUM_STRUCTURES};
use crate::volio;
use crate::volume::{LabelMap, Volume3D};

/// Fewest valid records a structure needs before it is analysed.
pub const MIN_RECORDS: usize = 8;

/// Volume of `id` in ml; 0 when absent.
pub fn structure_volume(map: &LabelMap, id: u16) -> f64 {
    map.count(id) as f64 * map.grid().voxel_volume_mm3() / 1000.0
}

/// Mean CT value over the voxels labelled `id`; `None` when there are none.
pub fn structure_mean_hu(ct: &Volume3D, map: &LabelMap, id: u16) -> Result<Option<f64>> {
    ct.grid().ensure_matches(map.grid(), "mean HU")?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (&v, &l) in ct.data().iter().zip(map.data()) {
        if l == id {
            sum += v;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Sex::Male),
            "f" | "female" => Ok(Sex::Female),
            "" | "u" | "unknown" | "na" => Ok(Sex::Unknown),
            other => Err(Error::invalid(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Measurement {
    pub volume_ml: f64,
    pub mean_hu: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohortRecord {
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    /// One entry per structure, index `id - 1`.
    pub measurements: Vec<Measurement>,
}

impl CohortRecord {
    pub fn measurement(&self, id: u16) -> &Measurement {
        &self.measurements[id as usize - 1]
    }
}

/// Mark each measurement valid iff its volume is at least the structure's
/// cutoff (and the structure is present).
pub fn plausibility_filter(record: &CohortRecord, registry: &StructureRegistry) -> CohortRecord {
    let mut out = record.clone();
    for (m, s) in out.measurements.iter_mut().zip(registry.entries()) {
        m.valid = m.volume_ml > 0.0 && m.volume_ml >= s.cutoff_ml;
    }
    out
}

/// Measure every registered structure in one pass. Labels on a different
/// grid are resampled onto the CT grid (nearest) first. `age` may be NaN.
pub fn extract_record(
    patient_id: &str,
    age: f64,
    sex: Sex,
    ct: &Volume3D,
    labels: &LabelMap,
    registry: &StructureRegistry,
) -> Result<CohortRecord> {
    let resampled;
    let labels = if labels.grid().matches(ct.grid()) {
        labels
    } else {
        resampled = resample_labels_with(labels, ct.grid(), Execution::Sequential)?;
        &resampled
    };
    let mut counts = vec![0usize; MAX_STRUCTURE_ID as usize + 1];
    let mut sums = vec![0.0f64; MAX_STRUCTURE_ID as usize + 1];
    for (&v, &l) in ct.data().iter().zip(labels.data()) {
        counts[l as usize] += 1;
        sums[l as usize] += v;
    }
    let voxel_ml = ct.grid().voxel_volume_mm3() / 1000.0;
    let measurements = (1..=MAX_STRUCTURE_ID as usize)
        .map(|id| Measurement {
            volume_ml: counts[id] as f64 * voxel_ml,
            mean_hu: (counts[id] > 0).then(|| sums[id] / counts[id] as f64),
            valid: false,
        })
        .collect();
    let record = CohortRecord {
        patient_id: patient_id.to_string(),
        age,
        sex,
        measurements,
    };
    Ok(plausibility_filter(&record, registry))
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortCase {
    pub patient_id: String,
    pub ct_path: PathBuf,
    pub seg_path: PathBuf,
    pub age: String,
    #[serde(default)]
    pub sex: String,
}

/// Read a manifest CSV with columns `patient_id, ct_path, seg_path, age, sex`.
/// Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<CohortCase>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cases = Vec::new();
    for row in reader.deserialize::<CohortCase>() {
        let mut case = row.map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        if case.ct_path.is_relative() {
            case.ct_path = base.join(&case.ct_path);
        }
        if case.seg_path.is_relative() {
            case.seg_path = base.join(&case.seg_path);
        }
        cases.push(case);
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCase {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortExtraction {
    /// Sorted by patient ID.
    pub records: Vec<CohortRecord>,
    pub skipped: Vec<SkippedCase>,
}

fn extract_case(case: &CohortCase, registry: &StructureRegistry) -> Result<CohortRecord> {
    let age: f64 = case
        .age
        .trim()
        .parse()
        .ok()
        .filter(|a: &f64| a.is_finite())
        .ok_or_else(|| Error::invalid(format!("age {:?} is not a number", case.age)))?;
    let sex: Sex = case.sex.parse()?;
    let ct = volio::load_scalar(&case.ct_path)?;
    let labels = volio::load_labels(&case.seg_path)?;
    extract_record(&case.patient_id, age, sex, &ct, &labels, registry)
}

/// Extract every case; failures land in the skip report instead of aborting.
/// Duplicate patient IDs are an error.
pub fn cohort_extract(
    cases: &[CohortCase],
    registry: &StructureRegistry,
    exec: Execution,
) -> Result<CohortExtraction> {
    let mut seen = HashSet::new();
    for c in cases {
        if !seen.insert(c.patient_id.as_str()) {
            return Err(Error::invalid(format!("duplicate patient_id {:?}", c.patient_id)));
        }
    }
    let results = map_slice(exec, cases, |c| extract_case(c, registry));
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (case, r) in cases.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => skipped.push(SkippedCase {
                patient_id: case.patient_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    skipped.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(CohortExtraction { records, skipped })
}

fn csv_float(v: f64) -> String {
    format!("{v:?}")
}

/// One row per patient: `patient_id, age, sex`, then a volume column per
/// structure, a mean-HU column per structure, and a validity column per
/// structure, each block in registry ID order. Absent HU is an empty cell.
pub fn cohort_csv(records: &[CohortRecord], registry: &StructureRegistry) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let stems: Vec<String> = registry.entries().iter().map(|s| s.file_stem()).collect();
    let mut header = vec!["patient_id".to_string(), "age".into(), "sex".into()];
    header.extend(stems.iter().map(|s| format!("{s}_volume_ml")));
    header.extend(stems.iter().map(|s| format!("{s}_mean_hu")));
    header.extend(stems.iter().map(|s| format!("{s}_valid")));
    let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.patient_id.clone(), csv_float(r.age), r.sex.to_string()];
        row.extend(r.measurements.iter().map(|m| csv_float(m.volume_ml)));
        row.extend(r.measurements.iter().map(|m| m.mean_hu.map(csv_float).unwrap_or_default()));
        row.extend(r.measurements.iter().map(|m| (m.valid as u8).to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Volume,
    Attenuation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanResult {
    pub r_s: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KruskalResult {
    pub h: f64,
    pub p_value: f64,
    pub significant: bool,
    pub group_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseResult {
    /// 1-based age quartiles.
    pub quartiles: [usize; 2],
    pub u: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantityAnalysis {
    pub n: usize,
    /// Set when the quantity could not be analysed.
    pub skipped: Option<String>,
    pub spearman: Option<SpearmanResult>,
    pub age_quartiles: Option<QuartileScheme>,
    pub kruskal_wallis: Option<KruskalResult>,
    pub pairwise: Vec<PairwiseResult>,
}

impl QuantityAnalysis {
    fn skipped(n: usize, reason: String) -> Self {
        QuantityAnalysis {
            n,
            skipped: Some(reason),
            spearman: None,
            age_quartiles: None,
            kruskal_wallis: None,
            pairwise: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureAging {
    pub id: u16,
    pub name: String,
    pub volume: QuantityAnalysis,
    pub attenuation: QuantityAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgingReport {
    pub n_records: usize,
    pub significance_threshold: f64,
    pub structures: Vec<StructureAging>,
}

impl AgingReport {
    pub fn get(&self, id: u16) -> Option<&StructureAging> {
        self.structures.iter().find(|s| s.id == id)
    }
}

fn analyse(ages: &[f64], values: &[f64]) -> QuantityAnalysis {
    let n = values.len();
    if n < MIN_RECORDS {
        return QuantityAnalysis::skipped(n, format!("only {n} valid records, need {MIN_RECORDS}"));
    }
    let rho = match spearman(ages, values) {
        Ok(c) => c,
        Err(e) => return QuantityAnalysis::skipped(n, e.to_string()),
    };
    let (scheme, groups) = match quartile_split(ages) {
        Ok(s) => s,
        Err(e) => return QuantityAnalysis::skipped(n, e.to_string()),
    };
    let mut by_quartile: Vec<Vec<f64>> = vec![Vec::new(); 4];
    for (&g, &v) in groups.iter().zip(values) {
        by_quartile[g].push(v);
    }
    if by_quartile.iter().any(Vec::is_empty) {
        return QuantityAnalysis::skipped(n, "an age quartile is empty".into());
    }
    let kw = match kruskal_wallis(&by_quartile) {
        Ok(k) => k,
        Err(e) => return QuantityAnalysis::skipped(n, e.to_string()),
    };
    let mut pairwise = Vec::with_capacity(6);
    for a in 0..4 {
        for b in a + 1..4 {
            match mann_whitney_u(&by_quartile[a], &by_quartile[b]) {
                Ok(t) => pairwise.push(PairwiseResult {
                    quartiles: [a + 1, b + 1],
                    u: t.statistic,
                    p_value: t.p_value,
                    significant: bonferroni_significant(t.p_value),
                }),
                Err(e) => return QuantityAnalysis::skipped(n, e.to_string()),
            }
        }
    }
    QuantityAnalysis {
        n,
        skipped: None,
        spearman: Some(SpearmanResult {
            r_s: rho.r,
            p_value: rho.p_value,
            significant: bonferroni_significant(rho.p_value),
        }),
        age_quartiles: Some(scheme),
        kruskal_wallis: Some(KruskalResult {
            h: kw.statistic,
            p_value: kw.p_value,
            significant: bonferroni_significant(kw.p_value),
            group_sizes: kw.n,
        }),
        pairwise,
    }
}

/// Run the aging tests for every structure on its valid records. Records
/// without a finite age are ignored.
pub fn aging_analysis(records: &[CohortRecord], registry: &StructureRegistry) -> Result<AgingReport> {
    aging_analysis_with(records, registry, Execution::default())
}

pub fn aging_analysis_with(
    records: &[CohortRecord],
    registry: &StructureRegistry,
    exec: Execution,
) -> Result<AgingReport> {
    if let Some(r) = records.iter().find(|r| r.measurements.len() != NUM_STRUCTURES) {
        return Err(Error::invalid(format!(
            "{}: expected {NUM_STRUCTURES} measurements, got {}",
            r.patient_id,
            r.measurements.len()
        )));
    }
    let mut sorted: Vec<&CohortRecord> = records.iter().filter(|r| r.age.is_finite()).collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let structures = map_slice(exec, registry.entries(), |s| {
        let mut ages = Vec::new();
        let mut volumes = Vec::new();
        let mut hu = Vec::new();
        for r in &sorted {
            let m = r.measurement(s.id);
            if m.valid {
                ages.push(r.age);
                volumes.push(m.volume_ml);
                hu.push(m.mean_hu.unwrap_or(f64::NAN));
            }
        }
        StructureAging {
            id: s.id,
            name: s.name.clone(),
            volume: analyse(&ages, &volumes),
            attenuation: analyse(&ages, &hu),
        }
    });
    Ok(AgingReport {
        n_records: records.len(),
        significance_threshold: BONFERRONI_ALPHA,
        structures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn record(volumes: &[(u16, f64)]) -> CohortRecord {
        let mut m = vec![
            Measurement {
                volume_ml: 0.0,
                mean_hu: None,
                valid: false
            };
            NUM_STRUCTURES
        ];
        for &(id, v) in volumes {
            m[id as usize - 1] = Measurement {
                volume_ml: v,
                mean_hu: Some(0.0),
                valid: false,
            };
        }
        CohortRecord {
            patient_id: "p".into(),
            age: 50.0,
            sex: Sex::Unknown,
            measurements: m,
        }
    }

    #[test]
    fn volume_of_thousand_voxels() {
        let g = Grid::axis_aligned([10, 10, 10], [1.5; 3]).unwrap();
        let map = LabelMap::new(g.clone(), vec![7; 1000]).unwrap();
        assert!((structure_volume(&map, 7) - 3.375).abs() < 1e-12);
        assert_eq!(structure_volume(&map, 8), 0.0);
    }

    #[test]
    fn mean_hu_halves() {
        let g = Grid::axis_aligned([4, 1, 1], [1.0; 3]).unwrap();
        let ct = Volume3D::new(g.clone(), vec![0.0, 0.0, 100.0, 100.0]).unwrap();
        let map = LabelMap::new(g, vec![3, 3, 3, 3]).unwrap();
        assert_eq!(structure_mean_hu(&ct, &map, 3).unwrap(), Some(50.0));
        assert_eq!(structure_mean_hu(&ct, &map, 4).unwrap(), None);
    }

    #[test]
    fn cutoffs_are_strict() {
        let reg = StructureRegistry::global();
        let spleen = reg.lookup("spleen").unwrap().id;
        let gall = reg.lookup("gallbladder").unwrap().id;
        let r = plausibility_filter(&record(&[(spleen, 39.0), (gall, 0.5)]), reg);
        assert!(!r.measurement(spleen).valid);
        assert!(!r.measurement(gall).valid);
        let r = plausibility_filter(&record(&[(spleen, 40.0), (gall, 1.0)]), reg);
        assert!(r.measurement(spleen).valid);
        assert!(r.measurement(gall).valid);
        assert_eq!(plausibility_filter(&r, reg), r);
    }

    #[test]
    fn sex_parsing() {
        assert_eq!("F".parse::<Sex>().unwrap(), Sex::Female);
        assert_eq!("male".parse::<Sex>().unwrap(), Sex::Male);
        assert_eq!("".parse::<Sex>().unwrap(), Sex::Unknown);
        assert!("x".parse::<Sex>().is_err());
    }

    #[test]
    fn constant_volume_is_skipped() {
        let reg = StructureRegistry::global();
        let spleen = reg.lookup("spleen").unwrap().id;
        let recs: Vec<CohortRecord> = (0..10)
            .map(|i| {
                let mut r = plausibility_filter(&record(&[(spleen, 100.0)]), reg);
                r.patient_id = format!("p{i}");
                r.age = 20.0 + i as f64;
                r.measurements[spleen as usize - 1].mean_hu = Some(i as f64);
                r
            })
            .collect();
        let rep = aging_analysis(&recs, reg).unwrap();
        let s = rep.get(spleen).unwrap();
        assert!(s.volume.skipped.as_deref().unwrap().contains("undefined"));
        assert_eq!(s.attenuation.n, 10);
        assert_eq!(s.attenuation.spearman.as_ref().unwrap().r_s, 1.0);
        assert_eq!(s.attenuation.pairwise.len(), 6);
        assert!(rep.get(1).unwrap().volume.skipped.is_some());
    }
}
