use std::io::Write;

use ctseg_core::morphometry::*;
use ctseg_core::par::Execution;
use ctseg_core::phantom::*;
use ctseg_core::volio::{save_labelmap, save_volume};
use ctseg_core::StructureRegistry;

fn reg() -> &'static StructureRegistry {
    StructureRegistry::global()
}

fn sphere_spec(spacing: f64, noise_sd: f64) -> PhantomSpec {
    let n = (48.0 / spacing).round() as usize;
    PhantomSpec {
        grid: GridSpec { dims: [n; 3], spacing_mm: [spacing; 3], origin_mm: [0.0; 3] },
        shapes: vec![
            Shape {
                structure: StructureKey::Name("liver".into()),
                geometry: Geometry::Sphere { radius_mm: 14.0 },
                center_mm: [24.3, 23.8, 24.1],
                hu: 55.0,
            },
            Shape {
                structure: StructureKey::Id(1),
                geometry: Geometry::Box { size_mm: [6.0, 6.0, 6.0] },
                center_mm: [5.0, 5.0, 5.0],
                hu: -40.0,
            },
        ],
        noise_sd,
        seed: 5,
    }
}

fn sphere_error(spacing: f64) -> f64 {
    let p = generate(&sphere_spec(spacing, 0.0), reg()).unwrap();
    let liver = reg().lookup("liver").unwrap().id;
    let measured = structure_volume(&p.labels, liver);
    let t = &p.truth[0];
    assert_eq!(measured, t.rasterized_volume_ml);
    (measured - t.analytic_volume_ml).abs() / t.analytic_volume_ml
}

#[test]
fn sphere_volume_converges() {
    let e3 = sphere_error(3.0);
    let e15 = sphere_error(1.5);
    let e075 = sphere_error(0.75);
    assert!(e15 < 0.03, "{e15}");
    assert!(e075 < e15 && e15 < e3, "{e3} {e15} {e075}");
}

#[test]
fn mean_hu_exact_without_noise() {
    let p = generate(&sphere_spec(1.5, 0.0), reg()).unwrap();
    for t in &p.truth {
        assert_eq!(structure_mean_hu(&p.ct, &p.labels, t.id).unwrap(), Some(t.hu));
    }
    assert_eq!(structure_mean_hu(&p.ct, &p.labels, 3).unwrap(), None);
    assert!(p.ct.data().iter().zip(p.labels.data()).all(|(&v, &l)| l != 0 || v == -1024.0));
}

#[test]
fn noise_is_reproducible_and_centred() {
    let spec = sphere_spec(1.5, 20.0);
    let a = generate_with(&spec, reg(), Execution::Sequential).unwrap();
    let b = generate_with(&spec, reg(), Execution::Parallel).unwrap();
    assert_eq!(a, b);
    let liver = reg().lookup("liver").unwrap().id;
    let m = structure_mean_hu(&a.ct, &a.labels, liver).unwrap().unwrap();
    let n = a.truth[0].voxel_count as f64;
    assert!((m - 55.0).abs() < 4.0 * 20.0 / n.sqrt());
}

#[test]
fn extract_record_applies_cutoffs() {
    let p = generate(&sphere_spec(1.5, 0.0), reg()).unwrap();
    let rec = extract_record("p1", 61.0, Sex::Female, &p.ct, &p.labels, reg()).unwrap();
    let liver = reg().lookup("liver").unwrap().id;
    // Liver cutoff is 100 ml; an 11.5 ml sphere is implausible.
    assert!(!rec.measurement(liver).valid);
    assert!(rec.measurement(liver).volume_ml > 10.0);
    assert!(!rec.measurement(1).valid);
    assert_eq!(rec.measurement(1).mean_hu, Some(-40.0));
    assert!(!rec.measurement(2).valid && rec.measurement(2).mean_hu.is_none());
}

#[test]
fn cohort_extract_skips_bad_rows_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(&sphere_spec(3.0, 0.0), reg()).unwrap();
    save_volume(&p.ct, dir.path().join("ct.nii.gz")).unwrap();
    save_labelmap(&p.labels, dir.path().join("seg.nii.gz")).unwrap();
    std::fs::write(dir.path().join("broken.nii.gz"), b"garbage").unwrap();
    let manifest = dir.path().join("manifest.csv");
    let mut f = std::fs::File::create(&manifest).unwrap();
    writeln!(f, "patient_id,ct_path,seg_path,age,sex").unwrap();
    writeln!(f, "b,ct.nii.gz,seg.nii.gz,70,m").unwrap();
    writeln!(f, "a,ct.nii.gz,seg.nii.gz,40,F").unwrap();
    writeln!(f, "c,ct.nii.gz,broken.nii.gz,50,f").unwrap();
    writeln!(f, "d,ct.nii.gz,seg.nii.gz,,u").unwrap();
    drop(f);
    let cases = read_manifest(&manifest).unwrap();
    let out = cohort_extract(&cases, reg(), Execution::default()).unwrap();
    let ids: Vec<&str> = out.records.iter().map(|r| r.patient_id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
    assert_eq!(out.records[0].sex, Sex::Female);
    let skipped: Vec<&str> = out.skipped.iter().map(|s| s.patient_id.as_str()).collect();
    assert_eq!(skipped, ["c", "d"]);
    let csv = cohort_csv(&out.records, reg()).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 3 * 104);

    let mut dup = cases.clone();
    dup[1].patient_id = "b".into();
    assert!(cohort_extract(&dup, reg(), Execution::default()).is_err());
}

pub fn trend_cohort(n: usize, seed: u64, hu_slope: f64) -> CohortSpec {
    CohortSpec {
        n,
        grid: GridSpec { dims: [24; 3], spacing_mm: [2.0; 3], origin_mm: [0.0; 3] },
        trends: vec![Trend {
            structure: StructureKey::Name("gallbladder".into()),
            center_mm: [23.0; 3],
            volume_ml: 4.0,
            volume_slope_ml_per_year: 0.0,
            volume_sd_ml: 0.4,
            hu: 40.0,
            hu_slope_per_year: hu_slope,
            hu_sd: 3.0,
        }],
        noise_sd: 0.0,
        seed,
    }
}

fn analyse(spec: &CohortSpec) -> AgingReport {
    let records: Vec<CohortRecord> = generate_cohort(spec, reg())
        .unwrap()
        .iter()
        .map(|m| {
            let p = generate(&m.spec, reg()).unwrap();
            extract_record(&m.patient_id, m.age, m.sex, &p.ct, &p.labels, reg()).unwrap()
        })
        .collect();
    aging_analysis(&records, reg()).unwrap()
}

#[test]
fn planted_attenuation_trend_is_found() {
    let rep = analyse(&trend_cohort(120, 1, -0.5));
    let gb = rep.get(reg().lookup("gallbladder").unwrap().id).unwrap();
    let s = gb.attenuation.spearman.as_ref().unwrap();
    assert!(s.r_s < 0.0 && s.significant, "{s:?}");
    assert!(gb.attenuation.kruskal_wallis.as_ref().unwrap().significant);
    assert!(!gb.volume.spearman.as_ref().unwrap().significant);
    // Structures missing from every phantom are skipped, not tested.
    assert!(rep.get(1).unwrap().volume.skipped.is_some());
}

#[test]
fn null_cohort_has_no_flags() {
    for seed in 0..3 {
        let rep = analyse(&trend_cohort(120, seed, 0.0));
        for s in &rep.structures {
            for q in [&s.volume, &s.attenuation] {
                assert!(!q.spearman.as_ref().is_some_and(|r| r.significant), "seed {seed}");
                assert!(!q.kruskal_wallis.as_ref().is_some_and(|r| r.significant), "seed {seed}");
            }
        }
    }
}

#[test]
fn cohort_is_seeded() {
    let a = generate_cohort(&trend_cohort(10, 4, -0.5), reg()).unwrap();
    let b = generate_cohort(&trend_cohort(10, 4, -0.5), reg()).unwrap();
    let c = generate_cohort(&trend_cohort(10, 5, -0.5), reg()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|m| (18.0..100.0).contains(&m.age)));
    assert_eq!(a[9].patient_id, "case10");
    assert!(generate_cohort(&trend_cohort(7, 4, 0.0), reg()).is_err());
}
