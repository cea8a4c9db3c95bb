use std::fs;
use std::path::{Path, PathBuf};

use ctseg_core::labelops::{split_rib_instances, RibSplitOptions, Side};
use ctseg_core::metrics::{aggregate, compare_case_means, evaluate_case, CaseMeans, CaseMetrics, Subset};
use ctseg_core::morphometry::{
    aging_analysis, cohort_csv, cohort_extract, extract_record, read_manifest, CohortRecord, Sex,
};
use ctseg_core::par::{map_slice, Execution};
use ctseg_core::phantom::{generate, generate_cohort, CohortSpec, Phantom, PhantomSpec};
use ctseg_core::report::{evaluation_report, to_json_bytes, TOOL_VERSION};
use ctseg_core::resample::{build_target_grid, resample_labels, resample_volume, Interpolation};
use ctseg_core::stats::{BootstrapConfig, DEFAULT_LEVEL};
use ctseg_core::volio::{self, DataType};
use ctseg_core::{BinaryMask, Error, Result, StructureRegistry};
use serde_json::{json, Map, Value};

use crate::{
    CohortArgs, CompareArgs, DumpFormat, EvaluateArgs, Globals, KindArg, ModeArg, MorphArgs, Outcome,
    PhantomArgs, ResampleArgs, SideArg, SplitRibsArgs, SubsetArg,
};

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    volio::write_atomic(path, &to_json_bytes(value)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_value<T: serde::Serialize + ?Sized>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Invariant(format!("serialization: {e}")))
}

pub fn resample(a: &ResampleArgs) -> Result<Outcome> {
    let header = volio::read_header(&a.input)?;
    let labels = match a.kind {
        KindArg::Auto => matches!(header.datatype, DataType::U8 | DataType::U16),
        KindArg::Labels => true,
        KindArg::Scalar => false,
    };
    let mode = a.mode.unwrap_or(if labels { ModeArg::Nearest } else { ModeArg::Trilinear });
    let (src_dims, dst_dims) = if labels {
        if mode != ModeArg::Nearest {
            return Err(Error::invalid("label maps can only be resampled with --mode nearest"));
        }
        let src = volio::load_labels(&a.input)?;
        let target = build_target_grid(src.grid(), a.spacing)?.into_grid();
        let out = resample_labels(&src, &target)?;
        volio::save_labelmap(&out, &a.out)?;
        (src.grid().dims(), target.dims())
    } else {
        let src = volio::load_scalar(&a.input)?;
        let target = build_target_grid(src.grid(), a.spacing)?.into_grid();
        let interp = match mode {
            ModeArg::Trilinear => Interpolation::Trilinear,
            ModeArg::Nearest => Interpolation::Nearest,
        };
        let out = resample_volume(&src, &target, interp)?;
        volio::save_volume(&out, &a.out)?;
        (src.grid().dims(), target.dims())
    };
    let kind = if labels { "labels" } else { "scalar" };
    let mode = format!("{mode:?}").to_lowercase();
    Ok(Outcome {
        lines: vec![format!(
            "resampled {kind} {src_dims:?} -> {dst_dims:?} at {} mm ({mode}) into {}",
            a.spacing,
            show(&a.out)
        )],
        summary: json!({
            "input": show(&a.input),
            "output": show(&a.out),
            "kind": kind,
            "mode": mode,
            "spacing_mm": a.spacing,
            "source_dims": src_dims,
            "target_dims": dst_dims,
        }),
    })
}

pub fn split_ribs(a: &SplitRibsArgs) -> Result<Outcome> {
    let registry = StructureRegistry::global();
    let map = volio::load_labels(&a.input)?;
    let mask = BinaryMask::new(map.grid().clone(), map.data().iter().map(|&v| v != 0).collect())?;
    let side = match a.side {
        SideArg::Left => Side::Left,
        SideArg::Right => Side::Right,
    };
    let split = split_rib_instances(&mask, side, RibSplitOptions::default())?;
    let ids = split.structure_ids(registry)?;
    create_dir(&a.out_dir)?;
    let voxel_ml = map.grid().voxel_volume_mm3() / 1000.0;
    let mut lines = Vec::new();
    let mut ribs = Vec::new();
    for (rib, id) in split.ribs.iter().zip(ids) {
        let file = a.out_dir.join(format!("{}.nii.gz", registry.by_id(id)?.file_stem()));
        volio::save_labelmap(&rib.mask.to_labelmap(1)?, &file)?;
        let voxels = rib.mask.count();
        lines.push(format!("rib {} ({} voxels) -> {}", rib.number, voxels, show(&file)));
        ribs.push(json!({
            "number": rib.number,
            "structure_id": id,
            "voxels": voxels,
            "volume_ml": voxels as f64 * voxel_ml,
            "centroid_world_mm": rib.centroid_world,
            "file": show(&file),
        }));
    }
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    Ok(Outcome {
        lines,
        summary: json!({"side": side.as_str(), "ribs": ribs, "warnings": split.warnings}),
    })
}

/// `(case_id, file name)` for every `.nii` / `.nii.gz` file in `dir`, sorted.
fn list_cases(dir: &Path) -> Result<Vec<(String, String)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut cases = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let stem = name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii"));
        if let Some(stem) = stem {
            if entry.path().is_file() {
                cases.push((stem.to_string(), name.clone()));
            }
        }
    }
    cases.sort();
    if let Some(w) = cases.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("case {:?} appears twice in {}", w[0].0, show(dir))));
    }
    if cases.is_empty() {
        return Err(Error::invalid(format!("no .nii or .nii.gz files in {}", show(dir))));
    }
    Ok(cases)
}

fn find_prediction(dir: &Path, case_id: &str) -> Result<PathBuf> {
    for ext in ["nii.gz", "nii"] {
        let p = dir.join(format!("{case_id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::invalid(format!("no prediction for case {case_id:?} in {}", show(dir))))
}

fn evaluate_one(a: &EvaluateArgs, case_id: &str, file: &str, ids: &[u16]) -> Result<CaseMetrics> {
    let gt = volio::load_labels(a.gt_dir.join(file))?;
    let pred = volio::load_labels(find_prediction(&a.pred_dir, case_id)?)?;
    let pred = if pred.grid().matches(gt.grid()) {
        pred
    } else {
        resample_labels(&pred, gt.grid())?
    };
    evaluate_case(case_id, &gt, &pred, ids, a.tau)
}

pub fn evaluate(a: &EvaluateArgs, g: &Globals) -> Result<Outcome> {
    let registry = StructureRegistry::global();
    if a.iterations == 0 {
        return Err(Error::invalid("--iterations must be at least 1"));
    }
    let subset = match a.subset {
        SubsetArg::All => Subset::All,
        SubsetArg::Btcv => Subset::Btcv,
    };
    let ids = subset.ids(registry);
    let cases = list_cases(&a.gt_dir)?;
    let results = map_slice(Execution::default(), &cases, |(id, file)| evaluate_one(a, id, file, &ids));
    let metrics: Vec<CaseMetrics> = results.into_iter().collect::<Result<_>>()?;
    let cfg = BootstrapConfig {
        iterations: a.iterations,
        level: DEFAULT_LEVEL,
        seed: g.seed(),
    };
    let agg = aggregate(&metrics, &cfg)?;
    let config = json!({
        "gt_dir": show(&a.gt_dir),
        "pred_dir": show(&a.pred_dir),
        "tau_mm": a.tau,
        "subset": subset.as_str(),
        "bootstrap_iterations": a.iterations,
        "ci_level": DEFAULT_LEVEL,
        "seed": g.seed(),
    });
    let report = evaluation_report(&agg, &metrics, registry, config, DEFAULT_LEVEL, a.iterations)?;
    write_json(&a.out, &report)?;
    let overall = &report["overall"];
    let fmt = |v: &Value| v.as_f64().map_or("n/a".to_string(), |x| format!("{x:.4}"));
    Ok(Outcome {
        lines: vec![
            format!("{} cases, report written to {}", agg.n_cases, show(&a.out)),
            format!(
                "overall dice {} [{}, {}]",
                fmt(&overall["dice"]),
                fmt(&overall["dice_ci_lower"]),
                fmt(&overall["dice_ci_upper"])
            ),
            format!(
                "overall nsd  {} [{}, {}]",
                fmt(&overall["nsd"]),
                fmt(&overall["nsd_ci_lower"]),
                fmt(&overall["nsd_ci_upper"])
            ),
        ],
        summary: json!({"report": show(&a.out), "overall": overall.clone()}),
    })
}

fn read_case_means(path: &Path) -> Result<Vec<CaseMeans>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let report: Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::invalid(format!("{}: {e}", show(path))))?;
    let cases = report["cases"]
        .as_array()
        .ok_or_else(|| Error::invalid(format!("{}: no \"cases\" array; not an evaluation report", show(path))))?;
    cases
        .iter()
        .map(|c| {
            let case_id = c["case_id"]
                .as_str()
                .ok_or_else(|| Error::invalid(format!("{}: case without case_id", show(path))))?;
            Ok(CaseMeans {
                case_id: case_id.to_string(),
                dice: c["mean_dice"].as_f64(),
                nsd: c["mean_nsd"].as_f64(),
            })
        })
        .collect()
}

pub fn compare(a: &CompareArgs) -> Result<Outcome> {
    let ra = read_case_means(&a.a)?;
    let rb = read_case_means(&a.b)?;
    let cmp = compare_case_means(&ra, &rb)?;
    let summary = json!({
        "tool_version": TOOL_VERSION,
        "a": show(&a.a),
        "b": show(&a.b),
        "test": "two-sided Wilcoxon signed-rank on per-case means",
        "dice": to_value(&cmp.dice)?,
        "nsd": to_value(&cmp.nsd)?,
    });
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    let line = |name: &str, c: &ctseg_core::metrics::PairedComparison| {
        format!(
            "{name}: n = {}, W+ = {}, p = {}{}",
            c.n_pairs,
            c.statistic,
            c.p_value,
            if c.significant { " (significant)" } else { "" }
        )
    };
    Ok(Outcome {
        lines: vec![line("dice", &cmp.dice), line("nsd", &cmp.nsd)],
        summary,
    })
}

fn record_json(r: &CohortRecord, registry: &StructureRegistry) -> Value {
    let mut structures = Map::new();
    for (s, m) in registry.entries().iter().zip(&r.measurements) {
        structures.insert(
            s.name.clone(),
            json!({"id": s.id, "volume_ml": m.volume_ml, "mean_hu": m.mean_hu, "valid": m.valid}),
        );
    }
    json!({
        "tool_version": TOOL_VERSION,
        "patient_id": r.patient_id,
        "age": if r.age.is_finite() { json!(r.age) } else { Value::Null },
        "sex": r.sex.as_str(),
        "structures": structures,
    })
}

fn file_stem(p: &Path) -> String {
    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(&name)
        .to_string()
}

pub fn morph(a: &MorphArgs) -> Result<Outcome> {
    let registry = StructureRegistry::global();
    let sex: Sex = a.sex.parse()?;
    let ct = volio::load_scalar(&a.ct)?;
    let seg = volio::load_labels(&a.seg)?;
    let id = a.patient_id.clone().unwrap_or_else(|| file_stem(&a.ct));
    let record = extract_record(&id, a.age.unwrap_or(f64::NAN), sex, &ct, &seg, registry)?;
    let value = record_json(&record, registry);
    write_json(&a.out, &value)?;
    let present = record.measurements.iter().filter(|m| m.volume_ml > 0.0).count();
    let valid = record.measurements.iter().filter(|m| m.valid).count();
    Ok(Outcome {
        lines: vec![format!(
            "{id}: {present} structures present, {valid} above their plausibility cutoff; written to {}",
            show(&a.out)
        )],
        summary: json!({"output": show(&a.out), "present": present, "valid": valid}),
    })
}

pub fn cohort(a: &CohortArgs) -> Result<Outcome> {
    let registry = StructureRegistry::global();
    let cases = read_manifest(&a.manifest)?;
    let extraction = cohort_extract(&cases, registry, Execution::default())?;
    volio::write_atomic(&a.out, cohort_csv(&extraction.records, registry)?.as_bytes())?;
    let aging = aging_analysis(&extraction.records, registry)?;
    let report = json!({
        "tool_version": TOOL_VERSION,
        "config": {"manifest": show(&a.manifest)},
        "n_cases": cases.len(),
        "skipped_cases": to_value(&extraction.skipped)?,
        "aging": to_value(&aging)?,
    });
    write_json(&a.report, &report)?;
    let mut lines = vec![format!(
        "{} of {} cases extracted; table {} and report {}",
        extraction.records.len(),
        cases.len(),
        show(&a.out),
        show(&a.report)
    )];
    for s in &extraction.skipped {
        lines.push(format!("skipped {}: {}", s.patient_id, s.reason));
    }
    let mut flagged = Vec::new();
    for s in &aging.structures {
        for (q, qa) in [("volume", &s.volume), ("attenuation", &s.attenuation)] {
            if let Some(r) = qa.spearman.as_ref().filter(|r| r.significant) {
                lines.push(format!("{} {q}: r_s = {:.3}, p = {:.3e}", s.name, r.r_s, r.p_value));
                flagged.push(json!({"structure": s.name, "quantity": q, "r_s": r.r_s, "p_value": r.p_value}));
            }
        }
    }
    Ok(Outcome {
        lines,
        summary: json!({
            "table": show(&a.out),
            "report": show(&a.report),
            "n_records": extraction.records.len(),
            "n_skipped": extraction.skipped.len(),
            "significant_correlations": flagged,
        }),
    })
}

fn save_phantom(p: &Phantom, ct: &Path, seg: &Path) -> Result<()> {
    volio::save_volume(&p.ct, ct)?;
    volio::save_labelmap(&p.labels, seg)
}

pub fn phantom(a: &PhantomArgs, g: &Globals) -> Result<Outcome> {
    let registry = StructureRegistry::global();
    let text = fs::read(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let value: Value =
        serde_json::from_slice(&text).map_err(|e| Error::invalid(format!("{}: {e}", show(&a.spec))))?;
    let bad_spec = |e: serde_json::Error| Error::invalid(format!("{}: {e}", show(&a.spec)));
    if value.get("trends").is_some() {
        let mut spec: CohortSpec = serde_json::from_value(value).map_err(bad_spec)?;
        if let Some(seed) = g.seed {
            spec.seed = seed;
        }
        let members = generate_cohort(&spec, registry)?;
        create_dir(&a.out_dir)?;
        let written = map_slice(Execution::default(), &members, |m| -> Result<Value> {
            let p = generate(&m.spec, registry)?;
            let ct = format!("{}_ct.nii.gz", m.patient_id);
            let seg = format!("{}_seg.nii.gz", m.patient_id);
            save_phantom(&p, &a.out_dir.join(&ct), &a.out_dir.join(&seg))?;
            Ok(json!({
                "patient_id": m.patient_id,
                "age": m.age,
                "sex": m.sex.as_str(),
                "ct": ct,
                "seg": seg,
                "shapes": to_value(&p.truth)?,
            }))
        });
        let truth: Vec<Value> = written.into_iter().collect::<Result<_>>()?;
        let mut manifest = String::from("patient_id,ct_path,seg_path,age,sex\n");
        for (m, t) in members.iter().zip(&truth) {
            manifest.push_str(&format!(
                "{},{},{},{:?},{}\n",
                m.patient_id,
                t["ct"].as_str().unwrap_or_default(),
                t["seg"].as_str().unwrap_or_default(),
                m.age,
                m.sex
            ));
        }
        let manifest_path = a.out_dir.join("manifest.csv");
        volio::write_atomic(&manifest_path, manifest.as_bytes())?;
        let truth_path = a.out_dir.join("truth.json");
        write_json(
            &truth_path,
            &json!({"tool_version": TOOL_VERSION, "spec": to_value(&spec)?, "cases": truth}),
        )?;
        Ok(Outcome {
            lines: vec![format!(
                "{} synthetic cases written to {} (manifest {})",
                members.len(),
                show(&a.out_dir),
                show(&manifest_path)
            )],
            summary: json!({"cases": members.len(), "manifest": show(&manifest_path), "truth": show(&truth_path)}),
        })
    } else {
        let mut spec: PhantomSpec = serde_json::from_value(value).map_err(bad_spec)?;
        if let Some(seed) = g.seed {
            spec.seed = seed;
        }
        let p = generate(&spec, registry)?;
        create_dir(&a.out_dir)?;
        let ct = a.out_dir.join("ct.nii.gz");
        let seg = a.out_dir.join("seg.nii.gz");
        save_phantom(&p, &ct, &seg)?;
        let truth_path = a.out_dir.join("truth.json");
        let truth = to_value(&p.truth)?;
        write_json(
            &truth_path,
            &json!({"tool_version": TOOL_VERSION, "spec": to_value(&spec)?, "shapes": truth}),
        )?;
        let lines = p
            .truth
            .iter()
            .map(|t| {
                format!(
                    "{}: analytic {:.3} ml, rasterized {:.3} ml ({} voxels), {} HU",
                    t.name, t.analytic_volume_ml, t.rasterized_volume_ml, t.voxel_count, t.hu
                )
            })
            .collect();
        Ok(Outcome {
            lines,
            summary: json!({"ct": show(&ct), "seg": show(&seg), "truth": show(&truth_path), "shapes": truth}),
        })
    }
}

pub fn taxonomy_dump(format: DumpFormat, out: Option<&Path>) -> Result<Outcome> {
    let registry = StructureRegistry::global();
    let entries = to_value(registry.entries())?;
    let text = match format {
        DumpFormat::Csv => registry.to_csv(),
        DumpFormat::Json => String::from_utf8(to_json_bytes(&entries)?).map_err(|e| Error::Invariant(e.to_string()))?,
    };
    let lines = match out {
        Some(path) => {
            volio::write_atomic(path, text.as_bytes())?;
            vec![format!("{} structures written to {}", registry.entries().len(), show(path))]
        }
        None => text.lines().map(str::to_string).collect(),
    };
    Ok(Outcome {
        lines,
        summary: entries,
    })
}
