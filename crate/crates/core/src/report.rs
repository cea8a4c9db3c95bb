//! Deterministic JSON output.
//!
//! Floats are written with 17 significant digits, keys keep insertion order,
//! and non-finite or absent values become `null`, so identical inputs give
//! byte-identical files.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::metrics::{AggregateReport, CaseMetrics, MetricSummary};
use crate::taxonomy::StructureRegistry;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Label of the overall-score convention written into evaluation reports.
pub const AVERAGING: &str = "per-case mean";

/// Format a finite float with 17 significant digits, positional for
/// moderate exponents and scientific otherwise.
pub fn format_f64(v: f64) -> String {
    let sci = format!("{v:.16e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("exponent");
    if (-5..17).contains(&exp) {
        format!("{v:.prec$}", prec = (16 - exp).max(1) as usize)
    } else {
        sci
    }
}

struct Fixed17<'a>(PrettyFormatter<'a>);

impl Formatter for Fixed17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with fixed float formatting and a trailing newline.
pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fixed17(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Invariant(format!("JSON serialization failed: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn metric_fields(out: &mut Map<String, Value>, prefix: &str, m: &MetricSummary) {
    out.insert(prefix.into(), opt(m.mean));
    out.insert(format!("{prefix}_ci_lower"), opt(m.ci.map(|c| c.lower)));
    out.insert(format!("{prefix}_ci_upper"), opt(m.ci.map(|c| c.upper)));
    out.insert(format!("n_{prefix}"), Value::from(m.n));
}

/// Evaluation report: `tool_version`, `config`, one object per structure
/// keyed by name in registry order, `overall`, and per-case means.
pub fn evaluation_report(
    agg: &AggregateReport,
    cases: &[CaseMetrics],
    registry: &StructureRegistry,
    config: Value,
    level: f64,
    iterations: usize,
) -> Result<Value> {
    let mut root = Map::new();
    root.insert("tool_version".into(), Value::from(TOOL_VERSION));
    root.insert("config".into(), config);
    for s in &agg.structures {
        let name = &registry.by_id(s.id)?.name;
        let mut o = Map::new();
        o.insert("id".into(), Value::from(s.id));
        metric_fields(&mut o, "dice", &s.dice);
        metric_fields(&mut o, "nsd", &s.nsd);
        root.insert(name.clone(), Value::Object(o));
    }
    let mut overall = Map::new();
    metric_fields(&mut overall, "dice", &agg.overall_dice);
    metric_fields(&mut overall, "nsd", &agg.overall_nsd);
    overall.insert("n_cases".into(), Value::from(agg.n_cases));
    overall.insert("averaging".into(), Value::from(AVERAGING));
    overall.insert("ci_level".into(), Value::from(level));
    overall.insert("bootstrap_iterations".into(), Value::from(iterations));
    root.insert("overall".into(), Value::Object(overall));
    let mut sorted: Vec<&CaseMetrics> = cases.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let per_case: Vec<Value> = sorted
        .iter()
        .map(|c| json!({"case_id": c.case_id, "mean_dice": opt(c.mean_dice()), "mean_nsd": opt(c.mean_nsd())}))
        .collect();
    root.insert("cases".into(), Value::Array(per_case));
    Ok(Value::Object(root))
}
