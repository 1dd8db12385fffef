//! Evaluation reports and their JSON, CSV and console renderings.
//!
//! JSON keeps full-precision fractions and adds percent strings rounded to
//! one decimal under `display`. CSV rows carry fractions rounded to four
//! decimals. Output bytes depend only on the report.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::dataset::DatasetEval;
use crate::metrics::{finalize, Aggregate, ClassValues, EvalOptions, MetricBlock, PartUniverse, SigReport};
use crate::spec::DatasetSpec;

/// A named value of a confusion-matrix metric.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedValue {
    pub label: u32,
    pub name: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedValues {
    pub classes: Vec<NamedValue>,
    pub mean: Option<f64>,
}

/// Finalized scores of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub spec_name: String,
    pub spec_version: Option<String>,
    pub images: usize,
    pub options: EvalOptions,
    pub partpq: MetricBlock,
    pub pq: MetricBlock,
    pub scene_miou: NamedValues,
    pub part_miou: NamedValues,
    pub scene_mpa: NamedValues,
}

fn name_values(values: ClassValues, name: impl Fn(u32) -> String) -> NamedValues {
    NamedValues {
        classes: values
            .classes
            .into_iter()
            .map(|v| NamedValue { label: v.label, name: name(v.label), value: v.value })
            .collect(),
        mean: values.mean,
    }
}

impl EvalReport {
    pub fn new(eval: &DatasetEval, spec: &DatasetSpec, options: &EvalOptions) -> Self {
        let scene_name = |l: u32| spec.class(l as u16).map_or_else(String::new, |c| c.name.clone());
        let part_name = |l: u32| {
            let (sid, pid) = ((l / 100) as u16, (l % 100) as u8);
            spec.class(sid)
                .and_then(|c| c.part(pid).map(|p| format!("{}-{}", c.name, p.name)))
                .unwrap_or_default()
        };
        Self {
            spec_name: spec.name().to_string(),
            spec_version: spec.version().map(str::to_string),
            images: eval.images,
            options: *options,
            partpq: finalize(&eval.totals.partpq, spec),
            pq: finalize(&eval.totals.pq, spec),
            scene_miou: name_values(eval.totals.scene.iou(), scene_name),
            part_miou: name_values(eval.totals.parts.iou(), part_name),
            scene_mpa: name_values(eval.totals.scene.pixel_accuracy(None), scene_name),
        }
    }
}

/// `v` as a percentage with one decimal, or `None`.
pub fn percent(v: Option<f64>) -> Value {
    match v {
        Some(v) => Value::String(format!("{:.1}", v * 100.0)),
        None => Value::Null,
    }
}

fn num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |v| json!(v))
}

fn block_json(block: &MetricBlock, prefix: &str) -> Value {
    let keys = [format!("{prefix}pq"), format!("{prefix}sq"), format!("{prefix}rq")];
    let scores = |pq, sq, rq| {
        let mut m = Map::new();
        let mut display = Map::new();
        for (k, v) in keys.iter().zip([pq, sq, rq]) {
            m.insert(k.clone(), num(v));
            display.insert(k.clone(), percent(v));
        }
        (m, display)
    };
    let classes: Vec<Value> = block
        .classes
        .iter()
        .map(|c| {
            let (mut m, display) = scores(c.pq, c.sq, c.rq);
            m.insert("sid".into(), json!(c.sid));
            m.insert("name".into(), json!(c.name));
            m.insert("kind".into(), json!(c.kind));
            m.insert("has_parts".into(), json!(c.has_parts));
            m.insert("tp".into(), json!(c.tp));
            m.insert("fp".into(), json!(c.fp));
            m.insert("fn".into(), json!(c.fn_));
            m.insert("defined".into(), json!(c.defined));
            m.insert("display".into(), Value::Object(display));
            Value::Object(m)
        })
        .collect();
    let mut aggregates = Map::new();
    for (name, a) in block.aggregates.rows() {
        let (mut m, display) = scores(a.pq, a.sq, a.rq);
        m.insert("classes".into(), json!(a.classes));
        m.insert("display".into(), Value::Object(display));
        aggregates.insert(name.into(), Value::Object(m));
    }
    json!({ "classes": classes, "aggregates": aggregates })
}

fn values_json(v: &NamedValues, key: &str) -> Value {
    let classes: Vec<Value> = v
        .classes
        .iter()
        .map(|c| json!({ "label": c.label, "name": c.name, key: num(c.value), "display": percent(c.value) }))
        .collect();
    json!({ "classes": classes, "mean": num(v.mean), "display": percent(v.mean) })
}

pub fn report_json(r: &EvalReport) -> String {
    let universe = match r.options.part_universe {
        PartUniverse::Present => "present",
        PartUniverse::All => "all",
    };
    let v = json!({
        "spec": r.spec_name,
        "spec_version": r.spec_version,
        "images": r.images,
        "options": { "part_universe": universe, "require_parts": r.options.require_parts },
        "partpq": block_json(&r.partpq, "part"),
        "pq": block_json(&r.pq, ""),
        "miou": { "scene": values_json(&r.scene_miou, "iou"), "parts": values_json(&r.part_miou, "iou") },
        "mpa": { "scene": values_json(&r.scene_mpa, "accuracy") },
    });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

/// The panoptic block alone, for plain PQ runs.
pub fn pq_report_json(r: &EvalReport) -> String {
    let v = json!({
        "spec": r.spec_name,
        "spec_version": r.spec_version,
        "images": r.images,
        "pq": block_json(&r.pq, ""),
    });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

fn frac(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per evaluated class, then `All`, `P`, `NP`, `Things`, `Stuff`.
pub fn report_csv(r: &EvalReport) -> String {
    let mut out = String::from("row,sid,name,partpq,partsq,partrq,pq,sq,rq,tp,fp,fn\n");
    for (c, p) in r.partpq.classes.iter().zip(&r.pq.classes) {
        let _ = writeln!(
            out,
            "class,{},{},{},{},{},{},{},{},{},{},{}",
            c.sid,
            csv_field(&c.name),
            frac(c.pq),
            frac(c.sq),
            frac(c.rq),
            frac(p.pq),
            frac(p.sq),
            frac(p.rq),
            c.tp,
            c.fp,
            c.fn_
        );
    }
    for ((name, a), (_, b)) in r.partpq.aggregates.rows().into_iter().zip(r.pq.aggregates.rows()) {
        let _ = writeln!(
            out,
            "{name},,,{},{},{},{},{},{},,,",
            frac(a.pq),
            frac(a.sq),
            frac(a.rq),
            frac(b.pq),
            frac(b.sq),
            frac(b.rq)
        );
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.1}", v * 100.0))
}

/// Aggregate table in the column layout `PartPQ All/P/NP | PQ All/P/NP`.
pub fn summary_table(r: &EvalReport, per_class: bool) -> String {
    let mut out = String::new();
    let agg = |a: &Aggregate| pct(a.pq);
    let (p, q) = (&r.partpq.aggregates, &r.pq.aggregates);
    let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}  |{:>8}{:>8}{:>8}", "", "PartPQ", "P", "NP", "PQ", "P", "NP");
    let _ = writeln!(
        out,
        "{:<24}{:>8}{:>8}{:>8}  |{:>8}{:>8}{:>8}",
        format!("{} ({} images)", r.spec_name, r.images),
        agg(&p.all),
        agg(&p.parts),
        agg(&p.no_parts),
        agg(&q.all),
        agg(&q.parts),
        agg(&q.no_parts)
    );
    let _ = writeln!(out, "mIOU {}  part mIOU {}  mPA {}", pct(r.scene_miou.mean), pct(r.part_miou.mean), pct(r.scene_mpa.mean));
    if per_class {
        let _ = writeln!(
            out,
            "\n{:<20}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>7}{:>7}{:>7}",
            "class", "PartPQ", "PartSQ", "PartRQ", "PQ", "SQ", "RQ", "TP", "FP", "FN"
        );
        for (c, pc) in r.partpq.classes.iter().zip(&r.pq.classes) {
            let _ = writeln!(
                out,
                "{:<20}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}{:>7}{:>7}{:>7}",
                c.name,
                pct(c.pq),
                pct(c.sq),
                pct(c.rq),
                pct(pc.pq),
                pct(pc.sq),
                pct(pc.rq),
                c.tp,
                c.fp,
                c.fn_
            );
        }
    }
    out
}

pub fn sig_json(r: &SigReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("sig report serializes");
    s.push('\n');
    s
}

pub fn sig_table(r: &SigReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12}{:>8}{:>8}", "method", "mPA", "mIOU");
    for (name, m) in [("A", &r.a), ("B", &r.b)] {
        let _ = writeln!(out, "{:<12}{:>8}{:>8}", name, pct(m.mpa), pct(m.miou));
    }
    let f = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.1}"));
    let _ = writeln!(out, "mSIG A->B {}  mSIG B->A {}", f(r.a_to_b.msig), f(r.b_to_a.msig));
    for c in &r.a_to_b.classes {
        let _ = writeln!(out, "  {:<18}{:>8}", c.name, f(c.sig));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `csv` for a `.csv` path, JSON otherwise.
    pub fn for_path(path: &Path) -> Self {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            ReportFormat::Csv
        } else {
            ReportFormat::Json
        }
    }
}

pub fn write_report(r: &EvalReport, path: &Path, format: ReportFormat) -> std::io::Result<()> {
    let text = match format {
        ReportFormat::Json => report_json(r),
        ReportFormat::Csv => report_csv(r),
    };
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetEval;
    use crate::metrics::{evaluate_image, ClassAccumulator};
    use crate::LabelMap;
    use crate::LabelTriple;

    fn one_class_report() -> EvalReport {
        let spec = DatasetSpec::cityscapes_panoptic_parts();
        let map = LabelMap::filled(4, 4, LabelTriple::stuff(7)).unwrap();
        let mut totals = evaluate_image(&map, &map, &spec, &EvalOptions::default()).unwrap();
        let i = spec.class_index(26).unwrap();
        totals.partpq.classes[i] = ClassAccumulator { sid: 26, tp: 381, fp: 100, fn_: 138, sum_iou: 0.578 * 381.0 };
        EvalReport::new(&DatasetEval { images: 1, totals }, &spec, &EvalOptions::default())
    }

    #[test]
    fn json_schema_and_determinism() {
        let r = one_class_report();
        let a = report_json(&r);
        assert_eq!(a, report_json(&r));
        let v: Value = serde_json::from_str(&a).unwrap();
        let road = &v["partpq"]["classes"].as_array().unwrap().iter().find(|c| c["sid"] == 7).unwrap();
        for key in ["partpq", "partsq", "partrq", "tp", "fp", "fn"] {
            assert!(road.get(key).is_some(), "{key}");
        }
        assert_eq!(road["display"]["partpq"], "100.0");
        assert_eq!(v["partpq"]["aggregates"]["All"]["classes"], 2);
    }

    #[test]
    fn csv_rows() {
        let r = one_class_report();
        let csv = report_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + r.partpq.classes.len() + 5);
        assert!(lines.iter().any(|l| l.starts_with("class,26,car,0.4404,0.5780,0.7620")), "{csv}");
        for name in ["All", "P", "NP", "Things", "Stuff"] {
            assert!(lines.iter().any(|l| l.starts_with(&format!("{name},"))));
        }
    }
}
