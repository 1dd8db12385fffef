use std::path::Path;
use std::process::{Command, Output};

use partpq_core::codec::{list_maps, read_label_map, write_label_map, MapFormat};
use partpq_core::harness::{reference_finalize, reference_fold, reference_tally, ReferenceMode, ReferenceTally};
use partpq_core::merge::PartPrediction;
use partpq_core::metrics::{EvalOptions, MetricBlock};
use partpq_core::{DatasetSpec, LabelMap, LabelTriple};
use serde_json::Value;
use tempfile::TempDir;

fn partpq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partpq")).args(args).output().expect("run partpq")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `count` synthetic pairs under `dir`.
fn synth(dir: &Path, count: usize, seed: u64) {
    let out = partpq(&[
        "--spec", "cpp", "synth", "-o", p(dir), "--count", &count.to_string(), "--seed", &seed.to_string(),
        "--min-size", "24", "--max-size", "48",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stems(dir: &Path) -> Vec<String> {
    let mut out: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.unwrap().file_name().to_str()?.strip_suffix("_sem.png").map(String::from))
        .collect();
    out.sort();
    out
}

#[test]
fn synth_output_validates() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 4, 11);
    for sub in ["gt", "pred"] {
        let out = partpq(&["--spec", "cpp", "--format", "planar", "validate", p(&tmp.path().join(sub))]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    }
    let recipes = read_json(&tmp.path().join("recipes.json"));
    assert_eq!(recipes.as_array().unwrap().len(), 4);
}

#[test]
fn gt_against_itself_scores_full_marks() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 3, 5);
    let gt = tmp.path().join("gt");
    let report = tmp.path().join("r.json");
    let out = partpq(&["--spec", "cpp", "--format", "planar", "evaluate", "--gt", p(&gt), "--pred", p(&gt), "-o", p(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["partpq"]["aggregates"]["All"]["display"]["partpq"], "100.0");
    assert_eq!(r["pq"]["aggregates"]["All"]["display"]["pq"], "100.0");
    for c in r["partpq"]["classes"].as_array().unwrap() {
        if c["defined"] == true {
            assert_eq!(c["partpq"], 1.0, "{c}");
        }
    }
}

fn fold_reference(dir: &Path, spec: &DatasetSpec, mode: ReferenceMode) -> MetricBlock {
    let mut tally = ReferenceTally::new();
    for stem in stems(&dir.join("gt")) {
        let gt = read_label_map(&dir.join("gt").join(&stem), MapFormat::Planar, spec).unwrap();
        let pred = read_label_map(&dir.join("pred").join(&stem), MapFormat::Planar, spec).unwrap();
        reference_fold(&mut tally, &reference_tally(&gt, &pred, spec, mode));
    }
    reference_finalize(&tally, spec)
}

fn close(json: &Value, expected: Option<f64>) -> bool {
    match (json.as_f64(), expected) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-9,
        (None, None) => json.is_null(),
        _ => false,
    }
}

#[test]
fn report_matches_folded_reference() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 20, 100);
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    let report = tmp.path().join("r.json");
    let out = partpq(&[
        "--spec", "cpp", "--format", "planar", "evaluate", "--gt", p(&tmp.path().join("gt")), "--pred",
        p(&tmp.path().join("pred")), "-o", p(&report), "--workers", "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["images"], 20);
    let checks = [
        ("partpq", "part", fold_reference(tmp.path(), &spec, ReferenceMode::part_aware(&EvalOptions::default()))),
        ("pq", "", fold_reference(tmp.path(), &spec, ReferenceMode::Panoptic)),
    ];
    for (block, prefix, reference) in checks {
        let classes = r[block]["classes"].as_array().unwrap();
        assert_eq!(classes.len(), reference.classes.len());
        let mut defined = 0;
        for (c, e) in classes.iter().zip(&reference.classes) {
            assert_eq!(c["sid"], e.sid);
            assert_eq!((c["tp"].as_u64(), c["fp"].as_u64(), c["fn"].as_u64()), (Some(e.tp), Some(e.fp), Some(e.fn_)));
            assert!(close(&c[format!("{prefix}pq")], e.pq), "{block} {c} vs {e:?}");
            assert!(close(&c[format!("{prefix}sq")], e.sq), "{block} {c} vs {e:?}");
            assert!(close(&c[format!("{prefix}rq")], e.rq), "{block} {c} vs {e:?}");
            defined += usize::from(e.defined);
        }
        assert!(defined > 0);
        assert!(close(&r[block]["aggregates"]["All"][format!("{prefix}pq")], reference.aggregates.all.pq));
    }
}

#[test]
fn report_is_independent_of_workers() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 12, 40);
    let mut reports = Vec::new();
    for workers in ["1", "2", "5"] {
        let report = tmp.path().join(format!("r{workers}.json"));
        let out = partpq(&[
            "--spec", "cpp", "--format", "planar", "--workers", workers, "evaluate", "--gt",
            p(&tmp.path().join("gt")), "--pred", p(&tmp.path().join("pred")), "-o", p(&report),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        reports.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn unpaired_stems_are_all_listed() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 4, 9);
    let pred = tmp.path().join("pred");
    for stem in ["scene_0001", "scene_0003"] {
        std::fs::remove_file(pred.join(format!("{stem}_sem.png"))).unwrap();
    }
    let out = partpq(&["--spec", "cpp", "--format", "planar", "evaluate", "--gt", p(&tmp.path().join("gt")), "--pred", p(&pred)]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("scene_0001: missing in pred") && err.contains("scene_0003: missing in pred"), "{err}");
    assert!(!err.contains("scene_0000"), "{err}");
}

#[test]
fn manifest_restricts_stems() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 4, 21);
    let manifest = tmp.path().join("m.json");
    std::fs::write(&manifest, r#"["scene_0002"]"#).unwrap();
    let report = tmp.path().join("r.json");
    let gt = tmp.path().join("gt");
    let out = partpq(&[
        "--spec", "cpp", "--format", "planar", "--manifest", p(&manifest), "pq", "--gt", p(&gt), "--pred", p(&gt), "-o", p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["images"], 1);
    assert!(r.get("partpq").is_none());
    assert_eq!(r["pq"]["aggregates"]["All"]["pq"], 1.0);
}

#[test]
fn invalid_maps_are_reported_with_pixels() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("maps");
    std::fs::create_dir(&dir).unwrap();
    let good = LabelMap::filled(4, 4, LabelTriple::stuff(7)).unwrap();
    write_label_map(&dir.join("good"), MapFormat::Packed, &good).unwrap();
    // stuff class 7 with an instance id is illegal
    let mut bad = good.clone();
    bad.pixels_mut()[5] = LabelTriple { sid: 7, iid: Some(3), pid: 0 };
    write_label_map(&dir.join("bad"), MapFormat::Planar, &bad).unwrap();
    let out = partpq(&["--spec", "cpp", "--format", "planar", "validate", p(&dir)]);
    assert_eq!(code(&out), 2);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("pixel 5"), "{text}");
    let out = partpq(&["--spec", "cpp", "validate", p(&dir.join("good.png"))]);
    assert_eq!(code(&out), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let d = p(tmp.path());
    let cases: [&[&str]; 4] = [
        &["--spec", "cpp", "merge", "--panoptic", d, "--parts", d, "-o", d, "--strategy", "learned"],
        &["--spec", "cpp", "frobnicate"],
        &["evaluate", "--gt", d, "--pred", d],
        &["--spec", "cpp", "--format", "jpeg", "validate", d],
    ];
    for args in cases {
        assert_eq!(code(&partpq(args)), 1, "{args:?}");
    }
    assert_eq!(code(&partpq(&["--help"])), 0);
}

/// Panoptic maps, ungrouped part PNGs and the gt they came from.
fn merge_inputs(dir: &Path, spec: &DatasetSpec) -> Vec<LabelMap> {
    let pan = dir.join("pan");
    let parts = dir.join("parts");
    std::fs::create_dir_all(&pan).unwrap();
    std::fs::create_dir_all(&parts).unwrap();
    synth(&dir.join("synth"), 3, 77);
    let mut gts = Vec::new();
    for stem in stems(&dir.join("synth/gt")) {
        let gt = read_label_map(&dir.join("synth/gt").join(&stem), MapFormat::Planar, spec).unwrap();
        let mut panoptic = gt.clone();
        for t in panoptic.pixels_mut() {
            t.pid = 0;
        }
        write_label_map(&pan.join(&stem), MapFormat::Packed, &panoptic).unwrap();
        std::fs::write(parts.join(format!("{stem}.png")), PartPrediction::from_label_map(&gt).to_png().unwrap()).unwrap();
        gts.push(gt);
    }
    gts
}

#[test]
fn merges_agree_when_inputs_agree() {
    let tmp = TempDir::new().unwrap();
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    let gts = merge_inputs(tmp.path(), &spec);
    let mut outputs = Vec::new();
    for strategy in ["topdown", "conservative"] {
        let out_dir = tmp.path().join(strategy);
        let out = partpq(&[
            "--spec", "cpp", "merge", "--panoptic", p(&tmp.path().join("pan")), "--parts", p(&tmp.path().join("parts")),
            "--strategy", strategy, "-o", p(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(out_dir);
    }
    let names = stems(&tmp.path().join("synth/gt"));
    let top = list_maps(&outputs[0], MapFormat::Packed).unwrap();
    let cons = list_maps(&outputs[1], MapFormat::Packed).unwrap();
    assert_eq!(top.keys().collect::<Vec<_>>(), names.iter().collect::<Vec<_>>());
    for (stem, gt) in names.iter().zip(&gts) {
        assert_eq!(std::fs::read(&top[stem]).unwrap(), std::fs::read(&cons[stem]).unwrap(), "{stem}");
        let merged = read_label_map(&top[stem], MapFormat::Packed, &spec).unwrap();
        assert_eq!(&merged, gt, "{stem}");
    }
}

#[test]
fn grouped_parts_need_a_grouping() {
    let tmp = TempDir::new().unwrap();
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    merge_inputs(tmp.path(), &spec);
    let grouped = tmp.path().join("grouped");
    let out = partpq(&["--spec", "cpp", "remap", "--parts", p(&tmp.path().join("parts")), "--grouping", "grouped", "-o", p(&grouped)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let args = |g: Option<&str>| {
        let mut v = vec![
            "--spec".to_string(), "cpp".into(), "merge".into(), "--panoptic".into(), p(&tmp.path().join("pan")).into(),
            "--parts".into(), p(&grouped).into(), "-o".into(), p(&tmp.path().join("m")).into(),
        ];
        if let Some(g) = g {
            v.extend(["--grouping".into(), g.into()]);
        }
        v
    };
    let run = |v: Vec<String>| partpq(&v.iter().map(String::as_str).collect::<Vec<_>>());
    let out = run(args(None));
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pass a grouping"), "{}", stderr(&out));
    let out = run(args(Some("grouped")));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn identity_remap_copies_bytes() {
    let tmp = TempDir::new().unwrap();
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    merge_inputs(tmp.path(), &spec);
    let parts = tmp.path().join("parts");
    let out_dir = tmp.path().join("remapped");
    let out = partpq(&["--spec", "cpp", "remap", "--parts", p(&parts), "--grouping", "identity", "-o", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for entry in std::fs::read_dir(&parts).unwrap() {
        let entry = entry.unwrap();
        assert_eq!(std::fs::read(entry.path()).unwrap(), std::fs::read(out_dir.join(entry.file_name())).unwrap());
    }
}

#[test]
fn sig_of_identical_methods() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 3, 31);
    let (gt, pred) = (tmp.path().join("gt"), tmp.path().join("pred"));
    let report = tmp.path().join("sig.json");
    let out = partpq(&[
        "--spec", "cpp", "--format", "planar", "sig", "--a", p(&pred), "--b", p(&pred), "--gt", p(&gt), "-o", p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = read_json(&report);
    assert_eq!(r["a_to_b"]["msig"], 0.0);
    for c in r["a_to_b"]["classes"].as_array().unwrap() {
        assert!(c["sig"].is_null() || c["sig"] == 0.0, "{c}");
    }
    // a perfect B leaves nothing to recover
    let out = partpq(&["--spec", "cpp", "--format", "planar", "sig", "--a", p(&pred), "--b", p(&gt), "--gt", p(&gt), "-o", p(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(read_json(&report)["a_to_b"]["msig"].is_null());
}

#[test]
fn colorize_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), 2, 3);
    let gt = tmp.path().join("gt");
    let mut renders = Vec::new();
    for name in ["c1", "c2"] {
        let dir = tmp.path().join(name);
        let out = partpq(&["--spec", "cpp", "--format", "planar", "colorize", p(&gt), "-o", p(&dir)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        renders.push(std::fs::read(dir.join("scene_0000.png")).unwrap());
    }
    assert_eq!(renders[0], renders[1]);
    let single = tmp.path().join("one.png");
    let out = partpq(&["--spec", "cpp", "--format", "planar", "colorize", p(&gt.join("scene_0001")), "-o", p(&single)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(std::fs::read(&single).unwrap().starts_with(b"\x89PNG"));
}
