use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use partpq_core::codec::{encode_rgb8_png, list_maps, read_raster, write_label_map, MapFormat};
use partpq_core::dataset::evaluate_dataset;
use partpq_core::harness::{generate_scene, random_recipe, SceneRecipe};
use partpq_core::label::validate_map;
use partpq_core::merge::{merge, remap_parts, PartPrediction, RemapDirection};
use partpq_core::metrics::{scene_from_parts, scene_labels, finalize_sig, EvalOptions, SigAccumulator};
use partpq_core::report::{pq_report_json, sig_json, sig_table, summary_table, write_report, EvalReport, ReportFormat};
use partpq_core::{DatasetSpec, LabelMap};
use serde_json::json;

use crate::inputs::{load_spec, pair, DirKind, InputDir, Pair};
use crate::render::colorize;
use crate::{Cli, Command, EXIT_DATA};

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<u8, Failure>;

struct Common {
    spec: DatasetSpec,
    format: MapFormat,
    workers: usize,
    manifest: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Outcome {
    let Some(spec_arg) = cli.spec.as_deref() else {
        return Err(Failure::Usage("--spec is required (a JSON file, `cpp` or `ppp`)".into()));
    };
    if cli.workers == Some(0) {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    let common = Common {
        spec: load_spec(spec_arg)?,
        format: cli.format,
        workers: cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        manifest: cli.manifest,
    };
    match cli.command {
        Command::Evaluate(a) => evaluate(&common, &a.pair, a.part_universe.into(), false),
        Command::Pq(a) => evaluate(&common, &a.pair, Default::default(), true),
        Command::Merge(a) => merge_cmd(&common, a),
        Command::Remap(a) => remap(&common, a),
        Command::Sig(a) => sig_cmd(&common, a),
        Command::Validate(a) => validate(&common, a),
        Command::Synth(a) => synth(&common, a),
        Command::Colorize(a) => colorize_cmd(&common, a),
    }
}

fn per_stem_failures(failures: Vec<(String, String)>) -> Failure {
    let mut msg = format!("{} image(s) failed:", failures.len());
    for (stem, e) in failures {
        let _ = write!(msg, "\n  {stem}: {e}");
    }
    Failure::Data(anyhow!(msg))
}

/// Reads a map, listing up to `limit` offending pixels when it is invalid.
fn load_map(path: &Path, format: MapFormat, spec: &DatasetSpec, limit: usize) -> Result<LabelMap, String> {
    let raster = read_raster(path, format).map_err(|e| e.to_string())?;
    let violations = raster.violations(spec);
    if !violations.is_empty() {
        let mut msg = format!("{} invalid pixel(s)", violations.len());
        for v in violations.iter().take(limit) {
            let _ = write!(msg, "; {v}");
        }
        return Err(msg);
    }
    raster.to_map(spec).map_err(|e| e.to_string())
}

fn evaluate(c: &Common, a: &crate::PairArgs, universe: partpq_core::metrics::PartUniverse, pq_only: bool) -> Outcome {
    let pairs = pair(
        &[
            InputDir { role: "gt", dir: &a.gt, kind: DirKind::Maps(c.format) },
            InputDir { role: "pred", dir: &a.pred, kind: DirKind::Maps(c.format) },
        ],
        c.manifest.as_deref(),
    )?;
    let options = EvalOptions { part_universe: universe, ..EvalOptions::default() };
    let stems: Vec<String> = pairs.iter().map(|p| p.stem.clone()).collect();
    let by_stem: std::collections::HashMap<&str, &Pair> = pairs.iter().map(|p| (p.stem.as_str(), p)).collect();
    let load = |stem: &str| -> Result<(LabelMap, LabelMap), String> {
        let p = by_stem[stem];
        let gt = load_map(&p.paths[0], c.format, &c.spec, 5).map_err(|e| format!("gt: {e}"))?;
        let pred = load_map(&p.paths[1], c.format, &c.spec, 5).map_err(|e| format!("pred: {e}"))?;
        Ok((gt, pred))
    };
    let eval = evaluate_dataset(&stems, load, &c.spec, &options, c.workers).map_err(|failures| {
        per_stem_failures(failures.into_iter().map(|(s, e)| (s, e.to_string())).collect())
    })?;
    let report = EvalReport::new(&eval, &c.spec, &options);
    if pq_only {
        if let Some(out) = &a.output {
            std::fs::write(out, pq_report_json(&report)).with_context(|| format!("writing {}", out.display()))?;
        }
        print!("{}", pq_table(&report, a.per_class));
    } else {
        if let Some(out) = &a.output {
            write_report(&report, out, ReportFormat::for_path(out)).with_context(|| format!("writing {}", out.display()))?;
        }
        print!("{}", summary_table(&report, a.per_class));
    }
    Ok(0)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.1}", v * 100.0))
}

fn pq_table(r: &EvalReport, per_class: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}", "", "PQ", "SQ", "RQ");
    for (name, agg) in r.pq.aggregates.rows() {
        let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}", name, pct(agg.pq), pct(agg.sq), pct(agg.rq));
    }
    if per_class {
        let _ = writeln!(out);
        for c in &r.pq.classes {
            let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}", c.name, pct(c.pq), pct(c.sq), pct(c.rq));
        }
    }
    out
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn merge_cmd(c: &Common, a: crate::MergeArgs) -> Outcome {
    let grouping = match &a.grouping {
        Some(name) => Some(c.spec.grouping(name)?),
        None => None,
    };
    let pairs = pair(
        &[
            InputDir { role: "panoptic", dir: &a.panoptic, kind: DirKind::Maps(c.format) },
            InputDir { role: "parts", dir: &a.parts, kind: DirKind::Parts },
        ],
        c.manifest.as_deref(),
    )?;
    create_dir(&a.output)?;
    let mut failures = Vec::new();
    for p in &pairs {
        let result = (|| -> Result<(), String> {
            let panoptic = load_map(&p.paths[0], c.format, &c.spec, 5).map_err(|e| format!("panoptic: {e}"))?;
            let bytes = std::fs::read(&p.paths[1]).map_err(|e| format!("{}: {e}", p.paths[1].display()))?;
            let parts = PartPrediction::from_png(&bytes, &c.spec, grouping).map_err(|e| format!("parts: {e}"))?;
            let merged = merge(&panoptic, &parts, &c.spec, a.strategy.into()).map_err(|e| e.to_string())?;
            if let Some(v) = validate_map(&merged, &c.spec).first() {
                return Err(format!("merged map is invalid: {v}"));
            }
            write_label_map(&a.output.join(&p.stem), c.format, &merged).map_err(|e| e.to_string())?;
            Ok(())
        })();
        if let Err(e) = result {
            failures.push((p.stem.clone(), e));
        }
    }
    if !failures.is_empty() {
        return Err(per_stem_failures(failures));
    }
    log::info!("merged {} image(s) into {}", pairs.len(), a.output.display());
    Ok(0)
}

fn remap(c: &Common, a: crate::RemapArgs) -> Outcome {
    let grouping = c.spec.grouping(&a.grouping)?;
    let pairs = pair(&[InputDir { role: "parts", dir: &a.parts, kind: DirKind::Parts }], c.manifest.as_deref())?;
    create_dir(&a.output)?;
    let mut failures = Vec::new();
    for p in &pairs {
        let src = &p.paths[0];
        let dst = a.output.join(format!("{}.png", p.stem));
        let result = (|| -> Result<(), String> {
            let bytes = std::fs::read(src).map_err(|e| format!("{}: {e}", src.display()))?;
            let pred = PartPrediction::from_png(&bytes, &c.spec, None).map_err(|e| e.to_string())?;
            // an identity grouping keeps the file as it is, byte for byte
            let out = if grouping.is_identity() {
                bytes
            } else {
                remap_parts(&pred, grouping, RemapDirection::Group)
                    .and_then(|r| r.to_png())
                    .map_err(|e| e.to_string())?
            };
            std::fs::write(&dst, out).map_err(|e| format!("{}: {e}", dst.display()))
        })();
        if let Err(e) = result {
            failures.push((p.stem.clone(), e));
        }
    }
    if !failures.is_empty() {
        return Err(per_stem_failures(failures));
    }
    Ok(0)
}

fn scene_input(path: &Path, kind: crate::KindArg, c: &Common) -> Result<Vec<u16>, String> {
    match kind {
        crate::KindArg::Panoptic => load_map(path, c.format, &c.spec, 5).map(|m| scene_labels(&m)),
        crate::KindArg::Parts => {
            let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let parts = PartPrediction::from_png(&bytes, &c.spec, None).map_err(|e| e.to_string())?;
            scene_from_parts(&parts).map_err(|e| e.to_string())
        }
    }
}

fn kind_dir(kind: crate::KindArg, format: MapFormat) -> DirKind {
    match kind {
        crate::KindArg::Panoptic => DirKind::Maps(format),
        crate::KindArg::Parts => DirKind::Parts,
    }
}

fn sig_cmd(c: &Common, a: crate::SigArgs) -> Outcome {
    let pairs = pair(
        &[
            InputDir { role: "a", dir: &a.a, kind: kind_dir(a.a_kind, c.format) },
            InputDir { role: "b", dir: &a.b, kind: kind_dir(a.b_kind, c.format) },
            InputDir { role: "gt", dir: &a.gt, kind: DirKind::Maps(c.format) },
        ],
        c.manifest.as_deref(),
    )?;
    let mut acc = SigAccumulator::zero(&c.spec);
    let mut failures = Vec::new();
    for p in &pairs {
        let result = (|| -> Result<(), String> {
            let sa = scene_input(&p.paths[0], a.a_kind, c).map_err(|e| format!("a: {e}"))?;
            let sb = scene_input(&p.paths[1], a.b_kind, c).map_err(|e| format!("b: {e}"))?;
            let gt = scene_input(&p.paths[2], crate::KindArg::Panoptic, c).map_err(|e| format!("gt: {e}"))?;
            acc.add(&sa, &sb, &gt, &c.spec).map_err(|e| e.to_string())
        })();
        if let Err(e) = result {
            failures.push((p.stem.clone(), e));
        }
    }
    if !failures.is_empty() {
        return Err(per_stem_failures(failures));
    }
    let report = finalize_sig(&acc, &c.spec);
    if let Some(out) = &a.output {
        std::fs::write(out, sig_json(&report)).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", sig_table(&report));
    Ok(0)
}

fn validate(c: &Common, a: crate::ValidateArgs) -> Outcome {
    let mut files = Vec::new();
    for path in &a.paths {
        if path.is_dir() {
            files.extend(list_maps(path, c.format)?.into_values());
        } else {
            files.push(path.clone());
        }
    }
    let mut bad = 0usize;
    for file in &files {
        match read_raster(file, c.format) {
            Err(e) => {
                bad += 1;
                println!("{}: {e}", file.display());
            }
            Ok(raster) => {
                let violations = raster.violations(&c.spec);
                if violations.is_empty() {
                    log::info!("{}: ok", file.display());
                    continue;
                }
                bad += 1;
                println!("{}: {} violation(s)", file.display(), violations.len());
                for v in violations.iter().take(a.limit) {
                    println!("  {v}");
                }
            }
        }
    }
    println!("{} of {} file(s) valid", files.len() - bad, files.len());
    Ok(if bad == 0 { 0 } else { EXIT_DATA })
}

fn synth(c: &Common, a: crate::SynthArgs) -> Outcome {
    let recipes: Vec<SceneRecipe> = match &a.recipes {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{} is not a JSON array of recipes", path.display()))?
        }
        None => {
            if a.min_size < 4 || a.min_size > a.max_size {
                return Err(Failure::Usage("sizes must satisfy 4 <= --min-size <= --max-size".into()));
            }
            if !(0.0..=1.0).contains(&a.max_rate) {
                return Err(Failure::Usage("--max-rate must lie in [0, 1]".into()));
            }
            (0..a.count as u64)
                .map(|i| random_recipe(a.seed.wrapping_add(i), &c.spec, a.min_size, a.max_size, a.max_rate))
                .collect()
        }
    };
    let (gt_dir, pred_dir) = (a.output.join("gt"), a.output.join("pred"));
    create_dir(&gt_dir)?;
    create_dir(&pred_dir)?;
    let mut index = Vec::with_capacity(recipes.len());
    for (i, recipe) in recipes.iter().enumerate() {
        let stem = format!("scene_{i:04}");
        recipe.validate(&c.spec).with_context(|| format!("recipe {i}"))?;
        let (gt, pred) = generate_scene(recipe, &c.spec).with_context(|| format!("recipe {i}"))?;
        write_label_map(&gt_dir.join(&stem), MapFormat::Planar, &gt)?;
        write_label_map(&pred_dir.join(&stem), MapFormat::Planar, &pred)?;
        index.push(json!({ "stem": stem, "recipe": recipe }));
    }
    let path = a.output.join("recipes.json");
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} scene pair(s) to {}", recipes.len(), a.output.display());
    Ok(0)
}

fn render_file(input: &Path, output: &Path, c: &Common) -> anyhow::Result<()> {
    let map = load_map(input, c.format, &c.spec, 5).map_err(|e| anyhow!("{}: {e}", input.display()))?;
    let png = encode_rgb8_png(map.width(), map.height(), &colorize(&map))?;
    std::fs::write(output, png).with_context(|| format!("writing {}", output.display()))
}

fn colorize_cmd(c: &Common, a: crate::ColorizeArgs) -> Outcome {
    if !a.input.is_dir() {
        render_file(&a.input, &a.output, c)?;
        return Ok(0);
    }
    create_dir(&a.output)?;
    let maps = list_maps(&a.input, c.format)?;
    if maps.is_empty() {
        return Err(anyhow!("no maps found in {}", a.input.display()).into());
    }
    for (stem, path) in maps {
        render_file(&path, &a.output.join(format!("{stem}.png")), c)?;
    }
    Ok(0)
}
