use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use partpq_core::codec::{list_maps, MapFormat};
use partpq_core::DatasetSpec;

/// Loads a spec file, or a builtin by name (`cpp`, `ppp`).
pub fn load_spec(arg: &str) -> Result<DatasetSpec> {
    match arg {
        "cpp" => Ok(DatasetSpec::cityscapes_panoptic_parts()),
        "ppp" => Ok(DatasetSpec::pascal_panoptic_parts()),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading spec {path}"))?;
            DatasetSpec::from_json(&text).with_context(|| format!("spec {path}"))
        }
    }
}

/// What kind of files an input directory holds.
#[derive(Debug, Clone, Copy)]
pub enum DirKind {
    Maps(MapFormat),
    /// Single-plane 16-bit part PNGs.
    Parts,
}

pub struct InputDir<'a> {
    pub role: &'a str,
    pub dir: &'a Path,
    pub kind: DirKind,
}

fn list_part_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".png") {
            out.insert(stem.to_string(), entry.path());
        }
    }
    Ok(out)
}

fn list(input: &InputDir) -> Result<BTreeMap<String, PathBuf>> {
    if !input.dir.is_dir() {
        bail!("{} directory {} does not exist", input.role, input.dir.display());
    }
    match input.kind {
        DirKind::Maps(format) => Ok(list_maps(input.dir, format)?),
        DirKind::Parts => list_part_pngs(input.dir),
    }
}

/// Reads a manifest: a JSON array of stems.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("manifest {} is not a JSON array of stems", path.display()))
}

/// One stem with a path per input directory, in input order.
pub struct Pair {
    pub stem: String,
    pub paths: Vec<PathBuf>,
}

/// Pairs files across directories by stem, sorted by stem. Every stem
/// missing from some directory is reported, not just the first.
pub fn pair(inputs: &[InputDir], manifest: Option<&Path>) -> Result<Vec<Pair>> {
    let listings: Vec<BTreeMap<String, PathBuf>> = inputs.iter().map(list).collect::<Result<_>>()?;
    let stems: BTreeSet<String> = match manifest {
        Some(path) => read_manifest(path)?.into_iter().collect(),
        None => listings.iter().flat_map(|l| l.keys().cloned()).collect(),
    };
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(stems.len());
    for stem in stems {
        let paths: Vec<Option<&PathBuf>> = listings.iter().map(|l| l.get(&stem)).collect();
        let absent: Vec<&str> = inputs.iter().zip(&paths).filter(|(_, p)| p.is_none()).map(|(i, _)| i.role).collect();
        if absent.is_empty() {
            pairs.push(Pair { stem, paths: paths.into_iter().flatten().cloned().collect() });
        } else {
            missing.push(format!("  {stem}: missing in {}", absent.join(", ")));
        }
    }
    if !missing.is_empty() {
        bail!("{} unpaired stem(s):\n{}", missing.len(), missing.join("\n"));
    }
    if pairs.is_empty() {
        bail!("no input files found");
    }
    Ok(pairs)
}
