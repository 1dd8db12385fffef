//! Replays the checked-in fuzz corpus through the same entry points as the
//! fuzz targets, so seeds stay meaningful without a fuzzing toolchain.

use std::path::PathBuf;

use partpq_core::codec::{decode_packed_png, decode_planar_pngs, decode_u32_sidecar, decode_uid, encode_u32_sidecar, split_uid};
use partpq_core::harness::{generate_scene, scene_is_valid, SceneRecipe};
use partpq_core::merge::PartPrediction;
use partpq_core::DatasetSpec;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn cpp() -> DatasetSpec {
    DatasetSpec::cityscapes_panoptic_parts()
}

#[test]
fn uid_seeds() {
    let spec = cpp();
    let mut decoded = 0;
    for (name, data) in seeds("uid") {
        let uid = u32::from_le_bytes(data[..4].try_into().unwrap());
        let _ = split_uid(uid);
        if decode_uid(uid, &spec).is_ok() {
            decoded += 1;
        } else {
            assert!(name == "uid-999" || name == "uid-2600100", "{name}");
        }
    }
    assert!(decoded >= 5);
}

#[test]
fn spec_seeds() {
    for (name, data) in seeds("spec_json") {
        let spec = DatasetSpec::from_json_bytes(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(DatasetSpec::from_json(&spec.to_json()).unwrap().scene_classes(), spec.scene_classes());
    }
}

#[test]
fn packed_png_seeds() {
    let spec = cpp();
    for (name, data) in seeds("packed_png") {
        let raster = decode_packed_png(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(raster.violations(&spec).is_empty(), "{name}");
        raster.to_map(&spec).unwrap();
    }
}

#[test]
fn sidecar_seeds() {
    let spec = cpp();
    for (name, data) in seeds("u32_sidecar") {
        let raster = decode_u32_sidecar(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_u32_sidecar(&raster), data);
        raster.to_map(&spec).unwrap();
    }
}

#[test]
fn planar_seeds() {
    let spec = cpp();
    for (name, data) in seeds("planar") {
        let a = u32::from_le_bytes(data[0..4].try_into().unwrap()) as usize;
        let b = u32::from_le_bytes(data[4..8].try_into().unwrap()) as usize;
        let rest = &data[8..];
        let (sem, tail) = rest.split_at(a);
        let (inst, part) = tail.split_at(b);
        let raster = decode_planar_pngs(sem, inst, part).unwrap_or_else(|e| panic!("{name}: {e}"));
        raster.to_map(&spec).unwrap();
    }
}

#[test]
fn part_png_seeds() {
    let spec = cpp();
    let grouping = spec.grouping("grouped").unwrap();
    for (name, data) in seeds("part_png") {
        let parsed = if name.starts_with("grouped") {
            PartPrediction::from_png(&data, &spec, Some(grouping))
        } else {
            PartPrediction::from_png(&data, &spec, None)
        };
        parsed.unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn recipe_seeds() {
    let spec = cpp();
    for (name, data) in seeds("recipe_json") {
        let recipe: SceneRecipe = serde_json::from_slice(&data).unwrap_or_else(|e| panic!("{name}: {e}"));
        recipe.validate(&spec).unwrap();
        let (gt, pred) = generate_scene(&recipe, &spec).unwrap();
        assert!(scene_is_valid(&gt, &pred, &spec), "{name}");
    }
}
