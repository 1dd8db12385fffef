#![no_main]

use libfuzzer_sys::fuzz_target;
use partpq_core::harness::{generate_scene, scene_is_valid, SceneRecipe};
use partpq_core::DatasetSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(mut recipe) = serde_json::from_slice::<SceneRecipe>(data) else { return };
    let spec = DatasetSpec::cityscapes_panoptic_parts();
    // keep scenes small enough for fuzzing throughput
    recipe.width = recipe.width.min(64);
    recipe.height = recipe.height.min(64);
    for e in &mut recipe.roster {
        e.instances = e.instances.min(8);
    }
    recipe.crowd_regions = recipe.crowd_regions.min(4);
    recipe.void_regions = recipe.void_regions.min(4);
    if recipe.validate(&spec).is_err() {
        return;
    }
    let (gt, pred) = generate_scene(&recipe, &spec).expect("validated recipe generates");
    assert!(scene_is_valid(&gt, &pred, &spec));
});
