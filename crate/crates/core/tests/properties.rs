use partpq_core::codec::{decode_packed_png, decode_planar_pngs, decode_u32_sidecar, decode_uid, encode_packed, encode_planar, encode_uid};
use partpq_core::harness::{generate_scene, random_merge_inputs, random_recipe, random_spec};
use partpq_core::label::validate_map;
use partpq_core::merge::{merge, Strategy as MergeStrategy};
use partpq_core::metrics::{evaluate_image, evaluate_pair, finalize, EvalOptions, ImageEval, PartUniverse};
use partpq_core::{DatasetSpec, LabelTriple};
use proptest::prelude::*;

fn cpp() -> DatasetSpec {
    DatasetSpec::cityscapes_panoptic_parts()
}

/// Valid labels of the builtin CPP spec.
fn cpp_triple() -> impl Strategy<Value = LabelTriple> {
    let spec = cpp();
    let classes: Vec<_> = spec.scene_classes().to_vec();
    (0..=classes.len(), 1u16..=999, any::<bool>(), any::<prop::sample::Index>()).prop_map(move |(ci, iid, crowd, part)| {
        let Some(c) = classes.get(ci) else { return LabelTriple::VOID };
        let pid = if c.parts.is_empty() || part.index(3) == 0 { 0 } else { c.parts[part.index(c.parts.len())].pid };
        match (c.is_things(), crowd) {
            (false, _) => LabelTriple { sid: c.sid, iid: None, pid },
            (true, true) => LabelTriple { sid: c.sid, iid: None, pid: 0 },
            (true, false) => LabelTriple { sid: c.sid, iid: Some(iid), pid },
        }
    })
}

fn scene_inputs() -> impl Strategy<Value = (u64, usize)> {
    (any::<u64>(), 2usize..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn uid_round_trip(t in cpp_triple()) {
        let spec = cpp();
        let uid = encode_uid(&t).unwrap();
        prop_assert_eq!(decode_uid(uid, &spec).unwrap(), t);
    }

    #[test]
    fn file_formats_round_trip((seed, classes) in scene_inputs()) {
        let spec = random_spec(seed, classes, 3);
        let recipe = random_recipe(seed, &spec, 4, 24, 0.5);
        let (gt, _) = generate_scene(&recipe, &spec).unwrap();
        let (ext, bytes) = encode_packed(&gt).unwrap();
        let raster = if ext == "u32" { decode_u32_sidecar(&bytes) } else { decode_packed_png(&bytes) }.unwrap();
        prop_assert_eq!(&raster.to_map(&spec).unwrap(), &gt);
        let [s, i, p] = encode_planar(&gt).unwrap();
        prop_assert_eq!(&decode_planar_pngs(&s, &i, &p).unwrap().to_map(&spec).unwrap(), &gt);
    }

    #[test]
    fn generated_scenes_are_valid((seed, classes) in scene_inputs()) {
        let spec = random_spec(seed, classes, 3);
        let (gt, pred) = generate_scene(&random_recipe(seed, &spec, 8, 48, 0.5), &spec).unwrap();
        prop_assert!(validate_map(&gt, &spec).is_empty());
        prop_assert!(validate_map(&pred, &spec).is_empty());
    }

    #[test]
    fn partpq_is_sq_times_rq((seed, classes) in scene_inputs(), all in any::<bool>()) {
        let spec = random_spec(seed, classes, 3);
        let (gt, pred) = generate_scene(&random_recipe(seed, &spec, 8, 48, 0.5), &spec).unwrap();
        let universe = if all { PartUniverse::All } else { PartUniverse::Present };
        let opts = EvalOptions { part_universe: universe, ..EvalOptions::default() };
        let block = finalize(&evaluate_pair(&gt, &pred, &spec, &opts).unwrap(), &spec);
        for c in &block.classes {
            if let (Some(pq), Some(sq), Some(rq)) = (c.pq, c.sq, c.rq) {
                prop_assert!((pq - sq * rq).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&pq) && (0.0..=1.0).contains(&sq) && (0.0..=1.0).contains(&rq));
            }
            prop_assert_eq!(c.defined, c.tp + c.fp + c.fn_ > 0);
        }
    }

    #[test]
    fn combine_is_an_associative_monoid(seeds in prop::array::uniform3(any::<u64>())) {
        let spec = cpp();
        let opts = EvalOptions::default();
        let evals: Vec<ImageEval> = seeds
            .iter()
            .map(|&s| {
                let (gt, pred) = generate_scene(&random_recipe(s, &spec, 8, 32, 0.5), &spec).unwrap();
                evaluate_image(&gt, &pred, &spec, &opts).unwrap()
            })
            .collect();
        let zero = ImageEval::zero(&spec);
        prop_assert_eq!(&zero.combine(&evals[0]).unwrap(), &evals[0]);
        prop_assert_eq!(&evals[0].combine(&zero).unwrap(), &evals[0]);
        let left = evals[0].combine(&evals[1]).unwrap().combine(&evals[2]).unwrap();
        let right = evals[0].combine(&evals[1].combine(&evals[2]).unwrap()).unwrap();
        // counts regroup exactly; float IOU sums only up to rounding
        prop_assert_eq!(&left.scene, &right.scene);
        prop_assert_eq!(&left.parts, &right.parts);
        for (a, b) in [(&left.partpq, &right.partpq), (&left.pq, &right.pq)] {
            for (x, y) in a.classes.iter().zip(&b.classes) {
                prop_assert_eq!((x.sid, x.tp, x.fp, x.fn_), (y.sid, y.tp, y.fp, y.fn_));
                prop_assert!((x.sum_iou - y.sum_iou).abs() < 1e-12);
            }
        }
        prop_assert_eq!(&evals[0].combine(&evals[1]).unwrap(), &evals[1].combine(&evals[0]).unwrap());
    }

    #[test]
    fn merge_invariants(seed in any::<u64>()) {
        let spec = cpp();
        let recipe = random_recipe(seed, &spec, 8, 48, 0.5);
        let (panoptic, parts) = random_merge_inputs(&recipe, &spec).unwrap();
        let td = merge(&panoptic, &parts, &spec, MergeStrategy::TopDown).unwrap();
        let cons = merge(&panoptic, &parts, &spec, MergeStrategy::Conservative).unwrap();
        prop_assert!(validate_map(&td, &spec).is_empty());
        prop_assert!(validate_map(&cons, &spec).is_empty());
        for ((p, t), c) in panoptic.pixels().iter().zip(td.pixels()).zip(cons.pixels()) {
            // top-down keeps the scene label; conservative keeps it or voids the pixel
            prop_assert_eq!((t.sid, t.iid), (p.sid, p.iid));
            prop_assert!(*c == LabelTriple::VOID || c == t);
            if !spec.has_parts(p.sid) {
                prop_assert_eq!(t, p);
                prop_assert_eq!(c, p);
            }
        }
    }

    #[test]
    fn perfect_predictions_score_one((seed, classes) in scene_inputs()) {
        let spec = random_spec(seed, classes, 3);
        let (gt, _) = generate_scene(&random_recipe(seed, &spec, 8, 48, 0.5), &spec).unwrap();
        let block = finalize(&evaluate_pair(&gt, &gt, &spec, &EvalOptions::default()).unwrap(), &spec);
        for c in block.classes.iter().filter(|c| c.defined) {
            prop_assert_eq!(c.pq, Some(1.0));
            prop_assert_eq!(c.fp + c.fn_, 0);
        }
    }
}
